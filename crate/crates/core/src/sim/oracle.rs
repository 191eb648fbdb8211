//! Exhaustive-grid reference for small horizon problems.
//!
//! The nonconvex problem over the charges themselves is solved by brute force
//! on a uniform charge grid and compared against the relaxation. A relaxation
//! of a minimization can only undercut the true optimum, so the relaxed
//! objective (without trace penalty) must not exceed the grid optimum.

use nalgebra::DVector;

use crate::dynamics::{charge_products, DiscreteModel};
use crate::error::{check_dim, Error, Result};
use crate::horizon::{build_horizon_problem, trajectory_cost, MpcParams, Trajectory};
use crate::recovery::recover;
use crate::solver::{solve, SolveStatus, SolverSettings};

/// Uniform grid of `points` values on `[-limit, limit]` for every charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeGrid {
    pub points: usize,
    pub limit: f64,
}

impl ChargeGrid {
    pub const MIN_POINTS: usize = 21;

    fn value(&self, i: usize) -> f64 {
        -self.limit + 2.0 * self.limit * i as f64 / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Best charges per horizon stage.
    pub charges: Vec<DVector<f64>>,
    pub cost: f64,
    pub evaluated: usize,
    pub feasible: usize,
}

/// Minimizes the horizon cost without trace penalty over every grid point of
/// the `Ns * N` charges, rolling out the linear model and skipping points
/// that violate a state or product bound.
pub fn brute_force_qcqp(
    measured: &DVector<f64>,
    model: &DiscreteModel,
    params: &MpcParams,
    grid: ChargeGrid,
) -> Result<OracleResult> {
    let nx = model.state_dim();
    let ns = nx / 2 + 1;
    let n = params.horizon;
    check_dim("measured state", nx, measured.len())?;
    if ns > 3 || n > 2 {
        return Err(Error::OracleTooLarge(format!(
            "{ns} spacecraft over {n} stages (at most 3 and 2)"
        )));
    }
    if grid.points < ChargeGrid::MIN_POINTS || !(grid.limit > 0.0 && grid.limit.is_finite()) {
        return Err(Error::OracleTooLarge(format!(
            "grid needs at least {} points and a positive limit",
            ChargeGrid::MIN_POINTS
        )));
    }
    params.validate(ns)?;
    let mut cost_params = params.clone();
    cost_params.trace_weight = 0.0;

    let dims = ns * n;
    let mut idx = vec![0usize; dims];
    let mut best: Option<(f64, Vec<DVector<f64>>)> = None;
    let (mut evaluated, mut feasible) = (0, 0);
    loop {
        let charges: Vec<DVector<f64>> = (0..n)
            .map(|j| DVector::from_fn(ns, |i, _| grid.value(idx[j * ns + i])))
            .collect();
        evaluated += 1;
        let traj = Trajectory::from_charges(measured, model, &charges);
        if within_bounds(params, &traj) {
            feasible += 1;
            let c = trajectory_cost(&cost_params, &traj);
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, charges));
            }
        }
        // odometer increment
        let mut d = 0;
        while d < dims {
            idx[d] += 1;
            if idx[d] < grid.points {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dims {
            break;
        }
    }
    let (cost, charges) =
        best.ok_or_else(|| Error::Config("no grid point satisfies the bounds".into()))?;
    Ok(OracleResult { charges, cost, evaluated, feasible })
}

fn within_bounds(params: &MpcParams, traj: &Trajectory) -> bool {
    let inside = |v: &DVector<f64>, b: &Option<(DVector<f64>, DVector<f64>)>| {
        b.as_ref()
            .is_none_or(|(lo, hi)| v.iter().zip(lo.iter().zip(hi.iter())).all(|(x, (l, h))| l <= x && x <= h))
    };
    traj.states.iter().all(|x| inside(x, &params.state_bounds))
        && traj.inputs.iter().all(|u| inside(u, &params.product_bounds))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    /// Relaxed optimum with zero trace penalty.
    pub sdr_objective: f64,
    pub grid: OracleResult,
    /// Charges rounded from a relaxation solved with `rounding_trace_weight`.
    pub rounded_charges: Vec<DVector<f64>>,
    /// Cost of the rounded charges without trace penalty.
    pub rounded_cost: f64,
    pub rounded_feasible: bool,
}

impl OracleComparison {
    pub fn lower_bound_holds(&self, tol: f64) -> bool {
        self.sdr_objective <= self.grid.cost + tol
    }
}

/// Settings for reference-quality relaxation solves.
pub fn oracle_solver_settings() -> SolverSettings {
    SolverSettings {
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        max_iters: 200_000,
        ..SolverSettings::default()
    }
}

/// Solves the grid problem once and the relaxation twice: without trace
/// penalty for the bound, and with `rounding_trace_weight` to obtain a near
/// rank-one solution to round.
///
/// Without a trace penalty the diagonal of each lifted matrix is free beyond
/// positive semidefiniteness, so its dominant eigenvector need not reproduce
/// the optimal products; a small penalty selects the minimal-trace, rank-one
/// completion.
pub fn compare_with_sdr(
    measured: &DVector<f64>,
    model: &DiscreteModel,
    params: &MpcParams,
    grid: ChargeGrid,
    rounding_trace_weight: f64,
) -> Result<OracleComparison> {
    let grid_result = brute_force_qcqp(measured, model, params, grid)?;
    let settings = oracle_solver_settings();

    let mut bound_params = params.clone();
    bound_params.trace_weight = 0.0;
    let hp = build_horizon_problem(measured, model, &bound_params)?;
    let relaxed = solve(&hp.to_conic(), &settings, None)?;
    if relaxed.status != SolveStatus::Optimal {
        return Err(Error::Config(format!("relaxation solve ended with {}", relaxed.status.as_str())));
    }

    let mut round_params = params.clone();
    round_params.trace_weight = rounding_trace_weight;
    let hp_r = build_horizon_problem(measured, model, &round_params)?;
    let res = solve(&hp_r.to_conic(), &settings, None)?;
    let traj = hp_r.extract(&res.x, &res.s)?;
    let mut prev: Option<DVector<f64>> = None;
    let mut rounded = Vec::with_capacity(traj.lifted.len());
    for q in &traj.lifted {
        let r = recover(q, prev.as_ref())?;
        prev = Some(r.charges.clone());
        rounded.push(r.charges);
    }
    let rolled = Trajectory::from_charges(measured, model, &rounded);
    let rounded_cost = trajectory_cost(&bound_params, &rolled);
    Ok(OracleComparison {
        sdr_objective: relaxed.objective,
        grid: grid_result,
        rounded_feasible: within_bounds(params, &rolled),
        rounded_charges: rounded,
        rounded_cost,
    })
}

/// True when some grid point makes all three pairwise products of three
/// charges strictly negative. Used to illustrate that such a sign pattern
/// cannot be actuated.
pub fn grid_has_all_negative_products(grid: ChargeGrid) -> bool {
    let g = |i| grid.value(i);
    (0..grid.points).any(|a| {
        (0..grid.points).any(|b| {
            (0..grid.points).any(|c| {
                let u = charge_products(&DVector::from_vec(vec![g(a), g(b), g(c)]));
                u.iter().all(|&v| v < 0.0)
            })
        })
    })
}
