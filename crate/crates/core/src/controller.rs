//! Receding-horizon charge feedback.
//!
//! Each sample: build the relaxed horizon problem around the measured state,
//! solve it (warm-started from the previous sample), round the first lifted
//! matrix to a charge vector, saturate, and hold the charges until the next
//! sample.

use nalgebra::DVector;

use crate::dynamics::{charge_products, DiscreteModel};
use crate::error::{Error, Result};
use crate::horizon::{build_horizon_problem, MpcParams};
use crate::recovery::recover;
use crate::solver::{warm_start_compatible, AdmmSolver, ConicProblem, SolveResult, SolveStatus, SolverSettings};

/// A sample at which no usable solution was available and zero charges were
/// applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub k: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub time: f64,
    /// Packed measured state `[xi; nu]`.
    pub measured: DVector<f64>,
    pub charges: DVector<f64>,
    /// Recomputed from `charges`, never taken from the solver.
    pub products: DVector<f64>,
    pub rank_ratio: f64,
    pub solver_status: SolveStatus,
    pub iterations: usize,
    pub solve_time: f64,
    pub saturated: bool,
    pub objective: f64,
}

/// Mutable state carried between samples.
#[derive(Debug, Clone, Default)]
pub struct ControllerState {
    pub previous: Option<SolveResult>,
    pub previous_charges: Option<DVector<f64>>,
    pub step: usize,
    pub faults: Vec<Fault>,
    solver: Option<AdmmSolver>,
}

/// Returns `prev` when its cone structure and dimensions match `prob`.
pub fn warm_start_payload<'a>(prev: &'a SolveResult, prob: &ConicProblem) -> Option<&'a SolveResult> {
    warm_start_compatible(prev, prob).then_some(prev)
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Computes the charges to hold over `[k h, (k+1) h)`.
    ///
    /// A solver failure is not an error: zero charges are applied, the fault
    /// is logged and the previous warm start is kept.
    pub fn step(
        &mut self,
        measured: &DVector<f64>,
        model: &DiscreteModel,
        params: &MpcParams,
        settings: &SolverSettings,
        saturation_limit: f64,
    ) -> Result<StepRecord> {
        if !(saturation_limit > 0.0) {
            return Err(Error::Config("saturation limit must be positive".into()));
        }
        let k = self.step;
        let hp = build_horizon_problem(measured, model, params)?;
        let prob = hp.to_conic();
        let ns = hp.layout().num_spacecraft;

        let reuse = self
            .solver
            .as_ref()
            .is_some_and(|s| s.settings() == settings && s.problem().same_structure(&prob));
        if reuse {
            self.solver.as_mut().unwrap().update_rhs(&prob.b)?;
        } else {
            self.solver = Some(AdmmSolver::new(prob.clone(), settings.clone())?);
        }
        let solver = self.solver.as_mut().unwrap();
        let warm = if settings.warm_start {
            self.previous.as_ref().and_then(|p| warm_start_payload(p, &prob))
        } else {
            None
        };

        let outcome = solver.solve(warm);
        let (charges, rank_ratio, saturated, status, iterations, solve_time, objective) = match outcome {
            Ok(res) if res.status == SolveStatus::Optimal => {
                let traj = hp.extract(&res.x, &res.s)?;
                let rec = recover(&traj.lifted[0], self.previous_charges.as_ref())?.saturated(saturation_limit);
                let row = (
                    rec.charges,
                    rec.rank_ratio,
                    rec.saturated,
                    res.status,
                    res.iterations,
                    res.solve_time,
                    res.objective,
                );
                self.previous = Some(res);
                row
            }
            Ok(res) => {
                self.faults.push(Fault {
                    k,
                    reason: format!("solver stopped with status {}", res.status.as_str()),
                });
                (DVector::zeros(ns), 0.0, false, res.status, res.iterations, res.solve_time, res.objective)
            }
            Err(e) => {
                self.faults.push(Fault { k, reason: e.to_string() });
                (DVector::zeros(ns), 0.0, false, SolveStatus::MaxIters, 0, 0.0, f64::NAN)
            }
        };
        self.previous_charges = Some(charges.clone());
        self.step += 1;
        Ok(StepRecord {
            k,
            time: k as f64 * model.sample_period,
            measured: measured.clone(),
            products: charge_products(&charges),
            charges,
            rank_ratio,
            solver_status: status,
            iterations,
            solve_time,
            saturated,
            objective,
        })
    }
}
