//! Finite-horizon semidefinite relaxation.
//!
//! The charge-product coupling `u_l = q_i q_j` is written as
//! `u_l = Tr(L_(i,j) q q')` with `L_(i,j) = (E_ij + E_ji) / 2`, then lifted to
//! `u_l = Tr(L_(i,j) Q)` with `Q >= 0` and the rank-one requirement dropped.
//! A trace penalty on every `Q` biases the relaxation toward rank one.
//!
//! Conic variable layout, stage by stage for `j = 0..N-1`:
//! `[u[j] (m) | svec(Q[j]) (Ns(Ns+1)/2) | X[j+1] (2(Ns-1))]`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{charge_products, DiscreteModel, FormationConfig, PairIndex};
use crate::error::{check_dim, Error, Result};
use crate::solver::cones::{smat, svec, svec_index, svec_len, ConeSpec};
use crate::solver::sparse::CscMatrix;
use crate::solver::ConicProblem;

/// Tuning of the receding-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcParams {
    pub horizon: usize,
    /// Weight on `X - X_des`, size `2(Ns-1)`.
    pub state_weight: DMatrix<f64>,
    /// Weight on the charge products, size `m`.
    pub input_weight: DMatrix<f64>,
    /// Weight on consecutive charge-product differences, size `m`.
    pub smoothing_weight: DMatrix<f64>,
    pub trace_weight: f64,
    pub xi_des: DVector<f64>,
    pub state_bounds: Option<(DVector<f64>, DVector<f64>)>,
    pub product_bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl MpcParams {
    pub fn new(
        horizon: usize,
        xi_des: DVector<f64>,
        state_weight: DMatrix<f64>,
        input_weight: DMatrix<f64>,
        smoothing_weight: DMatrix<f64>,
        trace_weight: f64,
    ) -> Self {
        Self {
            horizon,
            state_weight,
            input_weight,
            smoothing_weight,
            trace_weight,
            xi_des,
            state_bounds: None,
            product_bounds: None,
        }
    }

    /// Copies the state and charge-product limits of `cfg`. Infinite limits
    /// generate no constraints.
    pub fn with_bounds_from(mut self, cfg: &FormationConfig) -> Self {
        let any_finite = |v: &DVector<f64>| v.iter().any(|x| x.is_finite());
        self.state_bounds = (any_finite(&cfg.state_min) || any_finite(&cfg.state_max))
            .then(|| (cfg.state_min.clone(), cfg.state_max.clone()));
        self.product_bounds = match (&cfg.product_min, &cfg.product_max) {
            (Some(lo), Some(hi)) => Some((lo.clone(), hi.clone())),
            _ => None,
        };
        self
    }

    pub fn desired_state(&self) -> DVector<f64> {
        let d = self.xi_des.len();
        DVector::from_fn(2 * d, |k, _| if k < d { self.xi_des[k] } else { 0.0 })
    }

    pub fn validate(&self, num_spacecraft: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.trace_weight >= 0.0 && self.trace_weight.is_finite()) {
            return Err(Error::Config("trace weight must be nonnegative".into()));
        }
        let nx = 2 * (num_spacecraft - 1);
        let m = crate::dynamics::pair_count(num_spacecraft);
        check_dim("desired relative positions", num_spacecraft - 1, self.xi_des.len())?;
        check_weight("state weight", &self.state_weight, nx)?;
        check_weight("input weight", &self.input_weight, m)?;
        check_weight("smoothing weight", &self.smoothing_weight, m)?;
        if let Some((lo, hi)) = &self.state_bounds {
            check_dim("state lower bound", nx, lo.len())?;
            check_dim("state upper bound", nx, hi.len())?;
        }
        if let Some((lo, hi)) = &self.product_bounds {
            check_dim("product lower bound", m, lo.len())?;
            check_dim("product upper bound", m, hi.len())?;
        }
        Ok(())
    }
}

fn check_weight(name: &'static str, w: &DMatrix<f64>, n: usize) -> Result<()> {
    check_dim(name, n, w.nrows())?;
    check_dim(name, n, w.ncols())?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    let scale = w.amax().max(1.0);
    if (w - w.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Config(format!("{name} is not symmetric")));
    }
    let min_eig = w.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 {
        return Err(Error::Config(format!(
            "{name} is not positive semidefinite (eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// `L_(i,j) = (E_ij + E_ji) / 2` for zero-based `i < j`.
pub fn pair_matrix(i: usize, j: usize, num_spacecraft: usize) -> Result<DMatrix<f64>> {
    if !(i < j && j < num_spacecraft) {
        return Err(Error::PairOutOfRange {
            i,
            j,
            num_spacecraft,
        });
    }
    let mut l = DMatrix::zeros(num_spacecraft, num_spacecraft);
    l[(i, j)] = 0.5;
    l[(j, i)] = 0.5;
    Ok(l)
}

/// A candidate solution of the horizon problem: predicted states
/// `X[1..=N]`, charge products `u[0..N]` and lifted matrices `Q[0..N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub lifted: Vec<DMatrix<f64>>,
}

impl Trajectory {
    /// Rank-one lift of a charge sequence rolled out through `model`.
    pub fn from_charges(initial: &DVector<f64>, model: &DiscreteModel, charges: &[DVector<f64>]) -> Self {
        let mut states = Vec::with_capacity(charges.len());
        let mut inputs = Vec::with_capacity(charges.len());
        let mut lifted = Vec::with_capacity(charges.len());
        let mut x = initial.clone();
        for q in charges {
            let u = charge_products(q);
            x = model.predict(&x, &u);
            states.push(x.clone());
            inputs.push(u);
            lifted.push(q * q.transpose());
        }
        Self { states, inputs, lifted }
    }
}

/// Cost of a trajectory: tracking and input terms for `j = 1..=N`,
/// smoothing between consecutive inputs, and the trace penalty.
pub fn trajectory_cost(params: &MpcParams, traj: &Trajectory) -> f64 {
    let xd = params.desired_state();
    let tracking: f64 = traj
        .states
        .iter()
        .map(|x| {
            let e = x - &xd;
            e.dot(&(&params.state_weight * &e))
        })
        .sum();
    let effort: f64 = traj
        .inputs
        .iter()
        .map(|u| u.dot(&(&params.input_weight * u)))
        .sum();
    let smoothing: f64 = traj
        .inputs
        .windows(2)
        .map(|w| {
            let du = &w[1] - &w[0];
            du.dot(&(&params.smoothing_weight * &du))
        })
        .sum();
    let trace: f64 = traj.lifted.iter().map(|q| q.trace()).sum();
    tracking + effort + smoothing + params.trace_weight * trace
}

/// Row and column bookkeeping of the conic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub num_spacecraft: usize,
    pub state_dim: usize,
    pub num_pairs: usize,
    pub lifted_len: usize,
    pub dynamics_rows: usize,
    pub coupling_rows: usize,
    pub bound_rows: usize,
}

impl Layout {
    pub fn stage_len(&self) -> usize {
        self.num_pairs + self.lifted_len + self.state_dim
    }

    pub fn num_vars(&self) -> usize {
        self.horizon * self.stage_len()
    }

    /// Offset of `u[j]`.
    pub fn input(&self, j: usize) -> usize {
        j * self.stage_len()
    }

    /// Offset of `svec(Q[j])`.
    pub fn lifted(&self, j: usize) -> usize {
        j * self.stage_len() + self.num_pairs
    }

    /// Offset of `X[j]`, `j >= 1`.
    pub fn state(&self, j: usize) -> usize {
        debug_assert!(j >= 1);
        (j - 1) * self.stage_len() + self.num_pairs + self.lifted_len
    }

    pub fn psd_blocks(&self) -> usize {
        self.horizon
    }
}

/// The relaxed horizon problem for one measured state.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonProblem {
    pub initial_state: DVector<f64>,
    pub model: DiscreteModel,
    pub params: MpcParams,
    pub pairs: PairIndex,
    layout: Layout,
    bound_rows: Vec<BoundRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BoundRow {
    /// `sign * z[col] <= rhs`
    Le { col: usize, sign: f64, rhs: f64 },
}

/// Assembles the relaxed problem around `measured`.
///
/// State limits apply to the predicted stages `1..=N` only; the pinned initial
/// stage is never constrained.
pub fn build_horizon_problem(
    measured: &DVector<f64>,
    model: &DiscreteModel,
    params: &MpcParams,
) -> Result<HorizonProblem> {
    let nx = model.state_dim();
    let m = model.input_dim();
    let ns = (nx / 2) + 1;
    check_dim("measured state", nx, measured.len())?;
    check_dim("pair count", crate::dynamics::pair_count(ns), m)?;
    if measured.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measured state"));
    }
    params.validate(ns)?;
    let n = params.horizon;
    let mut layout = Layout {
        horizon: n,
        num_spacecraft: ns,
        state_dim: nx,
        num_pairs: m,
        lifted_len: svec_len(ns),
        dynamics_rows: n * nx,
        coupling_rows: n * m,
        bound_rows: 0,
    };
    let mut bound_rows = Vec::new();
    if let Some((lo, hi)) = &params.state_bounds {
        for j in 1..=n {
            for i in 0..nx {
                let col = layout.state(j) + i;
                if hi[i].is_finite() {
                    bound_rows.push(BoundRow::Le { col, sign: 1.0, rhs: hi[i] });
                }
                if lo[i].is_finite() {
                    bound_rows.push(BoundRow::Le { col, sign: -1.0, rhs: -lo[i] });
                }
            }
        }
    }
    if let Some((lo, hi)) = &params.product_bounds {
        for j in 0..n {
            for l in 0..m {
                let col = layout.input(j) + l;
                if hi[l].is_finite() {
                    bound_rows.push(BoundRow::Le { col, sign: 1.0, rhs: hi[l] });
                }
                if lo[l].is_finite() {
                    bound_rows.push(BoundRow::Le { col, sign: -1.0, rhs: -lo[l] });
                }
            }
        }
    }
    layout.bound_rows = bound_rows.len();
    Ok(HorizonProblem {
        initial_state: measured.clone(),
        model: model.clone(),
        params: params.clone(),
        pairs: PairIndex::new(ns),
        layout,
        bound_rows,
    })
}

impl HorizonProblem {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn cones(&self) -> ConeSpec {
        ConeSpec {
            zero: self.layout.dynamics_rows + self.layout.coupling_rows,
            nonneg: self.layout.bound_rows,
            psd: vec![self.layout.num_spacecraft; self.layout.horizon],
        }
    }

    pub fn evaluate_cost(&self, traj: &Trajectory) -> f64 {
        trajectory_cost(&self.params, traj)
    }

    /// Right-hand side of the conic constraints; the only part that depends on
    /// the measured state.
    pub fn rhs(&self) -> DVector<f64> {
        let lay = self.layout;
        let mut b = DVector::zeros(self.cones().dim());
        let ax0 = &self.model.a * &self.initial_state;
        b.rows_mut(0, lay.state_dim).copy_from(&ax0);
        let off = lay.dynamics_rows + lay.coupling_rows;
        for (r, row) in self.bound_rows.iter().enumerate() {
            let BoundRow::Le { rhs, .. } = row;
            b[off + r] = *rhs;
        }
        b
    }

    /// Standard conic form `min 1/2 z'Pz + c'z + k  s.t.  Az + s = b, s in K`.
    pub fn to_conic(&self) -> ConicProblem {
        let lay = self.layout;
        let (nx, m, ns) = (lay.state_dim, lay.num_pairs, lay.num_spacecraft);
        let n = lay.horizon;
        let nv = lay.num_vars();
        let prm = &self.params;
        let xd = prm.desired_state();

        // objective
        let mut pt: Vec<(usize, usize, f64)> = Vec::new();
        let mut c = DVector::zeros(nv);
        let push_block = |pt: &mut Vec<(usize, usize, f64)>, r0: usize, c0: usize, w: &DMatrix<f64>, k: f64| {
            for cc in 0..w.ncols() {
                for rr in 0..w.nrows() {
                    if w[(rr, cc)] != 0.0 {
                        pt.push((r0 + rr, c0 + cc, k * w[(rr, cc)]));
                    }
                }
            }
        };
        let qxd = &prm.state_weight * &xd;
        for j in 1..=n {
            let s = lay.state(j);
            push_block(&mut pt, s, s, &prm.state_weight, 2.0);
            for i in 0..nx {
                c[s + i] = -2.0 * qxd[i];
            }
        }
        for j in 0..n {
            let u = lay.input(j);
            push_block(&mut pt, u, u, &prm.input_weight, 2.0);
        }
        for j in 1..n {
            let (u1, u0) = (lay.input(j), lay.input(j - 1));
            push_block(&mut pt, u1, u1, &prm.smoothing_weight, 2.0);
            push_block(&mut pt, u0, u0, &prm.smoothing_weight, 2.0);
            push_block(&mut pt, u1, u0, &prm.smoothing_weight, -2.0);
            push_block(&mut pt, u0, u1, &prm.smoothing_weight, -2.0);
        }
        for j in 0..n {
            let q = lay.lifted(j);
            for i in 0..ns {
                c[q + svec_index(ns, i, i)] += prm.trace_weight;
            }
        }
        let constant = n as f64 * xd.dot(&qxd);

        // constraints
        let mut at: Vec<(usize, usize, f64)> = Vec::new();
        let a_dyn = &self.model.a;
        let b_dyn = &self.model.b;
        for j in 0..n {
            let row0 = j * nx;
            let next = lay.state(j + 1);
            let u = lay.input(j);
            for i in 0..nx {
                at.push((row0 + i, next + i, 1.0));
                for l in 0..m {
                    if b_dyn[(i, l)] != 0.0 {
                        at.push((row0 + i, u + l, -b_dyn[(i, l)]));
                    }
                }
                if j > 0 {
                    let prev = lay.state(j);
                    for k in 0..nx {
                        if a_dyn[(i, k)] != 0.0 {
                            at.push((row0 + i, prev + k, -a_dyn[(i, k)]));
                        }
                    }
                }
            }
        }
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for j in 0..n {
            let row0 = lay.dynamics_rows + j * m;
            for (l, (a, bb)) in self.pairs.iter().enumerate() {
                at.push((row0 + l, lay.input(j) + l, 1.0));
                at.push((row0 + l, lay.lifted(j) + svec_index(ns, bb, a), -inv_sqrt2));
            }
        }
        let off = lay.dynamics_rows + lay.coupling_rows;
        for (r, row) in self.bound_rows.iter().enumerate() {
            let BoundRow::Le { col, sign, .. } = *row;
            at.push((off + r, col, sign));
        }
        let mut row = off + lay.bound_rows;
        for j in 0..n {
            for k in 0..lay.lifted_len {
                at.push((row + k, lay.lifted(j) + k, -1.0));
            }
            row += lay.lifted_len;
        }
        let cones = self.cones();
        ConicProblem {
            p: CscMatrix::from_triplets(nv, nv, &pt),
            c,
            a: CscMatrix::from_triplets(cones.dim(), nv, &at),
            b: self.rhs(),
            cones,
            objective_constant: constant,
        }
    }

    /// Conic variables and slack of a trajectory.
    pub fn embed(&self, traj: &Trajectory) -> Result<(DVector<f64>, DVector<f64>)> {
        let lay = self.layout;
        let n = lay.horizon;
        check_dim("trajectory states", n, traj.states.len())?;
        check_dim("trajectory inputs", n, traj.inputs.len())?;
        check_dim("trajectory lifted", n, traj.lifted.len())?;
        let mut z = DVector::zeros(lay.num_vars());
        for j in 0..n {
            z.rows_mut(lay.input(j), lay.num_pairs).copy_from(&traj.inputs[j]);
            z.rows_mut(lay.lifted(j), lay.lifted_len).copy_from(&svec(&traj.lifted[j]));
            z.rows_mut(lay.state(j + 1), lay.state_dim).copy_from(&traj.states[j]);
        }
        let prob = self.to_conic();
        let mut az = vec![0.0; prob.num_constraints()];
        prob.a.mul_vec(z.as_slice(), &mut az);
        let s = &prob.b - DVector::from_vec(az);
        Ok((z, s))
    }

    /// Reads a trajectory back from conic variables. Lifted matrices are read
    /// from the PSD slack blocks, which lie exactly in the cone.
    pub fn extract(&self, z: &DVector<f64>, slack: &DVector<f64>) -> Result<Trajectory> {
        let lay = self.layout;
        check_dim("conic variables", lay.num_vars(), z.len())?;
        let cones = self.cones();
        check_dim("conic slack", cones.dim(), slack.len())?;
        let offsets = cones.psd_offsets();
        let ns = lay.num_spacecraft;
        Ok(Trajectory {
            states: (1..=lay.horizon)
                .map(|j| z.rows(lay.state(j), lay.state_dim).into_owned())
                .collect(),
            inputs: (0..lay.horizon)
                .map(|j| z.rows(lay.input(j), lay.num_pairs).into_owned())
                .collect(),
            lifted: offsets
                .iter()
                .map(|&o| smat(&slack.as_slice()[o..o + lay.lifted_len], ns))
                .collect(),
        })
    }
}
