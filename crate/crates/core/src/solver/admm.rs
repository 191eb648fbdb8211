use std::time::Instant;

use nalgebra::DVector;

use super::cones::{project_cone_in_place, svec_len, ConeSpec};
use super::sparse::{CscMatrix, SparseCholesky};
use crate::error::{check_dim, Error, Result};

/// A conic program
///
/// ```text
/// minimize    1/2 x'Px + c'x + constant
/// subject to  Ax + s = b,  s in K
/// ```
///
/// `P` is stored in full (both triangles) and must be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub p: CscMatrix,
    pub c: DVector<f64>,
    pub a: CscMatrix,
    pub b: DVector<f64>,
    pub cones: ConeSpec,
    pub objective_constant: f64,
}

impl ConicProblem {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let m = self.num_constraints();
        check_dim("P rows", n, self.p.nrows())?;
        check_dim("P cols", n, self.p.ncols())?;
        check_dim("A cols", n, self.a.ncols())?;
        check_dim("A rows", m, self.a.nrows())?;
        check_dim("cone dimension", m, self.cones.dim())?;
        if !self.p.is_finite() || !self.a.is_finite() {
            return Err(Error::NonFinite("problem matrices"));
        }
        if self.c.iter().chain(self.b.iter()).any(|v| !v.is_finite()) || !self.objective_constant.is_finite() {
            return Err(Error::NonFinite("problem vectors"));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.p.mul_vec(x.as_slice(), &mut px);
        0.5 * dot(x.as_slice(), &px) + self.c.dot(x) + self.objective_constant
    }

    /// `A`, `P`, `c` and the cones agree; only `b` may differ.
    pub fn same_structure(&self, other: &Self) -> bool {
        self.cones == other.cones
            && self.p == other.p
            && self.a == other.a
            && self.c == other.c
            && self.objective_constant == other.objective_constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    pub adaptive_rho: bool,
    pub warm_start: bool,
    /// Over-relaxation parameter in `(0, 2)`.
    pub alpha: f64,
    /// Proximal regularization of the primal step.
    pub sigma: f64,
    pub scaling_iters: usize,
    /// Residuals are evaluated every this many iterations.
    pub check_interval: usize,
    pub adaptive_rho_interval: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iters: 20_000,
            rho: 1.0,
            adaptive_rho: true,
            warm_start: true,
            alpha: 1.6,
            sigma: 1e-6,
            scaling_iters: 15,
            check_interval: 5,
            adaptive_rho_interval: 50,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.sigma > 0.0) {
            return Err(Error::Config("rho and sigma must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::Config("alpha must lie in (0, 2)".into()));
        }
        if self.check_interval == 0 || self.adaptive_rho_interval == 0 {
            return Err(Error::Config("intervals must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    InfeasibleSuspect,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::InfeasibleSuspect => "infeasible_suspect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optimal" => Some(SolveStatus::Optimal),
            "max_iters" => Some(SolveStatus::MaxIters),
            "infeasible_suspect" => Some(SolveStatus::InfeasibleSuspect),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: DVector<f64>,
    /// Slack, an element of the cone.
    pub s: DVector<f64>,
    /// Dual variable, an element of the dual cone.
    pub y: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    /// Penalty in effect when the solve stopped.
    pub rho: f64,
    pub solve_time: f64,
    pub cones: ConeSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
}

/// Whether `prev` can seed a solve of `prob`.
pub fn warm_start_compatible(prev: &SolveResult, prob: &ConicProblem) -> bool {
    prev.cones == prob.cones
        && prev.x.len() == prob.num_vars()
        && prev.s.len() == prob.num_constraints()
        && prev.y.len() == prob.num_constraints()
        && prev.x.iter().chain(prev.s.iter()).chain(prev.y.iter()).all(|v| v.is_finite())
}

/// One-shot solve. A compatible `warm` result seeds the iterates and penalty.
pub fn solve(prob: &ConicProblem, settings: &SolverSettings, warm: Option<&SolveResult>) -> Result<SolveResult> {
    let mut solver = AdmmSolver::new(prob.clone(), settings.clone())?;
    solver.solve(warm)
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

#[derive(Debug, Clone)]
struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    cost: f64,
}

/// Operator-splitting solver with a cached equilibration and KKT
/// factorization. Only `b` may change between solves.
#[derive(Debug, Clone)]
pub struct AdmmSolver {
    prob: ConicProblem,
    settings: SolverSettings,
    scaling: Scaling,
    p: CscMatrix,
    a: CscMatrix,
    at: CscMatrix,
    c: Vec<f64>,
    b: Vec<f64>,
    rho: f64,
    rho_vec: Vec<f64>,
    kkt: SparseCholesky,
}

impl AdmmSolver {
    pub fn new(prob: ConicProblem, settings: SolverSettings) -> Result<Self> {
        prob.validate()?;
        settings.validate()?;
        let scaling = equilibrate(&prob, settings.scaling_iters);
        let mut p = prob.p.clone();
        p.scale(&scaling.d, &scaling.d);
        p.scale_values(scaling.cost);
        let mut a = prob.a.clone();
        a.scale(&scaling.e, &scaling.d);
        let at = a.transpose();
        let c = prob
            .c
            .iter()
            .zip(&scaling.d)
            .map(|(c, d)| c * d * scaling.cost)
            .collect();
        let b = prob.b.iter().zip(&scaling.e).map(|(b, e)| b * e).collect();
        let rho = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let rho_vec = rho_vector(&prob.cones, rho);
        let kkt = SparseCholesky::factor(&kkt_upper(&p, &at, settings.sigma, &rho_vec))?;
        Ok(Self {
            prob,
            settings,
            scaling,
            p,
            a,
            at,
            c,
            b,
            rho,
            rho_vec,
            kkt,
        })
    }

    pub fn problem(&self) -> &ConicProblem {
        &self.prob
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Replaces the right-hand side, keeping scaling and factorization.
    pub fn update_rhs(&mut self, b: &DVector<f64>) -> Result<()> {
        check_dim("right-hand side", self.prob.num_constraints(), b.len())?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("right-hand side"));
        }
        self.prob.b = b.clone();
        self.b = b.iter().zip(&self.scaling.e).map(|(b, e)| b * e).collect();
        Ok(())
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        let rho = rho.clamp(RHO_MIN, RHO_MAX);
        if rho == self.rho {
            return Ok(());
        }
        self.rho = rho;
        self.rho_vec = rho_vector(&self.prob.cones, rho);
        let upper = kkt_upper(&self.p, &self.at, self.settings.sigma, &self.rho_vec);
        self.kkt.refactor(&upper)
    }

    pub fn solve(&mut self, warm: Option<&SolveResult>) -> Result<SolveResult> {
        self.solve_with_log(warm, &mut |_| {})
    }

    /// Solves, reporting residuals at each check to `log`.
    pub fn solve_with_log(
        &mut self,
        warm: Option<&SolveResult>,
        log: &mut dyn FnMut(&IterationLog),
    ) -> Result<SolveResult> {
        let start = Instant::now();
        let n = self.prob.num_vars();
        let m = self.prob.num_constraints();
        let Scaling { d, e, cost } = self.scaling.clone();
        let st = self.settings.clone();

        let mut x = vec![0.0; n];
        let mut s = vec![0.0; m];
        let mut y = vec![0.0; m];
        match warm.filter(|w| warm_start_compatible(w, &self.prob)) {
            Some(w) => {
                self.set_rho(w.rho)?;
                for i in 0..n {
                    x[i] = w.x[i] / d[i];
                }
                for r in 0..m {
                    s[r] = w.s[r] * e[r];
                    y[r] = w.y[r] * cost / e[r];
                }
                // keep the seed slack inside the cone
                project_cone_in_place(&mut s, &self.prob.cones)?;
            }
            None => self.set_rho(st.rho)?,
        }
        let mut z: Vec<f64> = (0..m).map(|r| self.b[r] - s[r]).collect();

        let mut rhs = vec![0.0; n];
        let mut tmp_m = vec![0.0; m];
        let mut ax = vec![0.0; m];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];
        let mut z_prev = vec![0.0; m];

        // (merit, x, s, y, primal ratio, dual ratio, primal residual, dual residual)
        type Snapshot = (f64, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64, f64, f64);
        let mut best: Option<Snapshot> = None;
        let mut status = SolveStatus::MaxIters;
        let mut iterations = 0;
        let mut last_res = (f64::INFINITY, f64::INFINITY);

        for k in 1..=st.max_iters {
            iterations = k;
            z_prev.copy_from_slice(&z);

            // primal step: (P + sigma I + A' R A) x~ = sigma x - c + A'(R z - y)
            for r in 0..m {
                tmp_m[r] = self.rho_vec[r] * z[r] - y[r];
            }
            self.at.mul_vec(&tmp_m, &mut rhs);
            for i in 0..n {
                rhs[i] += st.sigma * x[i] - self.c[i];
            }
            self.kkt.solve_in_place(&mut rhs);
            self.a.mul_vec(&rhs, &mut ax);
            for i in 0..n {
                x[i] = st.alpha * rhs[i] + (1.0 - st.alpha) * x[i];
            }

            // projection onto b - K, then dual ascent
            for r in 0..m {
                let v = st.alpha * ax[r] + (1.0 - st.alpha) * z_prev[r];
                tmp_m[r] = v;
                s[r] = self.b[r] - (v + y[r] / self.rho_vec[r]);
            }
            if project_cone_in_place(&mut s, &self.prob.cones).is_err() {
                return Err(Error::NonFinite("ADMM iterate"));
            }
            for r in 0..m {
                z[r] = self.b[r] - s[r];
                y[r] += self.rho_vec[r] * (tmp_m[r] - z[r]);
            }

            let check = k % st.check_interval == 0 || k == st.max_iters;
            let adapt = st.adaptive_rho && k % st.adaptive_rho_interval == 0;
            if !(check || adapt) {
                continue;
            }

            self.a.mul_vec(&x, &mut ax);
            self.p.mul_vec(&x, &mut px);
            self.at.mul_vec(&y, &mut aty);

            // residuals in the original units
            let mut r_prim = 0.0_f64;
            let mut ax_norm = 0.0_f64;
            let mut z_norm = 0.0_f64;
            let mut r_prim_s = 0.0_f64;
            let mut ax_norm_s = 0.0_f64;
            let mut z_norm_s = 0.0_f64;
            for r in 0..m {
                r_prim = r_prim.max(((ax[r] - z[r]) / e[r]).abs());
                ax_norm = ax_norm.max((ax[r] / e[r]).abs());
                z_norm = z_norm.max((z[r] / e[r]).abs());
                r_prim_s = r_prim_s.max((ax[r] - z[r]).abs());
                ax_norm_s = ax_norm_s.max(ax[r].abs());
                z_norm_s = z_norm_s.max(z[r].abs());
            }
            let mut r_dual = 0.0_f64;
            let mut px_norm = 0.0_f64;
            let mut aty_norm = 0.0_f64;
            let mut c_norm = 0.0_f64;
            let mut r_dual_s = 0.0_f64;
            let mut px_norm_s = 0.0_f64;
            let mut aty_norm_s = 0.0_f64;
            let mut c_norm_s = 0.0_f64;
            for i in 0..n {
                let g = px[i] + self.c[i] + aty[i];
                r_dual = r_dual.max((g / d[i]).abs());
                px_norm = px_norm.max((px[i] / d[i]).abs());
                aty_norm = aty_norm.max((aty[i] / d[i]).abs());
                c_norm = c_norm.max((self.c[i] / d[i]).abs());
                r_dual_s = r_dual_s.max(g.abs());
                px_norm_s = px_norm_s.max(px[i].abs());
                aty_norm_s = aty_norm_s.max(aty[i].abs());
                c_norm_s = c_norm_s.max(self.c[i].abs());
            }
            r_dual /= cost;
            let eps_prim = st.eps_abs + st.eps_rel * ax_norm.max(z_norm);
            let eps_dual = st.eps_abs + st.eps_rel * px_norm.max(aty_norm).max(c_norm) / cost;
            if !(r_prim.is_finite() && r_dual.is_finite()) {
                return Err(Error::NonFinite("ADMM residuals"));
            }
            last_res = (r_prim, r_dual);
            log(&IterationLog {
                iteration: k,
                primal_residual: r_prim,
                dual_residual: r_dual,
                rho: self.rho,
            });

            let (pr, dr) = (r_prim / eps_prim, r_dual / eps_dual);
            let merit = pr.max(dr);
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, x.clone(), s.clone(), y.clone(), pr, dr, r_prim, r_dual));
            }
            // duality gap x'Px + c'x + b'y, unscaled
            let gap = (dot(&x, &px) + dot(&self.c, &x) + dot(&self.b, &y)).abs() / cost;
            let gap_scale = (dot(&x, &px).abs() + dot(&self.c, &x).abs() + dot(&self.b, &y).abs()) / cost;
            let eps_gap = st.eps_abs + st.eps_rel * gap_scale;
            if r_prim <= eps_prim && r_dual <= eps_dual && gap <= eps_gap {
                status = SolveStatus::Optimal;
                break;
            }

            if adapt {
                let tiny = 1e-10;
                let num = r_prim_s / ax_norm_s.max(z_norm_s).max(tiny);
                let den = r_dual_s / px_norm_s.max(aty_norm_s).max(c_norm_s).max(tiny);
                let ratio = (num / den.max(tiny)).sqrt();
                let candidate = (self.rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if candidate > 5.0 * self.rho || candidate < self.rho / 5.0 {
                    self.set_rho(candidate)?;
                }
            }
        }

        let (r_prim, r_dual) = if status == SolveStatus::Optimal {
            last_res
        } else {
            let (_, bx, bs, by, pr, dr, bp, bd) = best.expect("at least one residual check");
            x = bx;
            s = bs;
            y = by;
            // a stalled primal residual next to a settled dual residual is the
            // usual ADMM signature of an empty feasible set
            if pr > 1e3 && dr <= 10.0 {
                status = SolveStatus::InfeasibleSuspect;
            }
            (bp, bd)
        };

        let xs = DVector::from_iterator(n, (0..n).map(|i| x[i] * d[i]));
        let ss = DVector::from_iterator(m, (0..m).map(|r| s[r] / e[r]));
        let ys = DVector::from_iterator(m, (0..m).map(|r| y[r] * e[r] / cost));
        Ok(SolveResult {
            objective: self.prob.objective(&xs),
            x: xs,
            s: ss,
            y: ys,
            status,
            iterations,
            primal_residual: r_prim,
            dual_residual: r_dual,
            rho: self.rho,
            solve_time: start.elapsed().as_secs_f64(),
            cones: self.prob.cones.clone(),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rho_vector(cones: &ConeSpec, rho: f64) -> Vec<f64> {
    let mut v = vec![rho; cones.dim()];
    v[..cones.zero].iter_mut().for_each(|r| *r *= RHO_EQ_FACTOR);
    v
}

/// Upper triangle of `P + sigma I + A' diag(rho) A`, given `A'` in CSC form
/// (i.e. `A` by rows).
fn kkt_upper(p: &CscMatrix, at: &CscMatrix, sigma: f64, rho: &[f64]) -> CscMatrix {
    let n = p.ncols();
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(p.nnz() + n + 4 * at.nnz());
    for (r, c, v) in p.iter() {
        if r <= c {
            t.push((r, c, v));
        }
    }
    for i in 0..n {
        t.push((i, i, sigma));
    }
    let (cp, ri, vals) = (at.col_ptr(), at.row_idx(), at.values());
    for row in 0..at.ncols() {
        let span = cp[row]..cp[row + 1];
        for p1 in span.clone() {
            for p2 in span.clone() {
                let (i, j) = (ri[p1], ri[p2]);
                if i <= j {
                    t.push((i, j, rho[row] * vals[p1] * vals[p2]));
                }
            }
        }
    }
    CscMatrix::from_triplets(n, n, &t)
}

/// Modified Ruiz equilibration of `[[P, A'], [A, 0]]`. Rows of a PSD block
/// share one scale factor so the block stays a PSD cone.
fn equilibrate(prob: &ConicProblem, iters: usize) -> Scaling {
    let n = prob.num_vars();
    let m = prob.num_constraints();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let to_scale = |norm: f64| {
        if norm < SCALE_MIN {
            1.0
        } else {
            (1.0 / norm.sqrt()).clamp(SCALE_MIN, SCALE_MAX)
        }
    };
    let psd_blocks: Vec<(usize, usize)> = prob
        .cones
        .psd
        .iter()
        .zip(prob.cones.psd_offsets())
        .map(|(&k, off)| (off, svec_len(k)))
        .collect();
    for _ in 0..iters {
        let pc = p.col_inf_norms();
        let ac = a.col_inf_norms();
        let ar = a.row_inf_norms();
        let dd: Vec<f64> = (0..n).map(|i| to_scale(pc[i].max(ac[i]))).collect();
        let mut de: Vec<f64> = ar.iter().map(|&r| to_scale(r)).collect();
        for &(off, len) in &psd_blocks {
            let mean = de[off..off + len].iter().sum::<f64>() / len as f64;
            de[off..off + len].iter_mut().for_each(|v| *v = mean);
        }
        p.scale(&dd, &dd);
        a.scale(&de, &dd);
        d.iter_mut().zip(&dd).for_each(|(a, b)| *a *= b);
        e.iter_mut().zip(&de).for_each(|(a, b)| *a *= b);
    }
    let pc = p.col_inf_norms();
    let mean_p = if n > 0 { pc.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let c_norm = prob.c.iter().zip(&d).fold(0.0_f64, |mx, (c, d)| mx.max((c * d).abs()));
    let scale = mean_p.max(c_norm);
    let cost = if scale < SCALE_MIN {
        1.0
    } else {
        (1.0 / scale).clamp(SCALE_MIN, SCALE_MAX)
    };
    Scaling { d, e, cost }
}
