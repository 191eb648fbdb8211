//! Scenario configuration and its TOML representation.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dynamics::{relative_input_matrix, FormationConfig, RelativeState, DEFAULT_COULOMB_CONSTANT, DEFAULT_MIN_SEPARATION};
use crate::error::{check_dim, Error, Result};
use crate::horizon::MpcParams;
use crate::solver::SolverSettings;

/// Everything needed to run one closed-loop simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub formation: FormationConfig,
    pub params: MpcParams,
    pub solver: SolverSettings,
    /// Packed relative state `[xi; nu]` at `t = 0`.
    pub initial_state: DVector<f64>,
    pub sample_period: f64,
    pub steps: usize,
    /// RK4 substeps of the nonlinear plant per sample period.
    pub substeps: usize,
    /// Charge magnitude limit, units of 10 mC.
    pub saturation_limit: f64,
    pub output: Option<PathBuf>,
    /// When false, solve times are recorded as zero so traces are
    /// byte-reproducible.
    pub record_timing: bool,
}

impl ScenarioConfig {
    /// Four spacecraft of 50 kg each, desired spacing 50 m, started 3, 9 and
    /// 3 m off, with a 1 mC charge limit and a 300 s run.
    pub fn four_craft_reference() -> Self {
        let xi_des = DVector::from_vec(vec![50.0, 100.0, 150.0]);
        let xd = DVector::from_vec(vec![50.0, 100.0, 150.0, 0.0, 0.0, 0.0]);
        let mut formation = FormationConfig::new(vec![50.0; 4]).expect("valid masses");
        formation.state_min = xd.add_scalar(-10.0);
        formation.state_max = xd.add_scalar(10.0);
        let mut state_weight = DMatrix::identity(6, 6);
        for i in 3..6 {
            state_weight[(i, i)] = 400.0;
        }
        let params = MpcParams::new(
            9,
            xi_des,
            state_weight,
            DMatrix::zeros(6, 6),
            DMatrix::identity(6, 6) * 1e8,
            1.5,
        )
        .with_bounds_from(&formation);
        Self {
            formation,
            params,
            solver: SolverSettings::default(),
            initial_state: DVector::from_vec(vec![53.0, 109.0, 147.0, 0.0, 0.0, 0.0]),
            sample_period: 0.5,
            steps: 600,
            substeps: 10,
            saturation_limit: 0.1,
            output: None,
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.formation.validate()?;
        let ns = self.formation.num_spacecraft();
        self.params.validate(ns)?;
        self.solver.validate()?;
        check_dim("initial state", self.formation.state_dim(), self.initial_state.len())?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(Error::Config("sample period must be positive".into()));
        }
        if !(self.saturation_limit > 0.0 && self.saturation_limit.is_finite()) {
            return Err(Error::Config("saturation limit must be positive".into()));
        }
        let init = RelativeState::from_packed(&self.initial_state)?;
        if !init.is_finite() {
            return Err(Error::NonFinite("initial state"));
        }
        // the separation guard applies to both the start and the linearization point
        relative_input_matrix(&init.xi, &self.formation)?;
        relative_input_matrix(&self.params.xi_des, &self.formation)?;
        Ok(())
    }

    /// Parses a scenario from TOML text. Omitted keys take the values of
    /// [`ScenarioConfig::four_craft_reference`] where that makes sense for the
    /// given spacecraft count.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_config()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    formation: FormationSection,
    mpc: MpcSection,
    #[serde(default)]
    solver: SolverSection,
    simulation: SimulationSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormationSection {
    masses: Vec<f64>,
    coulomb_constant: Option<f64>,
    min_separation: Option<f64>,
    /// Symmetric box `Xi_des +/- state_radius` on every state component.
    state_radius: Option<f64>,
    state_min: Option<Vec<f64>>,
    state_max: Option<Vec<f64>>,
    charge_min: Option<Vec<f64>>,
    charge_max: Option<Vec<f64>>,
    product_min: Option<Vec<f64>>,
    product_max: Option<Vec<f64>>,
}

/// A weight given as a scalar multiple of the identity, a diagonal, or a
/// full row-major matrix.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Weight {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weight {
    fn to_matrix(&self, name: &'static str, n: usize) -> Result<DMatrix<f64>> {
        match self {
            Weight::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            Weight::Diagonal(d) => {
                check_dim(name, n, d.len())?;
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            }
            Weight::Full(rows) => {
                check_dim(name, n, rows.len())?;
                for r in rows {
                    check_dim(name, n, r.len())?;
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MpcSection {
    horizon: usize,
    xi_des: Vec<f64>,
    state_weight: Weight,
    input_weight: Weight,
    smoothing_weight: Weight,
    trace_weight: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    eps_abs: Option<f64>,
    eps_rel: Option<f64>,
    max_iters: Option<usize>,
    rho: Option<f64>,
    adaptive_rho: Option<bool>,
    warm_start: Option<bool>,
    alpha: Option<f64>,
    sigma: Option<f64>,
    scaling_iters: Option<usize>,
    check_interval: Option<usize>,
    adaptive_rho_interval: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    initial_state: Vec<f64>,
    sample_period: f64,
    steps: usize,
    substeps: Option<usize>,
    saturation_limit: Option<f64>,
    output: Option<PathBuf>,
    record_timing: Option<bool>,
}

fn vector(name: &'static str, v: &[f64], n: usize) -> Result<DVector<f64>> {
    check_dim(name, n, v.len())?;
    Ok(DVector::from_column_slice(v))
}

impl FileConfig {
    fn into_config(self) -> Result<ScenarioConfig> {
        let f = &self.formation;
        let mut formation = FormationConfig::new(f.masses.clone())?;
        let ns = formation.num_spacecraft();
        let nx = formation.state_dim();
        let m = formation.num_pairs();
        formation.coulomb_constant = f.coulomb_constant.unwrap_or(DEFAULT_COULOMB_CONSTANT);
        formation.min_separation = f.min_separation.unwrap_or(DEFAULT_MIN_SEPARATION);

        let xi_des = vector("xi_des", &self.mpc.xi_des, ns - 1)?;
        let xd = DVector::from_fn(nx, |k, _| if k < ns - 1 { xi_des[k] } else { 0.0 });
        if let Some(r) = f.state_radius {
            if f.state_min.is_some() || f.state_max.is_some() {
                return Err(Error::Config("give either state_radius or state_min/state_max".into()));
            }
            formation.state_min = xd.add_scalar(-r);
            formation.state_max = xd.add_scalar(r);
        }
        if let Some(v) = &f.state_min {
            formation.state_min = vector("state_min", v, nx)?;
        }
        if let Some(v) = &f.state_max {
            formation.state_max = vector("state_max", v, nx)?;
        }
        if let Some(v) = &f.charge_min {
            formation.charge_min = vector("charge_min", v, ns)?;
        }
        if let Some(v) = &f.charge_max {
            formation.charge_max = vector("charge_max", v, ns)?;
        }
        formation.product_min = f.product_min.as_deref().map(|v| vector("product_min", v, m)).transpose()?;
        formation.product_max = f.product_max.as_deref().map(|v| vector("product_max", v, m)).transpose()?;
        formation.validate()?;

        let mpc = &self.mpc;
        let params = MpcParams::new(
            mpc.horizon,
            xi_des,
            mpc.state_weight.to_matrix("state_weight", nx)?,
            mpc.input_weight.to_matrix("input_weight", m)?,
            mpc.smoothing_weight.to_matrix("smoothing_weight", m)?,
            mpc.trace_weight,
        )
        .with_bounds_from(&formation);

        let d = SolverSettings::default();
        let s = &self.solver;
        let solver = SolverSettings {
            eps_abs: s.eps_abs.unwrap_or(d.eps_abs),
            eps_rel: s.eps_rel.unwrap_or(d.eps_rel),
            max_iters: s.max_iters.unwrap_or(d.max_iters),
            rho: s.rho.unwrap_or(d.rho),
            adaptive_rho: s.adaptive_rho.unwrap_or(d.adaptive_rho),
            warm_start: s.warm_start.unwrap_or(d.warm_start),
            alpha: s.alpha.unwrap_or(d.alpha),
            sigma: s.sigma.unwrap_or(d.sigma),
            scaling_iters: s.scaling_iters.unwrap_or(d.scaling_iters),
            check_interval: s.check_interval.unwrap_or(d.check_interval),
            adaptive_rho_interval: s.adaptive_rho_interval.unwrap_or(d.adaptive_rho_interval),
        };

        let sim = &self.simulation;
        let cfg = ScenarioConfig {
            formation,
            params,
            solver,
            initial_state: vector("initial_state", &sim.initial_state, nx)?,
            sample_period: sim.sample_period,
            steps: sim.steps,
            substeps: sim.substeps.unwrap_or(10),
            saturation_limit: sim.saturation_limit.unwrap_or(0.1),
            output: sim.output.clone(),
            record_timing: sim.record_timing.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const REFERENCE_TOML: &str = r#"
[formation]
masses = [50.0, 50.0, 50.0, 50.0]
coulomb_constant = 8.99e5
state_radius = 10.0

[mpc]
horizon = 9
xi_des = [50.0, 100.0, 150.0]
state_weight = [1.0, 1.0, 1.0, 400.0, 400.0, 400.0]
input_weight = 0.0
smoothing_weight = 1e8
trace_weight = 1.5

[simulation]
initial_state = [53.0, 109.0, 147.0, 0.0, 0.0, 0.0]
sample_period = 0.5
steps = 600
"#;

    #[test]
    fn toml_matches_builtin_reference() {
        let cfg = ScenarioConfig::from_toml_str(REFERENCE_TOML).unwrap();
        assert_eq!(cfg, ScenarioConfig::four_craft_reference());
    }

    #[test]
    fn full_matrix_weight() {
        let text = REFERENCE_TOML.replace(
            "input_weight = 0.0",
            "input_weight = [[1,0,0,0,0,0],[0,1,0,0,0,0],[0,0,1,0,0,0],[0,0,0,1,0,0],[0,0,0,0,1,0],[0,0,0,0,0,2.0]]",
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.params.input_weight[(5, 5)], 2.0);
        assert_eq!(cfg.params.input_weight[(0, 0)], 1.0);
    }

    #[test]
    fn rejects_bad_files() {
        for bad in [
            REFERENCE_TOML.replace("steps = 600", "steps = 0"),
            REFERENCE_TOML.replace("horizon = 9", "horizon = 0"),
            REFERENCE_TOML.replace("sample_period = 0.5", "sample_period = -0.5"),
            REFERENCE_TOML.replace("xi_des = [50.0, 100.0, 150.0]", "xi_des = [50.0, 100.0]"),
            REFERENCE_TOML.replace("trace_weight = 1.5", "trace_weight = 1.5\nbogus = 1"),
            REFERENCE_TOML.replace("initial_state = [53.0, 109.0", "initial_state = [0.0, 0.0"),
            REFERENCE_TOML.replace("input_weight = 0.0", "input_weight = -1.0"),
            "not toml at all [".to_string(),
        ] {
            assert!(matches!(ScenarioConfig::from_toml_str(&bad), Err(Error::Config(_)) | Err(Error::Dimension { .. }) | Err(Error::Singularity { .. })), "{bad}");
        }
    }

    #[test]
    fn solver_overrides() {
        let text = format!("{REFERENCE_TOML}\n[solver]\nmax_iters = 50\nwarm_start = false\n");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.solver.max_iters, 50);
        assert!(!cfg.solver.warm_start);
        assert_eq!(cfg.solver.eps_abs, SolverSettings::default().eps_abs);
    }
}
