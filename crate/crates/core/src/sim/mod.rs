//! Closed-loop simulation: the receding-horizon controller against the
//! nonlinear plant, plus trace I/O and a brute-force validation oracle.

mod config;
pub mod oracle;
pub mod trace;

pub use config::ScenarioConfig;
pub use oracle::{brute_force_qcqp, compare_with_sdr, ChargeGrid, OracleComparison, OracleResult};
pub use trace::{read_csv, replay_cost, write_csv, CostReplay, TraceRow};

use nalgebra::DVector;

use crate::controller::{ControllerState, Fault, StepRecord};
use crate::dynamics::{build_discrete_model, charge_products, propagate_zoh, RelativeState};
use crate::error::{Error, Result};

/// Consecutive solver faults after which the run is abandoned.
pub const MAX_CONSECUTIVE_FAULTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// `max_i |xi_i - xi_des_i|` after the last step.
    pub final_deviation: f64,
    pub max_charge: f64,
    pub total_solve_time: f64,
    pub fault_count: usize,
    pub saturation_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub num_spacecraft: usize,
    pub sample_period: f64,
    pub records: Vec<StepRecord>,
    /// Plant state after the last applied step.
    pub final_state: DVector<f64>,
    pub faults: Vec<Fault>,
    pub status: RunStatus,
    /// Desired relative positions, kept for deviation summaries.
    pub xi_des: DVector<f64>,
}

impl RunLog {
    pub fn summary(&self) -> RunSummary {
        let d = self.num_spacecraft - 1;
        let final_deviation = (self.final_state.rows(0, d) - &self.xi_des).amax();
        RunSummary {
            final_deviation,
            max_charge: self.records.iter().map(|r| r.charges.amax()).fold(0.0, f64::max),
            total_solve_time: self.records.iter().map(|r| r.solve_time).sum(),
            fault_count: self.faults.len(),
            saturation_count: self.records.iter().filter(|r| r.saturated).count(),
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Runs the scenario: at every sample the controller reads the exact plant
/// state, and the resulting charges are held while the nonlinear dynamics are
/// integrated with RK4 substeps.
///
/// A collision (separation guard) or a cascade of solver faults ends the run
/// early with [`RunStatus::Aborted`] and the records gathered so far.
pub fn run_closed_loop(cfg: &ScenarioConfig) -> Result<RunLog> {
    cfg.validate()?;
    let model = build_discrete_model(&cfg.params.xi_des, cfg.sample_period, &cfg.formation)?;
    let mut ctrl = ControllerState::new();
    let mut state = RelativeState::from_packed(&cfg.initial_state)?;
    let mut records = Vec::with_capacity(cfg.steps);
    let mut status = RunStatus::Completed;
    let mut streak = 0;

    for _ in 0..cfg.steps {
        let measured = state.packed();
        let faults_before = ctrl.faults.len();
        let mut rec = ctrl.step(&measured, &model, &cfg.params, &cfg.solver, cfg.saturation_limit)?;
        clamp_to_formation_limits(&mut rec, cfg);
        if !cfg.record_timing {
            rec.solve_time = 0.0;
        }
        streak = if ctrl.faults.len() > faults_before { streak + 1 } else { 0 };
        let next = propagate_zoh(&state, &rec.charges, cfg.sample_period, cfg.substeps, &cfg.formation);
        records.push(rec);
        match next {
            Ok(s) if !same_ordering(&state, &s) => {
                status = RunStatus::Aborted("collision: spacecraft passed through each other".into());
                break;
            }
            Ok(s) => state = s,
            Err(e @ Error::Singularity { .. }) => {
                status = RunStatus::Aborted(format!("collision: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
        if streak >= MAX_CONSECUTIVE_FAULTS {
            status = RunStatus::Aborted(format!("{streak} consecutive solver faults"));
            break;
        }
    }

    Ok(RunLog {
        num_spacecraft: cfg.formation.num_spacecraft(),
        sample_period: cfg.sample_period,
        records,
        final_state: state.packed(),
        faults: ctrl.faults,
        status,
        xi_des: cfg.params.xi_des.clone(),
    })
}

/// True when no two spacecraft swapped places along the line. A crossing can
/// step over the separation guard within one substep.
fn same_ordering(before: &RelativeState, after: &RelativeState) -> bool {
    let (a, b) = (before.implied_positions(), after.implied_positions());
    (0..a.len()).all(|i| (i + 1..a.len()).all(|j| (a[j] - a[i]).signum() == (b[j] - b[i]).signum()))
}

/// Individual charge limits of the formation apply on top of the symmetric
/// saturation limit.
fn clamp_to_formation_limits(rec: &mut StepRecord, cfg: &ScenarioConfig) {
    let (lo, hi) = (&cfg.formation.charge_min, &cfg.formation.charge_max);
    let mut clipped = false;
    for i in 0..rec.charges.len() {
        let c = rec.charges[i].clamp(lo[i], hi[i]);
        clipped |= c != rec.charges[i];
        rec.charges[i] = c;
    }
    if clipped {
        rec.saturated = true;
        rec.products = charge_products(&rec.charges);
    }
}
