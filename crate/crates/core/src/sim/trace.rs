//! CSV telemetry: one row per control step.
//!
//! Columns: `k, t, xi_1.., nu_1.., q_1.., u_1.., rank_ratio, solver_status,
//! iters, solve_time_s, saturated`. Floats are written in scientific notation
//! with 17 significant digits, which round-trips every `f64` exactly.

use std::path::Path;

use nalgebra::DVector;

use super::RunLog;
use crate::controller::StepRecord;
use crate::dynamics::pair_count;
use crate::error::{check_dim, Error, Result};
use crate::horizon::MpcParams;
use crate::solver::SolveStatus;

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub t: f64,
    pub xi: DVector<f64>,
    pub nu: DVector<f64>,
    pub charges: DVector<f64>,
    pub products: DVector<f64>,
    pub rank_ratio: f64,
    pub solver_status: SolveStatus,
    pub iterations: usize,
    pub solve_time: f64,
    pub saturated: bool,
}

impl TraceRow {
    pub fn from_record(rec: &StepRecord) -> Self {
        let d = rec.measured.len() / 2;
        Self {
            k: rec.k,
            t: rec.time,
            xi: rec.measured.rows(0, d).into_owned(),
            nu: rec.measured.rows(d, d).into_owned(),
            charges: rec.charges.clone(),
            products: rec.products.clone(),
            rank_ratio: rec.rank_ratio,
            solver_status: rec.solver_status,
            iterations: rec.iterations,
            solve_time: rec.solve_time,
            saturated: rec.saturated,
        }
    }

    /// Packed measured state `[xi; nu]`.
    pub fn state(&self) -> DVector<f64> {
        let d = self.xi.len();
        DVector::from_fn(2 * d, |i, _| if i < d { self.xi[i] } else { self.nu[i - d] })
    }

    /// All floating-point fields in column order, for bitwise comparisons.
    pub fn float_fields(&self) -> Vec<f64> {
        let mut v = vec![self.t];
        v.extend(self.xi.iter());
        v.extend(self.nu.iter());
        v.extend(self.charges.iter());
        v.extend(self.products.iter());
        v.push(self.rank_ratio);
        v.push(self.solve_time);
        v
    }
}

pub fn header(num_spacecraft: usize) -> Vec<String> {
    let d = num_spacecraft - 1;
    let mut h = vec!["k".to_string(), "t".to_string()];
    h.extend((1..=d).map(|i| format!("xi_{i}")));
    h.extend((1..=d).map(|i| format!("nu_{i}")));
    h.extend((1..=num_spacecraft).map(|i| format!("q_{i}")));
    h.extend((1..=pair_count(num_spacecraft)).map(|i| format!("u_{i}")));
    for c in ["rank_ratio", "solver_status", "iters", "solve_time_s", "saturated"] {
        h.push(c.to_string());
    }
    h
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(log: &RunLog, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(log, file)
}

pub fn write_csv_to<W: std::io::Write>(log: &RunLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(log.num_spacecraft))?;
    for rec in &log.records {
        let row = TraceRow::from_record(rec);
        let mut fields = vec![row.k.to_string(), fmt(row.t)];
        fields.extend(row.xi.iter().chain(row.nu.iter()).map(|v| fmt(*v)));
        fields.extend(row.charges.iter().chain(row.products.iter()).map(|v| fmt(*v)));
        fields.push(fmt(row.rank_ratio));
        fields.push(row.solver_status.as_str().to_string());
        fields.push(row.iterations.to_string());
        fields.push(fmt(row.solve_time));
        fields.push(u8::from(row.saturated).to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace written by [`write_csv`]. The spacecraft count is inferred
/// from the header.
pub fn read_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let head: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let ns = head.iter().filter(|h| h.starts_with("q_")).count();
    if ns < 2 || head != header(ns) {
        return Err(Error::Csv("unrecognized header".into()));
    }
    let d = ns - 1;
    let m = pair_count(ns);
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        check_dim("csv row", head.len(), rec.len())?;
        let bad = |what: &str| Error::Csv(format!("row {}: bad {what}", line + 1));
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&head[i]));
        let floats = |start: usize, n: usize| -> Result<DVector<f64>> {
            (start..start + n).map(float).collect::<Result<Vec<_>>>().map(DVector::from_vec)
        };
        let mut c = 2;
        let xi = floats(c, d)?;
        c += d;
        let nu = floats(c, d)?;
        c += d;
        let charges = floats(c, ns)?;
        c += ns;
        let products = floats(c, m)?;
        c += m;
        rows.push(TraceRow {
            k: rec[0].parse().map_err(|_| bad("k"))?,
            t: float(1)?,
            xi,
            nu,
            charges,
            products,
            rank_ratio: float(c)?,
            solver_status: SolveStatus::parse(&rec[c + 1]).ok_or_else(|| bad("solver_status"))?,
            iterations: rec[c + 2].parse().map_err(|_| bad("iters"))?,
            solve_time: float(c + 3)?,
            saturated: match &rec[c + 4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("saturated")),
            },
        });
    }
    Ok(rows)
}

/// Realized closed-loop cost recomputed from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReplay {
    /// `stage_costs[k-1]` charges the state reached at step `k` and the input
    /// applied at step `k-1`.
    pub stage_costs: Vec<f64>,
    pub total: f64,
}

/// Evaluates the horizon cost terms along the recorded trajectory: tracking
/// at every recorded state after the first, input and trace terms for every
/// applied input that led to one, and smoothing between consecutive inputs.
pub fn replay_cost(rows: &[TraceRow], params: &MpcParams) -> Result<CostReplay> {
    let xd = params.desired_state();
    let mut stage_costs = Vec::with_capacity(rows.len().saturating_sub(1));
    for k in 1..rows.len() {
        let x = rows[k].state();
        check_dim("trace state", xd.len(), x.len())?;
        let u = &rows[k - 1].products;
        let e = &x - &xd;
        let mut c = e.dot(&(&params.state_weight * &e)) + u.dot(&(&params.input_weight * u));
        c += params.trace_weight * rows[k - 1].charges.norm_squared();
        if k >= 2 {
            let du = u - &rows[k - 2].products;
            c += du.dot(&(&params.smoothing_weight * &du));
        }
        stage_costs.push(c);
    }
    Ok(CostReplay {
        total: stage_costs.iter().sum(),
        stage_costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{RunStatus, ScenarioConfig};

    fn record(k: usize, seed: f64) -> StepRecord {
        let charges = DVector::from_vec(vec![0.1, -0.1 / 3.0, seed, std::f64::consts::PI * 1e-3]);
        StepRecord {
            k,
            time: k as f64 * 0.5,
            measured: DVector::from_fn(6, |i, _| 50.0 * (i as f64 + 1.0) + seed / 7.0),
            products: crate::dynamics::charge_products(&charges),
            charges,
            rank_ratio: 1.0 - 1e-17 * k as f64,
            solver_status: if k.is_multiple_of(2) { SolveStatus::Optimal } else { SolveStatus::MaxIters },
            iterations: 40 + k,
            solve_time: 1.234e-3,
            saturated: k == 0,
            objective: 0.0,
        }
    }

    fn log(records: Vec<StepRecord>) -> RunLog {
        RunLog {
            num_spacecraft: 4,
            sample_period: 0.5,
            records,
            final_state: DVector::zeros(6),
            faults: vec![],
            status: RunStatus::Completed,
            xi_des: DVector::from_vec(vec![50.0, 100.0, 150.0]),
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            header(3).join(","),
            "k,t,xi_1,xi_2,nu_1,nu_2,q_1,q_2,q_3,u_1,u_2,u_3,rank_ratio,solver_status,iters,solve_time_s,saturated"
        );
    }

    #[test]
    fn empty_log_is_header_only() {
        let mut buf = Vec::new();
        write_csv_to(&log(vec![]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_csv_from(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_bitwise() {
        let l = log((0..5).map(|k| record(k, 0.1 * k as f64 + 1e-300)).collect());
        let mut buf = Vec::new();
        write_csv_to(&l, &mut buf).unwrap();
        let rows = read_csv_from(buf.as_slice()).unwrap();
        for (row, rec) in rows.iter().zip(&l.records) {
            let want = TraceRow::from_record(rec);
            let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
            assert_eq!(bits(row.float_fields()), bits(want.float_fields()));
            assert_eq!(row, &want);
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt(-50.0), "-5.0000000000000000e1");
    }

    #[test]
    fn malformed_input_rejected() {
        assert!(read_csv_from("a,b\n1,2\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_csv_to(&log(vec![record(0, 0.0)]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace(",optimal,", ",great,");
        assert!(read_csv_from(text.as_bytes()).is_err());
    }

    #[test]
    fn replayed_cost_of_equilibrium_is_zero() {
        let cfg = ScenarioConfig::four_craft_reference();
        let mut rec = record(0, 0.0);
        rec.measured = cfg.params.desired_state();
        rec.charges = DVector::zeros(4);
        rec.products = DVector::zeros(6);
        let rows: Vec<_> = (0..3).map(|_| TraceRow::from_record(&rec)).collect();
        let c = replay_cost(&rows, &cfg.params).unwrap();
        assert_eq!(c.stage_costs, vec![0.0, 0.0]);
        assert_eq!(c.total, 0.0);
    }

    #[test]
    fn replayed_cost_terms() {
        let cfg = ScenarioConfig::four_craft_reference();
        let mut a = TraceRow::from_record(&record(0, 0.0));
        a.xi = cfg.params.xi_des.clone();
        a.nu = DVector::zeros(3);
        a.charges = DVector::from_vec(vec![0.1, 0.0, 0.0, 0.0]);
        a.products = DVector::zeros(6);
        let mut b = a.clone();
        b.xi[0] += 2.0;
        b.nu[1] = 0.5;
        let c = replay_cost(&[a, b], &cfg.params).unwrap();
        // 2^2 * 1 + 0.5^2 * 400 + 1.5 * 0.01
        assert!((c.total - (4.0 + 100.0 + 0.015)).abs() < 1e-12);
    }
}
