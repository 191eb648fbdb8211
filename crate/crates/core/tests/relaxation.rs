use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use coulomb_mpc::dynamics::{build_discrete_model, FormationConfig, PairIndex};
use coulomb_mpc::horizon::{build_horizon_problem, trajectory_cost, MpcParams, Trajectory};
use coulomb_mpc::sim::oracle::oracle_solver_settings;
use coulomb_mpc::solver::cones::cone_violation;
use coulomb_mpc::solver::{solve, SolveStatus};

struct Instance {
    cfg: FormationConfig,
    params: MpcParams,
    x0: DVector<f64>,
}

fn four_craft(horizon: usize) -> Instance {
    let mut cfg = FormationConfig::new(vec![40.0, 55.0, 60.0, 45.0]).unwrap();
    let xd = DVector::from_vec(vec![50.0, 100.0, 150.0, 0.0, 0.0, 0.0]);
    cfg.state_min = xd.add_scalar(-10.0);
    cfg.state_max = xd.add_scalar(10.0);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 400.0, 300.0, 200.0]));
    let r = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let rd = DMatrix::from_diagonal(&DVector::from_vec(vec![1e6, 2e6, 3e6, 4e6, 5e6, 6e6]));
    let params = MpcParams::new(horizon, xd.rows(0, 3).into_owned(), q, r, rd, 1.5).with_bounds_from(&cfg);
    Instance { cfg, params, x0: DVector::from_vec(vec![53.0, 109.0, 147.0, 0.01, -0.02, 0.0]) }
}

/// Relabels spacecraft `k -> sigma[k]` (spacecraft 0 stays the reference)
/// and carries masses, states, weights and bounds along.
fn relabel(inst: &Instance, sigma: &[usize]) -> Instance {
    let ns = sigma.len();
    assert_eq!(sigma[0], 0);
    let d = ns - 1;
    // state permutation: new index of old component
    let state_map: Vec<usize> = (0..2 * d)
        .map(|c| if c < d { sigma[c + 1] - 1 } else { d + sigma[c - d + 1] - 1 })
        .collect();
    let pairs = PairIndex::new(ns);
    let pair_map: Vec<usize> = pairs
        .iter()
        .map(|(i, j)| {
            let (a, b) = (sigma[i].min(sigma[j]), sigma[i].max(sigma[j]));
            pairs.index_of(a, b).unwrap()
        })
        .collect();
    let perm_vec = |v: &DVector<f64>, map: &[usize]| {
        let mut out = v.clone();
        for (old, &new) in map.iter().enumerate() {
            out[new] = v[old];
        }
        out
    };
    let perm_mat = |m: &DMatrix<f64>, map: &[usize]| {
        let mut out = m.clone();
        for (oi, &ni) in map.iter().enumerate() {
            for (oj, &nj) in map.iter().enumerate() {
                out[(ni, nj)] = m[(oi, oj)];
            }
        }
        out
    };

    let mut masses = inst.cfg.masses.clone();
    for k in 0..ns {
        masses[sigma[k]] = inst.cfg.masses[k];
    }
    let mut cfg = FormationConfig::new(masses).unwrap();
    cfg.state_min = perm_vec(&inst.cfg.state_min, &state_map);
    cfg.state_max = perm_vec(&inst.cfg.state_max, &state_map);
    let p = &inst.params;
    let xi_des = perm_vec(&p.desired_state(), &state_map).rows(0, d).into_owned();
    let params = MpcParams::new(
        p.horizon,
        xi_des,
        perm_mat(&p.state_weight, &state_map),
        perm_mat(&p.input_weight, &pair_map),
        perm_mat(&p.smoothing_weight, &pair_map),
        p.trace_weight,
    )
    .with_bounds_from(&cfg);
    Instance { cfg, params, x0: perm_vec(&inst.x0, &state_map) }
}

fn optimum(inst: &Instance) -> f64 {
    let model = build_discrete_model(&inst.params.xi_des, 0.5, &inst.cfg).unwrap();
    let hp = build_horizon_problem(&inst.x0, &model, &inst.params).unwrap();
    let r = solve(&hp.to_conic(), &oracle_solver_settings(), None).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    r.objective
}

#[test]
fn relabeling_preserves_optimal_value() {
    let base = four_craft(3);
    let v0 = optimum(&base);
    for sigma in [[0, 2, 1, 3], [0, 3, 1, 2], [0, 1, 3, 2]] {
        let v = optimum(&relabel(&base, &sigma));
        assert!((v - v0).abs() <= 1e-5 * v0.abs().max(1.0), "{sigma:?}: {v} vs {v0}");
    }
}

#[test]
fn solved_lifts_satisfy_coupling() {
    let inst = four_craft(4);
    let model = build_discrete_model(&inst.params.xi_des, 0.5, &inst.cfg).unwrap();
    let hp = build_horizon_problem(&inst.x0, &model, &inst.params).unwrap();
    let r = solve(&hp.to_conic(), &oracle_solver_settings(), None).unwrap();
    let traj = hp.extract(&r.x, &r.s).unwrap();
    for (u, q) in traj.inputs.iter().zip(&traj.lifted) {
        for (l, (i, j)) in hp.pairs.iter().enumerate() {
            // one residual from the coupling row, one from the lifted block
            assert!((u[l] - q[(i, j)]).abs() <= 2.0 * r.primal_residual + 1e-15, "{} vs {}", u[l], q[(i, j)]);
        }
        assert!(q.clone().symmetric_eigenvalues().min() >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Any charge schedule lifts to a conic-feasible point whose objective
    /// is the trajectory cost.
    #[test]
    fn rank_one_lifts_are_feasible(
        charges in proptest::collection::vec(-0.1f64..0.1, 12),
        offset in proptest::collection::vec(-1.0f64..1.0, 6),
    ) {
        let mut inst = four_craft(3);
        inst.params.state_bounds = None;
        let model = build_discrete_model(&inst.params.xi_des, 0.5, &inst.cfg).unwrap();
        let x0 = inst.params.desired_state() + DVector::from_vec(offset);
        let hp = build_horizon_problem(&x0, &model, &inst.params).unwrap();
        let qs: Vec<DVector<f64>> = charges.chunks(4).map(DVector::from_column_slice).collect();
        let traj = Trajectory::from_charges(&x0, &model, &qs);
        let (z, s) = hp.embed(&traj).unwrap();
        let prob = hp.to_conic();
        let cones = hp.cones();
        prop_assert!(s.rows(0, cones.zero).amax() <= 1e-9);
        prop_assert!(cone_violation(&s, &cones).unwrap() <= 1e-12);
        let cost = trajectory_cost(&inst.params, &traj);
        prop_assert!((prob.objective(&z) - cost).abs() <= 1e-9 * cost.abs().max(1.0));
    }
}
