//! Collinear Coulomb formation dynamics.
//!
//! Positions are scalars along the formation line. With charges `q` (units of
//! 10 mC) the absolute accelerations are `x'' = G~(x) L(q)` where `L(q)` stacks
//! the pairwise charge products, and the relative coordinates
//! `xi_i = x_{i+1} - x_1` obey `xi'' = G(xi) L(q)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Coulomb constant in N m^2 / (10 mC)^2.
pub const DEFAULT_COULOMB_CONSTANT: f64 = 8.99e5;

/// Minimum allowed separation between any two spacecraft [m].
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-3;

/// Physical description of the formation and its hard limits.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationConfig {
    pub masses: Vec<f64>,
    pub coulomb_constant: f64,
    /// Bounds on the packed relative state `[xi; nu]`, length `2(Ns-1)`.
    pub state_min: DVector<f64>,
    pub state_max: DVector<f64>,
    /// Bounds on individual charges, length `Ns`.
    pub charge_min: DVector<f64>,
    pub charge_max: DVector<f64>,
    /// Optional bounds on the charge products, length `Ns(Ns-1)/2`.
    pub product_min: Option<DVector<f64>>,
    pub product_max: Option<DVector<f64>>,
    pub min_separation: f64,
}

impl FormationConfig {
    /// Formation with the given masses, the default Coulomb constant and no
    /// state or charge limits.
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "a formation needs at least two spacecraft, got {n}"
            )));
        }
        let ns = 2 * (n - 1);
        let cfg = Self {
            masses,
            coulomb_constant: DEFAULT_COULOMB_CONSTANT,
            state_min: DVector::from_element(ns, f64::NEG_INFINITY),
            state_max: DVector::from_element(ns, f64::INFINITY),
            charge_min: DVector::from_element(n, f64::NEG_INFINITY),
            charge_max: DVector::from_element(n, f64::INFINITY),
            product_min: None,
            product_max: None,
            min_separation: DEFAULT_MIN_SEPARATION,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_spacecraft(&self) -> usize {
        self.masses.len()
    }

    pub fn num_pairs(&self) -> usize {
        pair_count(self.num_spacecraft())
    }

    pub fn state_dim(&self) -> usize {
        2 * (self.num_spacecraft() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_spacecraft();
        if n < 2 {
            return Err(Error::Config("need at least two spacecraft".into()));
        }
        if let Some(m) = self.masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::Config(format!("mass {m} is not strictly positive")));
        }
        if !(self.coulomb_constant > 0.0 && self.coulomb_constant.is_finite()) {
            return Err(Error::Config("Coulomb constant must be positive".into()));
        }
        if !(self.min_separation > 0.0) {
            return Err(Error::Config("separation guard must be positive".into()));
        }
        check_dim("state_min", self.state_dim(), self.state_min.len())?;
        check_dim("state_max", self.state_dim(), self.state_max.len())?;
        check_dim("charge_min", n, self.charge_min.len())?;
        check_dim("charge_max", n, self.charge_max.len())?;
        strictly_below("state", &self.state_min, &self.state_max)?;
        strictly_below("charge", &self.charge_min, &self.charge_max)?;
        match (&self.product_min, &self.product_max) {
            (Some(lo), Some(hi)) => {
                check_dim("product_min", self.num_pairs(), lo.len())?;
                check_dim("product_max", self.num_pairs(), hi.len())?;
                strictly_below("product", lo, hi)?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "product bounds must be given as a min/max pair".into(),
                ))
            }
        }
        Ok(())
    }
}

fn strictly_below(what: &str, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<()> {
    for (k, (a, b)) in lo.iter().zip(hi.iter()).enumerate() {
        if !(a < b) {
            return Err(Error::Config(format!(
                "{what} bound {k}: min {a} is not below max {b}"
            )));
        }
    }
    Ok(())
}

/// Number of unordered spacecraft pairs, `Ns choose 2`.
pub fn pair_count(num_spacecraft: usize) -> usize {
    num_spacecraft * num_spacecraft.saturating_sub(1) / 2
}

/// Maps a flat charge-product index to its spacecraft pair.
///
/// Pairs are zero-based and ordered `(0,1), (0,2), .., (0,Ns-1), (1,2), ..`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    num_spacecraft: usize,
    table: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn new(num_spacecraft: usize) -> Self {
        let table = (0..num_spacecraft)
            .flat_map(|i| (i + 1..num_spacecraft).map(move |j| (i, j)))
            .collect();
        Self {
            num_spacecraft,
            table,
        }
    }

    pub fn num_spacecraft(&self) -> usize {
        self.num_spacecraft
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn pair(&self, l: usize) -> (usize, usize) {
        self.table[l]
    }

    /// Flat index of the pair `{i, j}`, in either order.
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if a == b || b >= self.num_spacecraft {
            return None;
        }
        // rows before `a` contribute (n-1) + (n-2) + .. + (n-a) pairs
        let n = self.num_spacecraft;
        Some(a * (2 * n - a - 1) / 2 + (b - a - 1))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.table.iter().copied()
    }
}

/// Stacks all pairwise charge products `q_i q_j` in [`PairIndex`] order.
pub fn charge_products(q: &DVector<f64>) -> DVector<f64> {
    let pairs = PairIndex::new(q.len());
    DVector::from_iterator(pairs.len(), pairs.iter().map(|(i, j)| q[i] * q[j]))
}

/// Absolute positions and velocities of every spacecraft.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsoluteState {
    pub positions: DVector<f64>,
    pub velocities: DVector<f64>,
}

impl AbsoluteState {
    pub fn to_relative(&self) -> RelativeState {
        let n = self.positions.len();
        RelativeState {
            xi: DVector::from_fn(n - 1, |i, _| self.positions[i + 1] - self.positions[0]),
            nu: DVector::from_fn(n - 1, |i, _| self.velocities[i + 1] - self.velocities[0]),
        }
    }
}

/// Positions and velocities of spacecraft `2..Ns` relative to spacecraft 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeState {
    pub xi: DVector<f64>,
    pub nu: DVector<f64>,
}

impl RelativeState {
    pub fn new(xi: DVector<f64>, nu: DVector<f64>) -> Result<Self> {
        check_dim("relative velocity", xi.len(), nu.len())?;
        Ok(Self { xi, nu })
    }

    pub fn at_rest(xi: DVector<f64>) -> Self {
        let nu = DVector::zeros(xi.len());
        Self { xi, nu }
    }

    /// Splits a packed state `[xi; nu]`.
    pub fn from_packed(packed: &DVector<f64>) -> Result<Self> {
        if packed.len() < 2 || !packed.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                context: "packed relative state",
                expected: 2 * (packed.len() / 2).max(1),
                actual: packed.len(),
            });
        }
        let d = packed.len() / 2;
        Ok(Self {
            xi: packed.rows(0, d).into_owned(),
            nu: packed.rows(d, d).into_owned(),
        })
    }

    pub fn packed(&self) -> DVector<f64> {
        let d = self.xi.len();
        DVector::from_fn(2 * d, |k, _| if k < d { self.xi[k] } else { self.nu[k - d] })
    }

    pub fn num_spacecraft(&self) -> usize {
        self.xi.len() + 1
    }

    /// Absolute positions with spacecraft 1 at the origin.
    pub fn implied_positions(&self) -> DVector<f64> {
        DVector::from_fn(self.xi.len() + 1, |i, _| if i == 0 { 0.0 } else { self.xi[i - 1] })
    }

    pub fn is_finite(&self) -> bool {
        self.xi.iter().chain(self.nu.iter()).all(|v| v.is_finite())
    }
}

fn check_separation(x: &DVector<f64>, guard: f64) -> Result<()> {
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let distance = (x[i] - x[j]).abs();
            if !(distance >= guard) {
                return Err(Error::Singularity { i, j, distance });
            }
        }
    }
    Ok(())
}

/// The `Ns x m` matrix mapping charge products to absolute accelerations.
///
/// Column `l` for pair `(i, j)` holds `k/m_i (x_i - x_j)/|x_i - x_j|^3` in row
/// `i` and the mirrored term in row `j`.
pub fn absolute_input_matrix(x: &DVector<f64>, cfg: &FormationConfig) -> Result<DMatrix<f64>> {
    let n = cfg.num_spacecraft();
    check_dim("positions", n, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("positions"));
    }
    check_separation(x, cfg.min_separation)?;
    let pairs = PairIndex::new(n);
    let mut g = DMatrix::zeros(n, pairs.len());
    for (l, (i, j)) in pairs.iter().enumerate() {
        let d = x[i] - x[j];
        let inv = d / (d.abs() * d * d);
        g[(i, l)] = cfg.coulomb_constant / cfg.masses[i] * inv;
        g[(j, l)] = -cfg.coulomb_constant / cfg.masses[j] * inv;
    }
    Ok(g)
}

/// The `(Ns-1) x m` matrix mapping charge products to relative accelerations.
pub fn relative_input_matrix(xi: &DVector<f64>, cfg: &FormationConfig) -> Result<DMatrix<f64>> {
    check_dim("relative positions", cfg.num_spacecraft() - 1, xi.len())?;
    let x = DVector::from_fn(xi.len() + 1, |i, _| if i == 0 { 0.0 } else { xi[i - 1] });
    let g_abs = absolute_input_matrix(&x, cfg)?;
    let mut g = DMatrix::zeros(xi.len(), g_abs.ncols());
    for r in 0..xi.len() {
        let row = g_abs.row(r + 1) - g_abs.row(0);
        g.set_row(r, &row);
    }
    Ok(g)
}

fn rhs_with_products(
    state: &RelativeState,
    products: &DVector<f64>,
    cfg: &FormationConfig,
) -> Result<RelativeState> {
    let g = relative_input_matrix(&state.xi, cfg)?;
    Ok(RelativeState {
        xi: state.nu.clone(),
        nu: g * products,
    })
}

/// Time derivative of the relative state under charges `q`.
pub fn continuous_rhs(
    state: &RelativeState,
    q: &DVector<f64>,
    cfg: &FormationConfig,
) -> Result<RelativeState> {
    check_dim("charges", cfg.num_spacecraft(), q.len())?;
    check_dim("relative velocity", state.xi.len(), state.nu.len())?;
    rhs_with_products(state, &charge_products(q), cfg)
}

fn axpy(state: &RelativeState, k: &RelativeState, a: f64) -> RelativeState {
    RelativeState {
        xi: &state.xi + &k.xi * a,
        nu: &state.nu + &k.nu * a,
    }
}

/// One classical Runge-Kutta step with the charges held over `[t, t + h]`.
pub fn rk4_step(
    state: &RelativeState,
    q: &DVector<f64>,
    h: f64,
    cfg: &FormationConfig,
) -> Result<RelativeState> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    check_dim("charges", cfg.num_spacecraft(), q.len())?;
    check_dim("relative velocity", state.xi.len(), state.nu.len())?;
    let u = charge_products(q);
    let k1 = rhs_with_products(state, &u, cfg)?;
    let k2 = rhs_with_products(&axpy(state, &k1, h / 2.0), &u, cfg)?;
    let k3 = rhs_with_products(&axpy(state, &k2, h / 2.0), &u, cfg)?;
    let k4 = rhs_with_products(&axpy(state, &k3, h), &u, cfg)?;
    let w = h / 6.0;
    Ok(RelativeState {
        xi: &state.xi + (&k1.xi + &k2.xi * 2.0 + &k3.xi * 2.0 + &k4.xi) * w,
        nu: &state.nu + (&k1.nu + &k2.nu * 2.0 + &k3.nu * 2.0 + &k4.nu) * w,
    })
}

/// Propagates over one sample period `h` with `substeps` RK4 steps, holding
/// `q` constant.
pub fn propagate_zoh(
    state: &RelativeState,
    q: &DVector<f64>,
    h: f64,
    substeps: usize,
    cfg: &FormationConfig,
) -> Result<RelativeState> {
    if substeps == 0 {
        return Err(Error::Config("substep count must be at least one".into()));
    }
    let dt = h / substeps as f64;
    let mut s = state.clone();
    for _ in 0..substeps {
        s = rk4_step(&s, q, dt, cfg)?;
    }
    Ok(s)
}

/// Linear prediction model `X[k+1] = A X[k] + B u[k]` with the input matrix
/// frozen at the desired formation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub sample_period: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub linearization_point: DVector<f64>,
}

impl DiscreteModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn predict(&self, packed_state: &DVector<f64>, products: &DVector<f64>) -> DVector<f64> {
        &self.a * packed_state + &self.b * products
    }
}

/// Builds the frozen-coefficient model at `xi_des`.
///
/// With `G = relative_input_matrix(xi_des)` held fixed the relative motion is a
/// double integrator, whose exact zero-order-hold map is
/// `A = [[I, hI], [0, I]]`, `B = [h^2/2 G; h G]`.
pub fn build_discrete_model(
    xi_des: &DVector<f64>,
    h: f64,
    cfg: &FormationConfig,
) -> Result<DiscreteModel> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("sample period must be positive, got {h}")));
    }
    let g = relative_input_matrix(xi_des, cfg)?;
    let d = xi_des.len();
    let mut a = DMatrix::identity(2 * d, 2 * d);
    for i in 0..d {
        a[(i, d + i)] = h;
    }
    let mut b = DMatrix::zeros(2 * d, g.ncols());
    b.view_mut((0, 0), (d, g.ncols())).copy_from(&(&g * (0.5 * h * h)));
    b.view_mut((d, 0), (d, g.ncols())).copy_from(&(&g * h));
    Ok(DiscreteModel {
        sample_period: h,
        a,
        b,
        linearization_point: xi_des.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(masses: &[f64]) -> FormationConfig {
        FormationConfig::new(masses.to_vec()).unwrap()
    }

    /// Direct pairwise evaluation of Newton's law with Coulomb forces.
    fn accel_oracle(x: &[f64], q: &[f64], masses: &[f64], kc: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut a = 0.0;
                for j in 0..x.len() {
                    if j != i {
                        let d = x[i] - x[j];
                        a += kc / masses[i] * d / d.abs().powi(3) * q[i] * q[j];
                    }
                }
                a
            })
            .collect()
    }

    #[test]
    fn pair_table_for_three() {
        let p = PairIndex::new(3);
        assert_eq!(p.iter().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
        for l in 0..p.len() {
            let (i, j) = p.pair(l);
            assert_eq!(p.index_of(i, j), Some(l));
            assert_eq!(p.index_of(j, i), Some(l));
        }
        assert_eq!(p.index_of(1, 1), None);
        assert_eq!(p.index_of(0, 3), None);
        assert_eq!(PairIndex::new(5).index_of(3, 4), Some(9));
    }

    #[test]
    fn products_by_definition() {
        assert_eq!(charge_products(&DVector::zeros(3)), DVector::zeros(3));
        assert_eq!(
            charge_products(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DVector::from_vec(vec![2.0, 3.0, 6.0])
        );
    }

    #[test]
    fn two_body_absolute_column() {
        let c = cfg(&[1.0, 1.0]);
        let d = 7.0;
        let g = absolute_input_matrix(&DVector::from_vec(vec![0.0, d]), &c).unwrap();
        let k = c.coulomb_constant / (d * d);
        assert!((g[(0, 0)] + k).abs() < 1e-9 * k);
        assert!((g[(1, 0)] - k).abs() < 1e-9 * k);
    }

    #[test]
    fn two_body_relative_gain() {
        let m = 50.0;
        let d = 40.0;
        let c = cfg(&[m, m]);
        let g = relative_input_matrix(&DVector::from_vec(vec![d]), &c).unwrap();
        let expected = 2.0 * c.coulomb_constant / (m * d * d);
        assert!((g[(0, 0)] - expected).abs() < 1e-12 * expected);
        let s = RelativeState::at_rest(DVector::from_vec(vec![d]));
        let q = DVector::from_vec(vec![0.03, -0.05]);
        let ds = continuous_rhs(&s, &q, &c).unwrap();
        assert!((ds.nu[0] - expected * 0.03 * -0.05).abs() < 1e-15);
    }

    #[test]
    fn four_craft_relative_matches_pairwise_sum() {
        let masses = [50.0; 4];
        let c = cfg(&masses);
        let xi = DVector::from_vec(vec![50.0, 100.0, 150.0]);
        let g = relative_input_matrix(&xi, &c).unwrap();
        let x = [0.0, 50.0, 100.0, 150.0];
        let q = [0.07, -0.02, 0.05, -0.09];
        let acc = accel_oracle(&x, &q, &masses, c.coulomb_constant);
        let pred = &g * charge_products(&DVector::from_vec(q.to_vec()));
        for i in 0..3 {
            let want = acc[i + 1] - acc[0];
            assert!((pred[i] - want).abs() <= 1e-12 * want.abs().max(1e-12), "{i}");
        }
    }

    #[test]
    fn three_craft_equal_charge_signs() {
        // equal charges repel: the middle spacecraft is pushed toward the far
        // side less than the outer ones are pushed away
        let c = cfg(&[10.0, 10.0, 10.0]);
        let s = RelativeState::at_rest(DVector::from_vec(vec![10.0, 30.0]));
        let q = DVector::from_element(3, 0.1);
        let ds = continuous_rhs(&s, &q, &c).unwrap();
        let acc = accel_oracle(&[0.0, 10.0, 30.0], &[0.1; 3], &c.masses, c.coulomb_constant);
        assert!(acc[0] < 0.0 && acc[2] > 0.0);
        assert!((ds.nu[0] - (acc[1] - acc[0])).abs() < 1e-12);
        assert!((ds.nu[1] - (acc[2] - acc[0])).abs() < 1e-12);
        assert!(ds.nu[0] > 0.0 && ds.nu[1] > 0.0);
    }

    #[test]
    fn coincident_positions_rejected() {
        let c = cfg(&[1.0, 1.0, 1.0]);
        let err = absolute_input_matrix(&DVector::from_vec(vec![0.0, 5.0, 5.0]), &c).unwrap_err();
        assert!(matches!(err, Error::Singularity { i: 1, j: 2, .. }));
        let err = relative_input_matrix(&DVector::from_vec(vec![0.0005, 3.0]), &c).unwrap_err();
        assert!(matches!(err, Error::Singularity { i: 0, j: 1, .. }));
        assert!(matches!(
            absolute_input_matrix(&DVector::from_vec(vec![0.0, f64::NAN, 2.0]), &c),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn dimension_errors() {
        let c = cfg(&[1.0, 1.0, 1.0]);
        assert!(matches!(
            absolute_input_matrix(&DVector::zeros(2), &c),
            Err(Error::Dimension { .. })
        ));
        let s = RelativeState::at_rest(DVector::from_vec(vec![1.0, 2.0]));
        assert!(continuous_rhs(&s, &DVector::zeros(2), &c).is_err());
        assert!(rk4_step(&s, &DVector::zeros(3), 0.0, &c).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FormationConfig::new(vec![1.0]).is_err());
        assert!(FormationConfig::new(vec![1.0, -2.0]).is_err());
        let mut c = cfg(&[1.0, 1.0]);
        c.state_min[0] = 5.0;
        c.state_max[0] = 5.0;
        assert!(c.validate().is_err());
        let mut c = cfg(&[1.0, 1.0]);
        c.product_min = Some(DVector::from_element(1, -1.0));
        assert!(c.validate().is_err());
        c.product_max = Some(DVector::from_element(1, 1.0));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unforced_rk4_is_exact_drift() {
        let c = cfg(&[3.0, 4.0, 5.0]);
        let s = RelativeState::new(
            DVector::from_vec(vec![10.0, 25.0]),
            DVector::from_vec(vec![0.25, -0.125]),
        )
        .unwrap();
        let h = 0.5;
        let next = rk4_step(&s, &DVector::zeros(3), h, &c).unwrap();
        assert_eq!(next.nu, s.nu);
        assert_eq!(next.xi, &s.xi + &s.nu * h);
    }

    #[test]
    fn rk4_local_error_is_fifth_order() {
        let c = cfg(&[2.0, 2.0, 2.0]);
        let s = RelativeState::new(
            DVector::from_vec(vec![1.0, 2.5]),
            DVector::from_vec(vec![0.01, -0.02]),
        )
        .unwrap();
        let q = DVector::from_vec(vec![0.002, -0.0015, 0.001]);
        let reference = |h: f64| propagate_zoh(&s, &q, h, 1000, &c).unwrap();
        let err = |h: f64| (rk4_step(&s, &q, h, &c).unwrap().packed() - reference(h).packed()).norm();
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 32.0).abs() < 4.0, "ratio {ratio}");
    }

    #[test]
    fn half_steps_agree_with_full_step() {
        let c = cfg(&[50.0; 4]);
        let s = RelativeState::at_rest(DVector::from_vec(vec![53.0, 109.0, 147.0]));
        let q = DVector::from_vec(vec![0.1, -0.1, 0.05, 0.08]);
        let one = rk4_step(&s, &q, 0.5, &c).unwrap();
        let two = propagate_zoh(&s, &q, 0.5, 2, &c).unwrap();
        let change = (one.packed() - s.packed()).norm();
        assert!((one.packed() - two.packed()).norm() < 1e-6 * change);
    }

    #[test]
    fn discrete_model_block_structure() {
        let c = cfg(&[50.0, 50.0]);
        let m = build_discrete_model(&DVector::from_vec(vec![50.0]), 0.5, &c).unwrap();
        assert_eq!(m.a, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        let g = relative_input_matrix(&DVector::from_vec(vec![50.0]), &c).unwrap()[(0, 0)];
        assert!((m.b[(0, 0)] - 0.125 * g).abs() < 1e-15);
        assert!((m.b[(1, 0)] - 0.5 * g).abs() < 1e-15);

        let c4 = cfg(&[50.0; 4]);
        let m4 = build_discrete_model(&DVector::from_vec(vec![50.0, 100.0, 150.0]), 0.5, &c4).unwrap();
        let x = DVector::from_vec(vec![53.0, 109.0, 147.0, 0.1, -0.2, 0.3]);
        assert_eq!(m4.predict(&x, &DVector::zeros(6)), &m4.a * &x);
        assert_eq!(m4.b.rank(1e-12), 3);
    }

    #[test]
    fn frozen_model_matches_rk4_at_linearization_point() {
        let c = cfg(&[50.0; 4]);
        let xi_des = DVector::from_vec(vec![50.0, 100.0, 150.0]);
        for h in [0.5, 0.25] {
            let m = build_discrete_model(&xi_des, h, &c).unwrap();
            let s = RelativeState::at_rest(xi_des.clone());
            let q = DVector::from_vec(vec![0.1, -0.05, 0.08, 0.02]);
            let truth = rk4_step(&s, &q, h, &c).unwrap().packed();
            let pred = m.predict(&s.packed(), &charge_products(&q));
            let change = (&truth - s.packed()).norm();
            // frozen-gain error is O(h^3) in position and O(h^2) in velocity
            assert!((&truth - &pred).norm() < 1e-3 * change, "h={h}");
        }
    }
}
