//! Matrix KP side of a pole configuration: Baker-Akhiezer matrices, the
//! potential, the tau-function, and numerical residuals of the KP identities.
//!
//! Everything is evaluated in the stripped gauge
//! `psi~ = e^{-xz-xi} psi = I + sum_i a_i c_i^T / (x - x_i)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::flows::{flow, vector_field_gradient, FlowSpec};
use crate::lax::{build_lax, matrix_powers, resolvent_convolution, LaxData};
use crate::oracle::{circle_integral, norm_inf};
use crate::phase::{PhaseState, TimeVector, Tolerances};
use crate::C64;

/// Solves of `zI - L` with a condition estimate above this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// `(zI - L)^{-1}` with a conditioning check.
pub fn resolvent(l: &DMatrix<C64>, z: C64) -> Result<DMatrix<C64>> {
    let n = l.nrows();
    let shifted = DMatrix::<C64>::identity(n, n) * z - l;
    let inv = shifted.clone().lu().try_inverse().ok_or(Error::SpectralCollision {
        z,
        condition: f64::INFINITY,
    })?;
    let condition = norm_inf(&shifted) * norm_inf(&inv);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::SpectralCollision { z, condition });
    }
    Ok(inv)
}

/// Rows `c_i = -sum_k G_ik b_k` and `c*_i = sum_k G_ki a_k`, `G = (zI - L)^{-1}`.
pub fn solve_c(state: &PhaseState, z: C64) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let lax = build_lax(state)?;
    solve_c_with(&lax, state, z)
}

fn solve_c_with(lax: &LaxData, state: &PhaseState, z: C64) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let g = resolvent(&lax.l, z)?;
    let c = -(&g * state.b());
    let c_star = g.transpose() * state.a();
    Ok((c, c_star))
}

/// A random spectral parameter at distance at least `0.5 (1 + ||L||)` from
/// the spectrum of `L`.
pub fn random_spectral_parameter<R: Rng>(l: &DMatrix<C64>, rng: &mut R) -> C64 {
    let norm = norm_inf(l);
    let margin = 0.5 * (1.0 + norm);
    let radius = norm + margin * (1.0 + rng.random::<f64>());
    C64::from_polar(radius, std::f64::consts::TAU * rng.random::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Gauge {
    /// Rational part only.
    Stripped,
    /// Multiplied by `e^{xz + xi(t, z)}` (and its inverse for the adjoint).
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BASample {
    pub z: C64,
    pub x: C64,
    pub c: DMatrix<C64>,
    pub c_star: DMatrix<C64>,
    pub psi_tilde: DMatrix<C64>,
    pub psi_dagger_tilde: DMatrix<C64>,
}

fn check_pole(state: &PhaseState, x: C64, floor: f64) -> Result<()> {
    for (i, xi) in state.x().iter().enumerate() {
        let distance = (x - xi).norm();
        if distance < floor {
            return Err(Error::PoleHit { i, x, distance });
        }
    }
    Ok(())
}

/// `sum_i u_i v_i^T w_i` for rows `u_i`, `v_i` and scalar weights `w_i`.
fn weighted_outer(u: &DMatrix<C64>, v: &DMatrix<C64>, w: &[C64]) -> DMatrix<C64> {
    let weights = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    u.transpose() * weights * v
}

fn pole_weights(state: &PhaseState, x: C64, power: i32) -> Vec<C64> {
    state.x().iter().map(|xi| (x - xi).powi(-power)).collect()
}

fn psi_from(state: &PhaseState, c: &DMatrix<C64>, c_star: &DMatrix<C64>, x: C64) -> (DMatrix<C64>, DMatrix<C64>) {
    let n = state.spin_dim();
    let w = pole_weights(state, x, 1);
    let id = DMatrix::<C64>::identity(n, n);
    (&id + weighted_outer(state.a(), c, &w), id + weighted_outer(c_star, state.b(), &w))
}

/// Baker-Akhiezer pair at `(x, z)`.
pub fn psi_pair(state: &PhaseState, times: &TimeVector, z: C64, x: C64, gauge: Gauge) -> Result<BASample> {
    check_pole(state, x, Tolerances::default().eps_coll)?;
    let (c, c_star) = solve_c(state, z)?;
    let (mut psi, mut psi_dag) = psi_from(state, &c, &c_star, x);
    if gauge == Gauge::Full {
        let phase = (x * z + times.xi(z)).exp();
        psi *= phase;
        psi_dag *= phase.inv();
    }
    Ok(BASample {
        z,
        x,
        c,
        c_star,
        psi_tilde: psi,
        psi_dagger_tilde: psi_dag,
    })
}

/// `w1(x) = -sum_i a_i b_i^T / (x - x_i)`.
pub fn w1(state: &PhaseState, x: C64) -> Result<DMatrix<C64>> {
    check_pole(state, x, Tolerances::default().eps_coll)?;
    Ok(-weighted_outer(state.a(), state.b(), &pole_weights(state, x, 1)))
}

/// `V(x) = -2 sum_i a_i b_i^T / (x - x_i)^2`.
pub fn potential_v(state: &PhaseState, x: C64) -> Result<DMatrix<C64>> {
    check_pole(state, x, Tolerances::default().eps_coll)?;
    Ok(weighted_outer(state.a(), state.b(), &pole_weights(state, x, 2)) * C64::new(-2.0, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TauParams {
    pub c: C64,
    pub a: C64,
}

impl Default for TauParams {
    fn default() -> Self {
        Self {
            c: C64::new(1.0, 0.0),
            a: zero(),
        }
    }
}

impl TauParams {
    pub fn new(c: C64, a: C64) -> Result<Self> {
        if c == zero() {
            return Err(Error::InvalidArgument("tau prefactor must be nonzero".into()));
        }
        Ok(Self { c, a })
    }
}

/// `C e^{Ax} prod_i (x - x_i)`.
pub fn tau_from_poles(poles: &[C64], params: &TauParams, x: C64) -> C64 {
    poles.iter().fold(params.c * (params.a * x).exp(), |acc, xi| acc * (x - xi))
}

pub fn tau(state: &PhaseState, params: &TauParams, x: C64) -> C64 {
    tau_from_poles(state.x().as_slice(), params, x)
}

/// `A + sum_i 1 / (x - x_i)`.
pub fn dlog_tau_dx_from_poles(poles: &[C64], params: &TauParams, x: C64) -> C64 {
    poles.iter().fold(params.a, |acc, xi| acc + (x - xi).inv())
}

pub fn dlog_tau_dx(state: &PhaseState, params: &TauParams, x: C64) -> C64 {
    dlog_tau_dx_from_poles(state.x().as_slice(), params, x)
}

/// Closed-form `d/dx` and `d^2/dx^2` of the stripped pair.
fn psi_x_derivatives(
    state: &PhaseState,
    c: &DMatrix<C64>,
    c_star: &DMatrix<C64>,
    x: C64,
) -> [DMatrix<C64>; 4] {
    let w2: Vec<C64> = pole_weights(state, x, 2).into_iter().map(|w| -w).collect();
    let w3: Vec<C64> = pole_weights(state, x, 3).into_iter().map(|w| 2.0 * w).collect();
    [
        weighted_outer(state.a(), c, &w2),
        weighted_outer(state.a(), c, &w3),
        weighted_outer(c_star, state.b(), &w2),
        weighted_outer(c_star, state.b(), &w3),
    ]
}

fn max_entry(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearResidual {
    /// `max |d_t2 psi~ - (2z psi~_x + psi~_xx + V psi~)|` over the grid.
    pub direct: f64,
    /// `max |-d_t2 psi~+ - (-2z psi~+_x + psi~+_xx + psi~+ V)|` over the grid.
    pub adjoint: f64,
}

impl LinearResidual {
    pub fn max(&self) -> f64 {
        self.direct.max(self.adjoint)
    }
}

/// Residual of the gauge-reduced time-dependent Schrodinger problems
/// under `t_2`, with `d/dt_2` by central differences over `+-dt2`.
pub fn linear_problem_residual(state: &PhaseState, z: C64, x_grid: &[C64], dt2: f64) -> Result<LinearResidual> {
    let floor = Tolerances::default().eps_coll;
    let spec = |t: f64| FlowSpec::new(2, C64::new(t, 0.0), dt2);
    let forward = crate::flows::integrate(state, &spec(dt2))?.last().state.clone();
    let backward = crate::flows::integrate(state, &spec(-dt2))?.last().state.clone();
    let (c, cs) = solve_c(state, z)?;
    let (cf, csf) = solve_c(&forward, z)?;
    let (cb, csb) = solve_c(&backward, z)?;
    let mut direct = 0.0f64;
    let mut adjoint = 0.0f64;
    for &x in x_grid {
        for s in [state, &forward, &backward] {
            check_pole(s, x, floor)?;
        }
        let (psi, psi_dag) = psi_from(state, &c, &cs, x);
        let (psi_f, psi_dag_f) = psi_from(&forward, &cf, &csf, x);
        let (psi_b, psi_dag_b) = psi_from(&backward, &cb, &csb, x);
        let inv = C64::new(1.0 / (2.0 * dt2), 0.0);
        let dt_psi = (psi_f - psi_b) * inv;
        let dt_psi_dag = (psi_dag_f - psi_dag_b) * inv;
        let [px, pxx, qx, qxx] = psi_x_derivatives(state, &c, &cs, x);
        let v = potential_v(state, x)?;
        let rhs = px * (2.0 * z) + pxx + &v * &psi;
        let rhs_dag = qx * (-2.0 * z) + qxx + &psi_dag * &v;
        direct = direct.max(max_entry(&(dt_psi - rhs)));
        adjoint = adjoint.max(max_entry(&(-dt_psi_dag - rhs_dag)));
    }
    Ok(LinearResidual { direct, adjoint })
}

/// Exact `res_{z=inf} z^m psi~(x, z) psi~+(x, z)` from the resolvent calculus:
/// `-A^T D L^m B + A^T L^m D B - A^T D S D B` with `D = diag(1/(x - x_i))`
/// and `S = res z^m G R G`.
pub fn residue_of_product(state: &PhaseState, m: usize, x: C64) -> Result<DMatrix<C64>> {
    check_pole(state, x, Tolerances::default().eps_coll)?;
    let lax = build_lax(state)?;
    let powers = matrix_powers(&lax.l, m);
    let s = resolvent_convolution(&powers, &lax.r, m);
    Ok(product_residue(state, &powers[m], &s, x))
}

fn product_residue(state: &PhaseState, lm: &DMatrix<C64>, s: &DMatrix<C64>, x: C64) -> DMatrix<C64> {
    let d = DMatrix::from_diagonal(&DVector::from_vec(pole_weights(state, x, 1)));
    let (at, b) = (state.a().transpose(), state.b());
    -(&at * &d * lm * b) + &at * lm * &d * b - &at * &d * s * &d * b
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidueIdentity {
    /// Entrywise `max |res z^m psi~ psi~+ + d_tm w1|` over the samples.
    pub entrywise: f64,
    /// `max_i` of the trace of the first-order pole coefficient at `x_i`,
    /// together with `d_tm (b_i . a_i)` from the Hamiltonian field.
    pub first_order: f64,
    /// `max |tr res z^m psi~ psi~+ - d_tm d_x log tau|` over the samples.
    pub trace: f64,
}

impl ResidueIdentity {
    pub fn max(&self) -> f64 {
        self.entrywise.max(self.first_order).max(self.trace)
    }
}

/// Residual of `res z^m psi~ psi~+ = -d_tm w1`, its trace and the
/// first-order pole cancellation, for `1 <= m <= 4`.
pub fn residue_identity_residual(state: &PhaseState, m: usize, x_samples: &[C64]) -> Result<ResidueIdentity> {
    if !(1..=4).contains(&m) {
        return Err(Error::InvalidArgument(format!("residue identity needs 1 <= m <= 4, got {m}")));
    }
    let floor = Tolerances::default().eps_coll;
    let lax = build_lax(state)?;
    let powers = matrix_powers(&lax.l, m);
    let lm = &powers[m];
    let s = resolvent_convolution(&powers, &lax.r, m);
    let v = vector_field_gradient(state, m)?;

    let n = state.n_particles();
    let x = state.x();
    let mut entrywise = 0.0f64;
    let mut trace = 0.0f64;
    for &xs in x_samples {
        check_pole(state, xs, floor)?;
        let lhs = product_residue(state, lm, &s, xs);
        let w1 = pole_weights(state, xs, 1);
        let w2: Vec<C64> = pole_weights(state, xs, 2).iter().zip(v.dx.iter()).map(|(w, d)| w * d).collect();
        let rhs = weighted_outer(&v.da, state.b(), &w1) + weighted_outer(state.a(), &v.db, &w1) + weighted_outer(state.a(), state.b(), &w2);
        entrywise = entrywise.max(max_entry(&(&lhs - rhs)));
        let dlog: C64 = w2.iter().sum();
        trace = trace.max((lhs.trace() - dlog).norm());
    }

    let r = &lax.r;
    let lmr = lm * r;
    let rlm = r * lm;
    let mut first_order = 0.0f64;
    for i in 0..n {
        let mut acc = -lmr[(i, i)] + rlm[(i, i)];
        for k in 0..n {
            if k != i {
                acc -= (s[(i, k)] * r[(k, i)] + s[(k, i)] * r[(i, k)]) / (x[i] - x[k]);
            }
        }
        let constraint_rate: C64 = (0..state.spin_dim())
            .map(|al| v.db[(i, al)] * state.a()[(i, al)] + state.b()[(i, al)] * v.da[(i, al)])
            .sum();
        first_order = first_order.max(acc.norm()).max(constraint_rate.norm());
    }
    Ok(ResidueIdentity {
        entrywise,
        first_order,
        trace,
    })
}

/// Numerical `res_{x = x_i}` of `f` on a circle of radius `radius_factor`
/// times the distance from `x_i` to its nearest neighbour.
pub fn residue_at_pole<F>(state: &PhaseState, i: usize, nodes: usize, radius_factor: f64, f: F) -> DMatrix<C64>
where
    F: Fn(C64) -> DMatrix<C64>,
{
    let xi = state.x()[i];
    let nearest = state
        .x()
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i)
        .map(|(_, xk)| (xi - xk).norm())
        .fold(f64::INFINITY, f64::min);
    let radius = if nearest.is_finite() { radius_factor * nearest } else { 1.0 };
    circle_integral(xi, radius, nodes, f)
}

/// `sigma_2 / sigma_1` of a matrix (0 for rank at most one by shape).
pub fn second_singular_ratio(m: &DMatrix<C64>) -> f64 {
    let sv = m.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    match s.as_slice() {
        [first, second, ..] if *first > 0.0 => second / first,
        _ => 0.0,
    }
}

/// Per-pole numerical residues of `psi~(., z)` and their worst
/// `sigma_2 / sigma_1`, together with the distance to `a_i c_i^T`.
pub fn rank1_residue_check(state: &PhaseState, z: C64, nodes: usize, radius_factor: f64) -> Result<(f64, f64)> {
    let (c, cs) = solve_c(state, z)?;
    let mut ratio = 0.0f64;
    let mut mismatch = 0.0f64;
    for i in 0..state.n_particles() {
        let res = residue_at_pole(state, i, nodes, radius_factor, |x| psi_from(state, &c, &cs, x).0);
        ratio = ratio.max(second_singular_ratio(&res));
        let expected = state.a().row(i).transpose() * c.row(i);
        mismatch = mismatch.max(max_entry(&(res - expected)));
    }
    Ok((ratio, mismatch))
}

/// Worst `|res_{x_i} w1 + a_i b_i^T|` by contour, and the relative error of
/// `V = -2 dw1/dx` by central differences with step `h` at the sample points.
pub fn w1_consistency(state: &PhaseState, x_samples: &[C64], h: f64, nodes: usize, radius_factor: f64) -> Result<(f64, f64)> {
    let mut residue_err = 0.0f64;
    for i in 0..state.n_particles() {
        let res = residue_at_pole(state, i, nodes, radius_factor, |x| {
            -weighted_outer(state.a(), state.b(), &pole_weights(state, x, 1))
        });
        let expected = -(state.a().row(i).transpose() * state.b().row(i));
        residue_err = residue_err.max(max_entry(&(res - expected)));
    }
    let mut fd_err = 0.0f64;
    for &x in x_samples {
        let hc = C64::new(h, 0.0);
        let fd = (w1(state, x + hc)? - w1(state, x - hc)?) / (2.0 * hc);
        let v = potential_v(state, x)?;
        let expected = v * C64::new(-0.5, 0.0);
        fd_err = fd_err.max(max_entry(&(fd - &expected)) / max_entry(&expected).max(1.0));
    }
    Ok((residue_err, fd_err))
}

/// `max |w1(flowed by t_1 = s, x) - w1(x + s)|` over the samples.
pub fn t1_shift_residual(state: &PhaseState, s: C64, dt: f64, x_samples: &[C64]) -> Result<f64> {
    let shifted = flow(state, 1, s, dt)?;
    let mut worst = 0.0f64;
    for &x in x_samples {
        worst = worst.max(max_entry(&(w1(&shifted, x)? - w1(state, x + s)?)));
    }
    Ok(worst)
}

/// `n` points on the segment `from -> to`, endpoints included.
pub fn linear_grid(from: C64, to: C64, n: usize) -> Vec<C64> {
    match n {
        0 => vec![],
        1 => vec![from],
        _ => (0..n).map(|k| from + (to - from) * (k as f64 / (n - 1) as f64)).collect(),
    }
}

/// `n` points on the circle `|x| = max_i |x_i| + margin`, which stays at
/// least `margin` away from every pole.
pub fn ring_grid(state: &PhaseState, n: usize, margin: f64) -> Vec<C64> {
    let radius = state.x().iter().map(|x| x.norm()).fold(0.0, f64::max) + margin;
    (0..n)
        .map(|k| C64::from_polar(radius, std::f64::consts::TAU * (k as f64 + 0.5) / n as f64))
        .collect()
}

/// Points of a grid at distance at least `clearance` from every pole.
pub fn clear_of_poles(state: &PhaseState, grid: &[C64], clearance: f64) -> Vec<C64> {
    grid.iter()
        .copied()
        .filter(|x| state.x().iter().all(|xi| (x - xi).norm() >= clearance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::random_state;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn single(x: f64, p: f64, a: f64) -> PhaseState {
        PhaseState::from_vecs(&[c(x)], &[c(p)], &[vec![c(a)]], &[vec![c(1.0 / a)]]).unwrap()
    }

    #[test]
    fn single_particle_c_is_exact() {
        let s = single(0.3, 0.0, 2.0);
        let z = C64::new(1.5, -0.5);
        let (cc, cs) = solve_c(&s, z).unwrap();
        assert!((cc[(0, 0)] + 0.5 / z).norm() < 1e-15);
        assert!((cs[(0, 0)] - 2.0 / z).norm() < 1e-15);
    }

    #[test]
    fn defining_equations_hold() {
        let s = random_state(4, 3, 9, 1.0).unwrap();
        let lax = build_lax(&s).unwrap();
        let z = C64::new(1.3, 0.7);
        let (cc, cs) = solve_c(&s, z).unwrap();
        let shifted = DMatrix::<C64>::identity(4, 4) * z - &lax.l;
        assert!(max_entry(&(&shifted * &cc + s.b())) < 1e-12);
        assert!(max_entry(&(cs.transpose() * &shifted - s.a().transpose())) < 1e-12);
    }

    #[test]
    fn large_z_leading_term() {
        let s = random_state(3, 2, 1, 1.0).unwrap();
        let z = c(1e6);
        let (cc, cs) = solve_c(&s, z).unwrap();
        assert!(max_entry(&(cc * z + s.b())) < 1e-4);
        assert!(max_entry(&(cs * z - s.a())) < 1e-4);
    }

    #[test]
    fn eigenvalue_is_a_spectral_collision() {
        let s = single(0.0, 0.7, 1.0);
        assert!(matches!(solve_c(&s, c(-0.7)), Err(Error::SpectralCollision { .. })));
    }

    #[test]
    fn scalar_psi_closed_form() {
        let s = single(0.2, 0.4, 1.5);
        let z = C64::new(0.9, 0.3);
        let x = C64::new(1.1, -0.6);
        let ba = psi_pair(&s, &TimeVector::default(), z, x, Gauge::Stripped).unwrap();
        let expected = 1.0 - 1.0 / ((z + 0.4) * (x - 0.2));
        assert!((ba.psi_tilde[(0, 0)] - expected).norm() < 1e-15);
        let expected_dag = 1.0 + 1.0 / ((z + 0.4) * (x - 0.2));
        assert!((ba.psi_dagger_tilde[(0, 0)] - expected_dag).norm() < 1e-15);
    }

    #[test]
    fn full_gauge_factor() {
        let s = random_state(2, 2, 3, 1.0).unwrap();
        let times = TimeVector::new(vec![c(0.1), C64::new(0.0, 0.2)]).unwrap();
        let z = C64::new(2.0, 1.0);
        let x = C64::new(5.0, 1.0);
        let stripped = psi_pair(&s, &times, z, x, Gauge::Stripped).unwrap();
        let full = psi_pair(&s, &times, z, x, Gauge::Full).unwrap();
        let g = (x * z + times.xi(z)).exp();
        assert!(max_entry(&(full.psi_tilde / g - &stripped.psi_tilde)) < 1e-13);
        assert!(max_entry(&(full.psi_dagger_tilde * g - &stripped.psi_dagger_tilde)) < 1e-13);
    }

    #[test]
    fn psi_tends_to_identity() {
        let s = random_state(3, 2, 5, 1.0).unwrap();
        let far = psi_pair(&s, &TimeVector::default(), c(2.0), c(1e8), Gauge::Stripped).unwrap();
        let id = DMatrix::<C64>::identity(2, 2);
        assert!(max_entry(&(far.psi_tilde - &id)) < 1e-6);
        assert!(max_entry(&(far.psi_dagger_tilde - &id)) < 1e-6);
    }

    #[test]
    fn pole_hit_is_reported() {
        let s = single(0.5, 0.0, 1.0);
        assert!(matches!(w1(&s, c(0.5)), Err(Error::PoleHit { i: 0, .. })));
        assert!(matches!(
            psi_pair(&s, &TimeVector::default(), c(1.0), c(0.5), Gauge::Stripped),
            Err(Error::PoleHit { .. })
        ));
    }

    #[test]
    fn one_soliton_potential() {
        let s = single(0.25, 0.0, 1.0);
        let x = C64::new(1.0, 0.5);
        let v = potential_v(&s, x).unwrap();
        assert!((v[(0, 0)] + 2.0 / ((x - 0.25) * (x - 0.25))).norm() < 1e-15);
    }

    #[test]
    fn tau_roots_and_empty_product() {
        let params = TauParams::new(C64::new(2.0, 1.0), C64::new(0.3, 0.0)).unwrap();
        let x = C64::new(0.4, -0.2);
        assert_eq!(tau_from_poles(&[], &params, x), params.c * (params.a * x).exp());
        assert_eq!(dlog_tau_dx_from_poles(&[], &params, x), params.a);
        let s = random_state(3, 1, 2, 1.0).unwrap();
        assert_eq!(tau(&s, &params, s.x()[1]), c(0.0));
        assert!(TauParams::new(c(0.0), c(1.0)).is_err());
    }

    #[test]
    fn dlog_tau_matches_finite_differences() {
        let s = random_state(4, 2, 12, 1.0).unwrap();
        let params = TauParams::new(c(1.5), C64::new(0.2, -0.1)).unwrap();
        let x = C64::new(0.7, 2.3);
        let h = c(1e-5);
        let fd = ((tau(&s, &params, x + h)).ln() - tau(&s, &params, x - h).ln()) / (2.0 * h);
        let exact = dlog_tau_dx(&s, &params, x);
        assert!((fd - exact).norm() / exact.norm().max(1.0) < 1e-6);
    }

    #[test]
    fn single_pole_linear_problem() {
        let s = single(0.0, 0.6, 1.0);
        let grid = linear_grid(C64::new(1.0, 1.0), C64::new(3.0, -1.0), 7);
        let r = linear_problem_residual(&s, C64::new(1.3, 0.7), &grid, 1e-4).unwrap();
        assert!(r.max() <= 1e-8, "{r:?}");
    }

    #[test]
    fn residue_identity_at_m1() {
        let s = random_state(3, 2, 4, 1.0).unwrap();
        let samples = linear_grid(C64::new(-4.0, 3.0), C64::new(4.0, 3.5), 9);
        let r = residue_identity_residual(&s, 1, &samples).unwrap();
        assert!(r.max() <= 1e-12, "{r:?}");
    }

    #[test]
    fn residue_identity_rejects_large_m() {
        let s = random_state(2, 1, 4, 1.0).unwrap();
        assert!(residue_identity_residual(&s, 5, &[c(9.0)]).is_err());
        assert!(residue_identity_residual(&s, 0, &[c(9.0)]).is_err());
    }

    #[test]
    fn singular_ratio_of_outer_product() {
        let u = DMatrix::from_column_slice(3, 1, &[c(1.0), C64::new(0.0, 2.0), c(-1.0)]);
        let v = DMatrix::from_row_slice(1, 3, &[c(0.5), c(1.0), C64::new(3.0, 1.0)]);
        assert!(second_singular_ratio(&(u * v)) < 1e-15);
        assert!((second_singular_ratio(&DMatrix::<C64>::identity(2, 2)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grid_helpers() {
        let g = linear_grid(c(0.0), c(1.0), 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], c(1.0));
        let s = single(0.5, 0.0, 1.0);
        assert_eq!(clear_of_poles(&s, &g, 0.3).len(), 2);
    }
}
