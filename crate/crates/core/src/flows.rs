//! Hierarchy flows `t_m` as ODEs on [`PhaseState`].
//!
//! Two vector fields are provided. [`vector_field_gradient`] is the
//! Hamiltonian field of `H_m = tr L^m`. [`vector_field_residue`] assembles
//! `x'`, `a'`, `b'` from residues at `z = infinity` of products of the
//! Baker-Akhiezer vectors `c_i`, `c_i^*`, reduced exactly to polynomials in
//! `L`; its `p'` is borrowed from the gradient route.
//!
//! The residue route fixes `a'` and `b'` only through the products
//! `a_i b_i^T`. Its spin components differ from the Hamiltonian field by
//! the gauge rotation `a_i' += r_i a_i`, `b_i' -= r_i b_i` with
//! `r_i = (L^m)_ii`; see [`residue_gauge_rate`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lax::{build_lax_with_floor, commutator, grad_from_lax, hamiltonians_of, matrix_powers, resolvent_convolution, Gradient};
use crate::phase::{PhaseState, Tolerances};
use crate::C64;

/// Number of Hamiltonians recorded per trajectory sample.
pub const RECORDED_HAMILTONIANS: usize = 5;

/// Velocity `(x', p', a', b')` at a phase point.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub dx: DVector<C64>,
    pub dp: DVector<C64>,
    pub da: DMatrix<C64>,
    pub db: DMatrix<C64>,
}

impl Tangent {
    /// Hamiltonian vector field of a function with gradient `g`.
    pub fn hamiltonian(g: &Gradient) -> Self {
        Self {
            dx: g.dp.clone(),
            dp: -&g.dx,
            da: g.db.clone(),
            db: -&g.da,
        }
    }

    pub fn to_flat(&self) -> Vec<C64> {
        let mut out: Vec<C64> = self.dx.iter().chain(self.dp.iter()).copied().collect();
        for m in [&self.da, &self.db] {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
        }
        out
    }

    /// Removes the per-particle gauge rotation `a_i' = r_i a_i`, `b_i' = -r_i b_i`.
    pub fn without_gauge(&self, state: &PhaseState, rates: &[C64]) -> Self {
        let mut out = self.clone();
        for (i, &r) in rates.iter().enumerate() {
            for al in 0..state.spin_dim() {
                out.da[(i, al)] -= r * state.a()[(i, al)];
                out.db[(i, al)] += r * state.b()[(i, al)];
            }
        }
        out
    }
}

fn require_order(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("hierarchy index m must be at least 1".into()));
    }
    Ok(())
}

/// `x_i' = dH_m/dp_i`, `p_i' = -dH_m/dx_i`, `a_i' = dH_m/db_i`, `b_i' = -dH_m/da_i`.
pub fn vector_field_gradient(state: &PhaseState, m: usize) -> Result<Tangent> {
    vector_field_gradient_with_floor(state, m, Tolerances::default().eps_coll)
}

pub fn vector_field_gradient_with_floor(state: &PhaseState, m: usize, floor: f64) -> Result<Tangent> {
    require_order(m)?;
    let lax = build_lax_with_floor(state, floor)?;
    Ok(Tangent::hamiltonian(&grad_from_lax(state, &lax, m)))
}

/// Residue-route velocity.
///
/// With `S = res z^m (z - L)^{-1} R (z - L)^{-1}`:
///
/// ```text
/// x_i' = -S_ii
/// a_i' =  sum_k (L^m)_ki a_k - sum_{k != i} S_ki a_k / (x_i - x_k)
/// b_i' = -sum_k (L^m)_ik b_k - sum_{k != i} S_ik b_k / (x_i - x_k)
/// ```
///
/// `p'` is taken from the gradient route.
pub fn vector_field_residue(state: &PhaseState, m: usize) -> Result<Tangent> {
    require_order(m)?;
    let lax = build_lax_with_floor(state, Tolerances::default().eps_coll)?;
    let n = state.n_particles();
    let spin_dim = state.spin_dim();
    let x = state.x();
    let (a, b) = (state.a(), state.b());

    let powers = matrix_powers(&lax.l, m);
    let lm = &powers[m];
    let s = resolvent_convolution(&powers, &lax.r, m);

    let mut dx = DVector::zeros(n);
    let mut da = lm.transpose() * a;
    let mut db = -(lm * b);
    for i in 0..n {
        dx[i] = -s[(i, i)];
        for k in 0..n {
            if k == i {
                continue;
            }
            let inv = (x[i] - x[k]).inv();
            for al in 0..spin_dim {
                da[(i, al)] -= s[(k, i)] * a[(k, al)] * inv;
                db[(i, al)] -= s[(i, k)] * b[(k, al)] * inv;
            }
        }
    }
    let dp = -grad_from_lax(state, &lax, m).dx;
    Ok(Tangent { dx, dp, da, db })
}

/// `r_i = (L^m)_ii`: rate of the gauge rotation separating the residue-route
/// spin velocities from the Hamiltonian ones.
pub fn residue_gauge_rate(state: &PhaseState, m: usize) -> Result<Vec<C64>> {
    require_order(m)?;
    let lax = build_lax_with_floor(state, Tolerances::default().eps_coll)?;
    let lm = matrix_powers(&lax.l, m).pop().expect("L^m");
    Ok(lm.diagonal().iter().copied().collect())
}

/// Newtonian pole acceleration under `t_2`:
/// `x_i'' = -8 sum_{k != i} (b_i.a_k)(b_k.a_i) / (x_i - x_k)^3`.
pub fn pole_acceleration(state: &PhaseState) -> Vec<C64> {
    let n = state.n_particles();
    let x = state.x();
    (0..n)
        .map(|i| {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                if k != i {
                    let d = x[i] - x[k];
                    acc -= 8.0 * state.pairing(i, k) * state.pairing(k, i) / (d * d * d);
                }
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classic fixed-step fourth-order Runge-Kutta.
    Rk4,
    /// Dormand-Prince 5(4) with step-size control.
    Rk45,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk4" => Ok(Method::Rk4),
            "rk45" => Ok(Method::Rk45),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    /// Hierarchy time index.
    pub m: usize,
    /// End point of the straight segment from 0.
    pub t_final: C64,
    /// Step length along the segment (initial step for RK45).
    pub dt: f64,
    pub method: Method,
    /// Record one sample every this many (accepted) steps; the end point is always recorded.
    pub record_every: usize,
    pub max_steps: usize,
    /// Local error tolerance for RK45.
    pub tolerance: f64,
    /// Integration aborts when two poles come closer than this.
    pub eps_coll: f64,
}

impl FlowSpec {
    pub fn new(m: usize, t_final: C64, dt: f64) -> Self {
        Self {
            m,
            t_final,
            dt,
            method: Method::Rk4,
            record_every: 1,
            max_steps: 10_000_000,
            tolerance: 1e-12,
            eps_coll: Tolerances::default().eps_coll,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    fn validate(&self) -> Result<()> {
        require_order(self.m)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be at least 1".into()));
        }
        if !(self.t_final.re.is_finite() && self.t_final.im.is_finite()) {
            return Err(Error::NonFinite("t_final"));
        }
        if self.method == Method::Rk45 && !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("RK45 tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub t: C64,
    pub state: PhaseState,
    /// `max_i |b_i.a_i - 1|`.
    pub drift: f64,
    /// `H_1, ..., H_5`.
    pub hamiltonians: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub m: usize,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories hold at least the initial sample")
    }

    pub fn max_drift(&self) -> f64 {
        self.samples.iter().map(|s| s.drift).fold(0.0, f64::max)
    }

    /// `max_{k, t} |H_k(t) - H_k(0)| / (1 + |H_k(0)|)`.
    pub fn conservation_defect(&self) -> f64 {
        let h0 = &self.samples[0].hamiltonians;
        self.samples
            .iter()
            .flat_map(|s| {
                s.hamiltonians
                    .iter()
                    .zip(h0)
                    .map(|(h, h0)| (h - h0).norm() / (1.0 + h0.norm()))
            })
            .fold(0.0, f64::max)
    }
}

fn make_sample(step: usize, t: C64, state: PhaseState, floor: f64) -> Result<Sample> {
    let lax = build_lax_with_floor(&state, floor)?;
    Ok(Sample {
        step,
        t,
        drift: state.constraint_drift(),
        hamiltonians: hamiltonians_of(&lax.l, RECORDED_HAMILTONIANS),
        state,
    })
}

struct Field<'a> {
    n: usize,
    spin_dim: usize,
    m: usize,
    floor: f64,
    base: &'a PhaseState,
}

impl Field<'_> {
    fn eval(&self, y: &[C64], t: C64) -> Result<Vec<C64>> {
        let s = PhaseState::from_flat(self.n, self.spin_dim, y)?;
        vector_field_gradient_with_floor(&s, self.m, self.floor)
            .map(|v| v.to_flat())
            .map_err(|e| with_time(e, t))
    }

    fn state(&self, y: &[C64]) -> Result<PhaseState> {
        let _ = self.base;
        PhaseState::from_flat(self.n, self.spin_dim, y)
    }
}

fn with_time(e: Error, t: C64) -> Error {
    match e {
        Error::CollidingPoles { i, k, distance, floor, .. } => Error::CollidingPoles {
            i,
            k,
            distance,
            floor,
            time: Some(t),
        },
        other => other,
    }
}

fn axpy(y: &[C64], h: C64, k: &[C64]) -> Vec<C64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Integrates the `t_m` flow along the segment `0 -> t_final`.
pub fn integrate(state: &PhaseState, spec: &FlowSpec) -> Result<Trajectory> {
    spec.validate()?;
    state.check_separation(spec.eps_coll)?;
    let field = Field {
        n: state.n_particles(),
        spin_dim: state.spin_dim(),
        m: spec.m,
        floor: spec.eps_coll,
        base: state,
    };
    let mut samples = vec![make_sample(0, C64::new(0.0, 0.0), state.clone(), spec.eps_coll)?];
    let length = spec.t_final.norm();
    if length == 0.0 {
        return Ok(Trajectory { m: spec.m, samples });
    }
    match spec.method {
        Method::Rk4 => rk4(&field, spec, length, &mut samples)?,
        Method::Rk45 => rk45(&field, spec, length, &mut samples)?,
    }
    Ok(Trajectory { m: spec.m, samples })
}

fn rk4(field: &Field<'_>, spec: &FlowSpec, length: f64, samples: &mut Vec<Sample>) -> Result<()> {
    let steps = (length / spec.dt).ceil() as usize;
    if steps > spec.max_steps {
        return Err(Error::StepLimitExceeded {
            steps,
            limit: spec.max_steps,
        });
    }
    let h = spec.t_final / steps as f64;
    let mut y = samples[0].state.to_flat();
    for step in 1..=steps {
        let t = h * (step - 1) as f64;
        let k1 = field.eval(&y, t)?;
        let k2 = field.eval(&axpy(&y, h / 2.0, &k1), t + h / 2.0)?;
        let k3 = field.eval(&axpy(&y, h / 2.0, &k2), t + h / 2.0)?;
        let k4 = field.eval(&axpy(&y, h, &k3), t + h)?;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step.is_multiple_of(spec.record_every) || step == steps {
            let t_now = h * step as f64;
            let s = field.state(&y)?;
            samples.push(make_sample(step, t_now, s, spec.eps_coll).map_err(|e| with_time(e, t_now))?);
        }
    }
    Ok(())
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn rk45(field: &Field<'_>, spec: &FlowSpec, length: f64, samples: &mut Vec<Sample>) -> Result<()> {
    let dir = spec.t_final / length;
    let mut y = samples[0].state.to_flat();
    let mut s = 0.0;
    let mut h = spec.dt.min(length);
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while s < length {
        attempts += 1;
        if attempts > spec.max_steps {
            return Err(Error::StepLimitExceeded {
                steps: attempts,
                limit: spec.max_steps,
            });
        }
        let last = s + h >= length;
        if last {
            h = length - s;
        }
        let hc = dir * h;
        let t = dir * s;
        let mut k: Vec<Vec<C64>> = Vec::with_capacity(7);
        for stage in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = DP_A[stage][j];
                if a != 0.0 {
                    for (yi, ki) in ys.iter_mut().zip(kj) {
                        *yi += hc * a * ki;
                    }
                }
            }
            k.push(field.eval(&ys, t + hc * DP_C[stage])?);
        }
        let mut y5 = y.clone();
        let mut err = 0.0f64;
        for i in 0..y.len() {
            let mut inc5 = C64::new(0.0, 0.0);
            let mut inc4 = C64::new(0.0, 0.0);
            for st in 0..7 {
                inc5 += k[st][i] * DP_B5[st];
                inc4 += k[st][i] * DP_B4[st];
            }
            y5[i] += hc * inc5;
            let scale = spec.tolerance * (1.0 + y[i].norm().max(y5[i].norm()));
            err = err.max((hc * (inc5 - inc4)).norm() / scale);
        }
        if err <= 1.0 {
            y = y5;
            s = if last { length } else { s + h };
            accepted += 1;
            if accepted.is_multiple_of(spec.record_every) || last {
                let t_now = if last { spec.t_final } else { dir * s };
                let st = field.state(&y)?;
                samples.push(make_sample(accepted, t_now, st, spec.eps_coll).map_err(|e| with_time(e, t_now))?);
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidArgument("RK45 step size collapsed".into()));
        }
    }
    Ok(())
}

/// State after flowing `t_m` by `s` with fixed-step RK4.
pub fn flow(state: &PhaseState, m: usize, s: C64, dt: f64) -> Result<PhaseState> {
    Ok(integrate(state, &FlowSpec::new(m, s, dt))?.last().state.clone())
}

/// `max |dL/dt - [M, L]|` at each interior sample of a `t_2` trajectory,
/// with `dL/dt` from the five-point fourth-order central difference.
///
/// Only the uniformly spaced prefix of the samples is used.
pub fn check_lax(trajectory: &Trajectory) -> Result<Vec<(C64, f64)>> {
    if trajectory.m != 2 {
        return Err(Error::InvalidArgument(format!(
            "the Lax residual needs a t_2 trajectory, got m = {}",
            trajectory.m
        )));
    }
    let samples = &trajectory.samples;
    if samples.len() < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            got: samples.len(),
        });
    }
    let h = samples[1].t - samples[0].t;
    let mut uniform = 2;
    while uniform < samples.len() && ((samples[uniform].t - samples[uniform - 1].t) - h).norm() <= 1e-9 * h.norm() {
        uniform += 1;
    }
    if uniform < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            got: uniform,
        });
    }
    let laxes = samples[..uniform]
        .iter()
        .map(|s| build_lax_with_floor(&s.state, 0.0))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(uniform - 4);
    for j in 2..uniform - 2 {
        let dl = (-&laxes[j + 2].l + &laxes[j + 1].l * C64::new(8.0, 0.0) - &laxes[j - 1].l * C64::new(8.0, 0.0)
            + &laxes[j - 2].l)
            / (h * 12.0);
        let defect = dl - commutator(&laxes[j].m, &laxes[j].l);
        out.push((samples[j].t, defect.iter().map(|z| z.norm()).fold(0.0, f64::max)));
    }
    Ok(out)
}

/// Gauge-invariant observables: `x`, `p`, `H_1..H_5`, `tr R^1..tr R^5`.
pub fn gauge_invariant_observables(state: &PhaseState) -> Result<Vec<C64>> {
    let lax = build_lax_with_floor(state, 0.0)?;
    let mut out: Vec<C64> = state.x().iter().chain(state.p().iter()).copied().collect();
    out.extend(hamiltonians_of(&lax.l, RECORDED_HAMILTONIANS));
    out.extend(hamiltonians_of(&lax.r, RECORDED_HAMILTONIANS));
    Ok(out)
}

/// Distance between `flow_{m2}(s2) . flow_{m1}(s1)` and
/// `flow_{m1}(s1) . flow_{m2}(s2)` on gauge-invariant observables.
///
/// Particles keep their labels along both paths, so positions are compared
/// index by index.
pub fn commutativity_check(state: &PhaseState, m1: usize, m2: usize, s1: C64, s2: C64, dt: f64) -> Result<f64> {
    if m1 == m2 {
        return Err(Error::InvalidArgument("commutativity needs two distinct flows".into()));
    }
    let one_then_two = flow(&flow(state, m1, s1, dt)?, m2, s2, dt)?;
    let two_then_one = flow(&flow(state, m2, s2, dt)?, m1, s1, dt)?;
    let u = gauge_invariant_observables(&one_then_two)?;
    let v = gauge_invariant_observables(&two_then_one)?;
    Ok(u.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
}

/// `max_i |x_i''(0) - accel_i|` with `x''` from a five-point second
/// difference of the integrated `t_2` flow at `0, +-h, +-2h`.
pub fn newton_form_residual(state: &PhaseState, h: f64, dt: f64) -> Result<f64> {
    let at = |s: f64| -> Result<DVector<C64>> {
        if s == 0.0 {
            return Ok(state.x().clone());
        }
        Ok(flow(state, 2, C64::new(s, 0.0), dt)?.x().clone())
    };
    let (m2, m1, z0, p1, p2) = (at(-2.0 * h)?, at(-h)?, at(0.0)?, at(h)?, at(2.0 * h)?);
    let acc = pole_acceleration(state);
    let mut worst = 0.0f64;
    for i in 0..state.n_particles() {
        let second = (-m2[i] + 16.0 * m1[i] - 30.0 * z0[i] + 16.0 * p1[i] - p2[i]) / (12.0 * h * h);
        worst = worst.max((second - acc[i]).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::random_state;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn max_abs(v: &[C64]) -> f64 {
        v.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn single(p: C64) -> PhaseState {
        PhaseState::from_vecs(&[c(0.0)], &[p], &[vec![c(2.0)]], &[vec![c(0.5)]]).unwrap()
    }

    #[test]
    fn t1_field_is_a_shift() {
        let s = random_state(3, 2, 4, 1.0).unwrap();
        let v = vector_field_gradient(&s, 1).unwrap();
        assert!(v.dx.iter().all(|z| *z == c(-1.0)));
        assert!(max_abs(v.dp.as_slice()) == 0.0);
        assert!(v.da.iter().chain(v.db.iter()).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn t2_single_particle_moves_freely() {
        let p = C64::new(0.5, 0.25);
        let v = vector_field_gradient(&single(p), 2).unwrap();
        assert!((v.dx[0] - 2.0 * p).norm() < 1e-15);
        assert_eq!(v.dp[0], c(0.0));
        assert_eq!(v.da[(0, 0)], c(0.0));
        assert_eq!(v.db[(0, 0)], c(0.0));
    }

    #[test]
    fn t2_field_matches_explicit_spin_equations() {
        // a_i' = -2 sum (b_k.a_i) a_k / (x_i-x_k)^2, b_i' = 2 sum (b_i.a_k) b_k / (x_i-x_k)^2
        let s = random_state(4, 3, 21, 1.0).unwrap();
        let v = vector_field_gradient(&s, 2).unwrap();
        let x = s.x();
        for i in 0..4 {
            for al in 0..3 {
                let mut ea = C64::new(0.0, 0.0);
                let mut eb = C64::new(0.0, 0.0);
                for k in 0..4 {
                    if k != i {
                        let d2 = (x[i] - x[k]) * (x[i] - x[k]);
                        ea -= 2.0 * s.pairing(k, i) * s.a()[(k, al)] / d2;
                        eb += 2.0 * s.pairing(i, k) * s.b()[(k, al)] / d2;
                    }
                }
                assert!((v.da[(i, al)] - ea).norm() < 1e-12);
                assert!((v.db[(i, al)] - eb).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn t2_acceleration_matches_newton_form() {
        // x'' = d/dt (2 p) = 2 p' = -2 dH/dx; compare with the explicit force.
        for seed in 0..10 {
            let s = random_state(4, 2, seed, 1.0).unwrap();
            let v = vector_field_gradient(&s, 2).unwrap();
            let acc = pole_acceleration(&s);
            for i in 0..4 {
                let scale = 1.0 + acc[i].norm();
                assert!((2.0 * v.dp[i] - acc[i]).norm() <= 1e-8 * scale, "seed {seed}");
            }
        }
    }

    #[test]
    fn residue_route_xdot_at_m1() {
        let s = random_state(3, 2, 2, 1.0).unwrap();
        let v = vector_field_residue(&s, 1).unwrap();
        for z in v.dx.iter() {
            assert!((z + 1.0).norm() < 1e-14);
        }
    }

    #[test]
    fn residue_route_single_particle_spin_is_pure_gauge() {
        // With one particle only the diagonal terms survive: a' = p^2 a, b' = -p^2 b.
        let at_rest = vector_field_residue(&single(c(0.0)), 2).unwrap();
        assert_eq!(at_rest.da[(0, 0)], c(0.0));
        assert_eq!(at_rest.db[(0, 0)], c(0.0));

        let p = C64::new(0.4, -0.3);
        let s = single(p);
        let v = vector_field_residue(&s, 2).unwrap();
        assert!((v.da[(0, 0)] - p * p * 2.0).norm() < 1e-15);
        assert!((v.db[(0, 0)] + p * p * 0.5).norm() < 1e-15);
        let fixed = v.without_gauge(&s, &residue_gauge_rate(&s, 2).unwrap());
        assert!(fixed.da[(0, 0)].norm() < 1e-15 && fixed.db[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn residue_route_equals_gradient_route_up_to_gauge_rotation() {
        for seed in 0..20 {
            for m in 1..=4 {
                let s = random_state(3, 2, seed, 1.0).unwrap();
                let g = vector_field_gradient(&s, m).unwrap();
                let r = vector_field_residue(&s, m).unwrap();
                let fixed = r.without_gauge(&s, &residue_gauge_rate(&s, m).unwrap());
                let scale = 1.0 + max_abs(&g.to_flat());
                let diff = |u: &DMatrix<C64>, v: &DMatrix<C64>| (u - v).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(diff(&DMatrix::from_column_slice(3, 1, g.dx.as_slice()), &DMatrix::from_column_slice(3, 1, r.dx.as_slice())) <= 1e-12 * scale);
                assert!(diff(&g.da, &fixed.da) <= 1e-12 * scale, "seed {seed} m {m}");
                assert!(diff(&g.db, &fixed.db) <= 1e-12 * scale, "seed {seed} m {m}");
            }
        }
    }

    #[test]
    fn t1_integration_shifts_poles() {
        let s = random_state(3, 2, 6, 1.0).unwrap();
        let traj = integrate(&s, &FlowSpec::new(1, c(0.75), 0.01)).unwrap();
        let end = &traj.last().state;
        for i in 0..3 {
            assert!((end.x()[i] - (s.x()[i] - 0.75)).norm() <= 1e-12);
        }
        assert_eq!(end.p(), s.p());
        assert_eq!(end.a(), s.a());
        assert_eq!(end.b(), s.b());
    }

    #[test]
    fn free_particle_under_t2() {
        let s = single(c(0.5));
        let traj = integrate(&s, &FlowSpec::new(2, c(1.0), 1e-3)).unwrap();
        assert!((traj.last().state.x()[0] - 1.0).norm() <= 1e-10);
        assert_eq!(traj.samples.len(), 1001);
    }

    #[test]
    fn complex_time_segment() {
        let s = single(c(0.5));
        let t = C64::new(0.3, 0.4);
        let traj = integrate(&s, &FlowSpec::new(2, t, 1e-2)).unwrap();
        assert!((traj.last().state.x()[0] - t).norm() <= 1e-12);
        assert!((traj.last().t - t).norm() <= 1e-15);
    }

    #[test]
    fn rk45_agrees_with_rk4() {
        let s = random_state(3, 2, 13, 1.0).unwrap();
        let a = integrate(&s, &FlowSpec::new(2, c(0.5), 1e-3)).unwrap();
        let b = integrate(&s, &FlowSpec::new(2, c(0.5), 1e-2).with_method(Method::Rk45)).unwrap();
        let d = a
            .last()
            .state
            .to_flat()
            .iter()
            .zip(b.last().state.to_flat())
            .map(|(u, v)| (u - v).norm())
            .fold(0.0, f64::max);
        assert!(d < 1e-9, "rk4 vs rk45 distance {d}");
        assert!((b.last().t - c(0.5)).norm() < 1e-15);
    }

    #[test]
    fn recording_cadence_and_monotone_times() {
        let s = random_state(2, 1, 3, 1.0).unwrap();
        let traj = integrate(&s, &FlowSpec::new(2, c(0.105), 0.01).with_record_every(4)).unwrap();
        let steps: Vec<usize> = traj.samples.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 4, 8, 11]);
        assert!(traj.samples.windows(2).all(|w| w[1].t.norm() > w[0].t.norm()));
    }

    #[test]
    fn step_limit_is_enforced() {
        let s = single(c(0.5));
        let mut spec = FlowSpec::new(2, c(1.0), 1e-3);
        spec.max_steps = 10;
        assert!(matches!(integrate(&s, &spec), Err(Error::StepLimitExceeded { .. })));
    }

    #[test]
    fn head_on_collision_is_reported_with_time() {
        // Two poles approaching each other with a repulsive-free pairing (b_1.a_2 = 0).
        let s = PhaseState::from_vecs(
            &[c(-1.0), c(1.0)],
            &[c(0.5), c(-0.5)],
            &[vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]],
            &[vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]],
        )
        .unwrap();
        let err = integrate(&s, &FlowSpec::new(2, c(2.0), 1e-3)).unwrap_err();
        match err {
            Error::CollidingPoles { time: Some(t), .. } => assert!((t.re - 1.0).abs() < 2e-3),
            other => panic!("expected a collision, got {other:?}"),
        }
    }

    #[test]
    fn lax_residual_single_particle_vanishes() {
        let traj = integrate(&single(c(0.5)), &FlowSpec::new(2, c(0.01), 1e-3)).unwrap();
        let res = check_lax(&traj).unwrap();
        assert!(res.iter().all(|(_, r)| *r < 1e-12));
    }

    #[test]
    fn lax_residual_needs_samples_and_t2() {
        let s = single(c(0.5));
        let short = integrate(&s, &FlowSpec::new(2, c(0.003), 1e-3)).unwrap();
        assert!(matches!(check_lax(&short), Err(Error::InsufficientSamples { .. })));
        let t3 = integrate(&s, &FlowSpec::new(3, c(0.01), 1e-3)).unwrap();
        assert!(matches!(check_lax(&t3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_time_commutes_trivially() {
        let s = random_state(3, 2, 8, 1.0).unwrap();
        assert_eq!(commutativity_check(&s, 2, 3, c(0.0), c(0.1), 1e-2).unwrap(), 0.0);
    }

    #[test]
    fn t1_commutes_with_t3() {
        let s = random_state(3, 2, 8, 1.0).unwrap();
        let d = commutativity_check(&s, 1, 3, c(0.1), c(0.1), 1e-3).unwrap();
        assert!(d < 1e-10, "distance {d}");
    }

    #[test]
    fn method_parses() {
        assert_eq!("RK4".parse::<Method>().unwrap(), Method::Rk4);
        assert_eq!("rk45".parse::<Method>().unwrap(), Method::Rk45);
        assert!("euler".parse::<Method>().is_err());
    }
}
