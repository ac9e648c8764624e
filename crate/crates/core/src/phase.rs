//! Phase space of the spin Calogero-Moser (Gibbons-Hermsen) system.
//!
//! A phase point carries `n` particles with complex positions `x_i` and
//! momenta `p_i`, and two families of spin vectors `a_i`, `b_i` of length
//! `spin_dim`. The vectors are stored row-wise: row `i` of [`PhaseState::a`]
//! is `a_i`. The pairing `b_i^T a_i` is bilinear, never conjugated, and is
//! pinned to one on every valid state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::C64;

/// Bilinear pairing `u^T v` (no conjugation).
pub fn bilinear<'a>(u: impl IntoIterator<Item = &'a C64>, v: impl IntoIterator<Item = &'a C64>) -> C64 {
    u.into_iter().zip(v).map(|(x, y)| x * y).sum()
}

/// Validation floors for [`PhaseState`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Minimum admissible pole separation.
    pub eps_coll: f64,
    /// Maximum admissible `|b_i^T a_i - 1|`.
    pub eps_constr: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_coll: 1e-6,
            eps_constr: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    x: DVector<C64>,
    p: DVector<C64>,
    a: DMatrix<C64>,
    b: DMatrix<C64>,
}

impl PhaseState {
    /// Validated constructor with default [`Tolerances`].
    pub fn new(x: DVector<C64>, p: DVector<C64>, a: DMatrix<C64>, b: DMatrix<C64>) -> Result<Self> {
        Self::with_tolerances(x, p, a, b, &Tolerances::default())
    }

    pub fn with_tolerances(
        x: DVector<C64>,
        p: DVector<C64>,
        a: DMatrix<C64>,
        b: DMatrix<C64>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let state = Self::from_parts_unchecked(x, p, a, b)?;
        state.validate(tol)?;
        Ok(state)
    }

    /// Builds a state after checking shapes only.
    ///
    /// Separation and the constraint are not enforced, which lets callers
    /// load or inject states that a suite is expected to reject.
    pub fn from_parts_unchecked(
        x: DVector<C64>,
        p: DVector<C64>,
        a: DMatrix<C64>,
        b: DMatrix<C64>,
    ) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("at least one particle is required".into()));
        }
        if p.len() != n || a.nrows() != n || b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "x has {n} entries, p has {}, a has {} rows, b has {} rows",
                p.len(),
                a.nrows(),
                b.nrows()
            )));
        }
        if a.ncols() == 0 || a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "spin vectors must share a positive length, got a: {} and b: {}",
                a.ncols(),
                b.ncols()
            )));
        }
        Ok(Self { x, p, a, b })
    }

    /// Convenience constructor from nested slices, row `i` of `a`/`b` being `a_i`/`b_i`.
    pub fn from_vecs(x: &[C64], p: &[C64], a: &[Vec<C64>], b: &[Vec<C64>]) -> Result<Self> {
        let (x, p, a, b) = assemble(x, p, a, b)?;
        Self::new(x, p, a, b)
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        self.check_finite()?;
        if let Some((i, k, distance)) = self.closest_pair() {
            if distance <= tol.eps_coll {
                return Err(Error::CollidingPoles {
                    i,
                    k,
                    distance,
                    floor: tol.eps_coll,
                    time: None,
                });
            }
        }
        for i in 0..self.n_particles() {
            let residual = (self.pairing(i, i) - 1.0).norm();
            if !(residual <= tol.eps_constr) {
                return Err(Error::ConstraintViolated {
                    i,
                    residual,
                    tolerance: tol.eps_constr,
                });
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = |v: &[C64]| v.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite(self.x.as_slice()) {
            return Err(Error::NonFinite("x"));
        }
        if !finite(self.p.as_slice()) {
            return Err(Error::NonFinite("p"));
        }
        if !finite(self.a.as_slice()) {
            return Err(Error::NonFinite("a"));
        }
        if !finite(self.b.as_slice()) {
            return Err(Error::NonFinite("b"));
        }
        Ok(())
    }

    /// Fails with `CollidingPoles` if two poles are within `floor`.
    pub fn check_separation(&self, floor: f64) -> Result<()> {
        match self.closest_pair() {
            Some((i, k, distance)) if !(distance > floor) => Err(Error::CollidingPoles {
                i,
                k,
                distance,
                floor,
                time: None,
            }),
            _ => Ok(()),
        }
    }

    pub fn n_particles(&self) -> usize {
        self.x.len()
    }

    pub fn spin_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn x(&self) -> &DVector<C64> {
        &self.x
    }

    pub fn p(&self) -> &DVector<C64> {
        &self.p
    }

    pub fn a(&self) -> &DMatrix<C64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<C64> {
        &self.b
    }

    /// `b_i^T a_k`.
    pub fn pairing(&self, i: usize, k: usize) -> C64 {
        bilinear(self.b.row(i).iter(), self.a.row(k).iter())
    }

    /// Matrix `R_ik = b_i^T a_k`.
    pub fn pairing_matrix(&self) -> DMatrix<C64> {
        &self.b * self.a.transpose()
    }

    /// `max_i |b_i^T a_i - 1|`.
    pub fn constraint_drift(&self) -> f64 {
        (0..self.n_particles())
            .map(|i| (self.pairing(i, i) - 1.0).norm())
            .fold(0.0, f64::max)
    }

    /// Closest pair `(i, k, |x_i - x_k|)`, `None` for a single particle.
    pub fn closest_pair(&self) -> Option<(usize, usize, f64)> {
        let n = self.n_particles();
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            for k in (i + 1)..n {
                let d = (self.x[i] - self.x[k]).norm();
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, k, d));
                }
            }
        }
        best
    }

    pub fn min_separation(&self) -> f64 {
        self.closest_pair().map_or(f64::INFINITY, |(_, _, d)| d)
    }

    /// `a_i <- s_i a_i`, `b_i <- b_i / s_i`.
    pub fn gauge_rescale(&self, scales: &[C64]) -> Result<Self> {
        if scales.len() != self.n_particles() {
            return Err(Error::DimensionMismatch(format!(
                "{} gauge scales for {} particles",
                scales.len(),
                self.n_particles()
            )));
        }
        if let Some(i) = scales.iter().position(|s| *s == C64::new(0.0, 0.0)) {
            return Err(Error::ZeroScale(i));
        }
        let mut out = self.clone();
        for (i, &s) in scales.iter().enumerate() {
            let mut ai = out.a.row_mut(i);
            ai *= s;
            let mut bi = out.b.row_mut(i);
            bi *= s.inv();
        }
        Ok(out)
    }

    /// Length of the packed coordinate vector: `2n + 2nN`.
    pub fn flat_len(&self) -> usize {
        flat_len(self.n_particles(), self.spin_dim())
    }

    /// Packs `(x, p, a, b)` into one vector, `a` and `b` row-major.
    pub fn to_flat(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend(self.x.iter());
        out.extend(self.p.iter());
        push_row_major(&mut out, &self.a);
        push_row_major(&mut out, &self.b);
        out
    }

    /// Inverse of [`PhaseState::to_flat`]. No invariant checks.
    pub fn from_flat(n: usize, spin_dim: usize, flat: &[C64]) -> Result<Self> {
        if flat.len() != flat_len(n, spin_dim) {
            return Err(Error::DimensionMismatch(format!(
                "flat vector of length {} for n = {n}, N = {spin_dim}",
                flat.len()
            )));
        }
        let nn = n * spin_dim;
        let x = DVector::from_column_slice(&flat[..n]);
        let p = DVector::from_column_slice(&flat[n..2 * n]);
        let a = DMatrix::from_row_slice(n, spin_dim, &flat[2 * n..2 * n + nn]);
        let b = DMatrix::from_row_slice(n, spin_dim, &flat[2 * n + nn..]);
        Self::from_parts_unchecked(x, p, a, b)
    }
}

pub(crate) fn flat_len(n: usize, spin_dim: usize) -> usize {
    2 * n + 2 * n * spin_dim
}

fn push_row_major(out: &mut Vec<C64>, m: &DMatrix<C64>) {
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
}

pub(crate) fn assemble(
    x: &[C64],
    p: &[C64],
    a: &[Vec<C64>],
    b: &[Vec<C64>],
) -> Result<(DVector<C64>, DVector<C64>, DMatrix<C64>, DMatrix<C64>)> {
    let n = x.len();
    let spin_dim = a.first().map_or(0, Vec::len);
    if a.len() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} positions but {} a-vectors and {} b-vectors",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.len() != spin_dim) {
        return Err(Error::DimensionMismatch("spin vectors of unequal length".into()));
    }
    let flat_a: Vec<C64> = a.iter().flatten().copied().collect();
    let flat_b: Vec<C64> = b.iter().flatten().copied().collect();
    Ok((
        DVector::from_column_slice(x),
        DVector::from_column_slice(p),
        DMatrix::from_row_slice(n, spin_dim, &flat_a),
        DMatrix::from_row_slice(n, spin_dim, &flat_b),
    ))
}

/// Values of the hierarchy times `(t_1, ..., t_K)`; enters only the
/// exponential gauge `xi(t, z) = sum_k t_k z^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVector {
    pub t: Vec<C64>,
}

impl Default for TimeVector {
    fn default() -> Self {
        Self {
            t: vec![C64::new(0.0, 0.0); 3],
        }
    }
}

impl TimeVector {
    pub fn new(t: Vec<C64>) -> Result<Self> {
        if t.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("times"));
        }
        Ok(Self { t })
    }

    pub fn xi(&self, z: C64) -> C64 {
        let mut zk = z;
        let mut acc = C64::new(0.0, 0.0);
        for tk in &self.t {
            acc += tk * zk;
            zk *= z;
        }
        acc
    }
}

const POSITION_ATTEMPTS: usize = 10_000;
const PAIRING_ATTEMPTS: usize = 1_000;
const MIN_RAW_PAIRING: f64 = 1e-3;

fn box_complex(rng: &mut ChaCha8Rng, half_width: f64) -> C64 {
    C64::new(
        rng.random_range(-half_width..=half_width),
        rng.random_range(-half_width..=half_width),
    )
}

/// Draws a reproducible state.
///
/// Positions are rejection-sampled in a complex box of half-width
/// `separation * n` until every pair is at least `separation` apart.
/// Momenta lie in the box of half-width 1/2, spin components in the unit
/// box, and each `b_i` is divided by its raw pairing with `a_i`.
pub fn random_state(n: usize, spin_dim: usize, seed: u64, separation: f64) -> Result<PhaseState> {
    if n == 0 || spin_dim == 0 {
        return Err(Error::InvalidArgument("need at least one particle and one spin component".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_width = separation * n as f64;

    let mut x: Vec<C64> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..POSITION_ATTEMPTS {
            let cand = box_complex(&mut rng, half_width);
            if x.iter().all(|xk| (cand - xk).norm() >= separation) {
                x.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::DegenerateDraw {
                what: "pole positions",
                attempts: POSITION_ATTEMPTS,
            });
        }
    }

    let p: Vec<C64> = (0..n).map(|_| box_complex(&mut rng, 0.5)).collect();

    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let ai: Vec<C64> = (0..spin_dim).map(|_| box_complex(&mut rng, 1.0)).collect();
        let mut bi = None;
        for _ in 0..PAIRING_ATTEMPTS {
            let cand: Vec<C64> = (0..spin_dim).map(|_| box_complex(&mut rng, 1.0)).collect();
            let raw = bilinear(&cand, &ai);
            if raw.norm() >= MIN_RAW_PAIRING {
                bi = Some(cand.into_iter().map(|v| v / raw).collect::<Vec<_>>());
                break;
            }
        }
        let bi = bi.ok_or(Error::DegenerateDraw {
            what: "spin pairing",
            attempts: PAIRING_ATTEMPTS,
        })?;
        a.push(ai);
        b.push(bi);
    }

    let (x, p, a, b) = assemble(&x, &p, &a, &b)?;
    PhaseState::from_parts_unchecked(x, p, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn single_particle_is_valid() {
        let s = PhaseState::from_vecs(&[c(0.0)], &[c(0.5)], &[vec![c(1.0)]], &[vec![c(1.0)]]).unwrap();
        assert_eq!(s.n_particles(), 1);
        assert_eq!(s.spin_dim(), 1);
    }

    #[test]
    fn rejects_colliding_poles() {
        let one = vec![c(1.0)];
        let err = PhaseState::from_vecs(&[c(0.0), c(1e-9)], &[c(0.0), c(0.0)], &[one.clone(), one.clone()], &[one.clone(), one])
            .unwrap_err();
        assert!(matches!(err, Error::CollidingPoles { i: 0, k: 1, .. }));
    }

    #[test]
    fn rejects_constraint_violation() {
        let err = PhaseState::from_vecs(&[c(0.0)], &[c(0.0)], &[vec![c(2.0)]], &[vec![c(1.0)]]).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolated { i: 0, .. }));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let err = PhaseState::from_vecs(&[c(0.0), c(1.0)], &[c(0.0)], &[vec![c(1.0)]], &[vec![c(1.0)]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn random_state_is_deterministic() {
        let s1 = random_state(3, 2, 7, 1.0).unwrap();
        let s2 = random_state(3, 2, 7, 1.0).unwrap();
        assert_eq!(s1.to_flat(), s2.to_flat());
        let s3 = random_state(3, 2, 8, 1.0).unwrap();
        assert_ne!(s1.to_flat(), s3.to_flat());
    }

    #[test]
    fn random_state_meets_invariants() {
        for seed in 0..50 {
            let s = random_state(4, 3, seed, 0.7).unwrap();
            assert!(s.constraint_drift() <= 1e-14, "seed {seed}: drift {}", s.constraint_drift());
            assert!(s.min_separation() >= 0.7);
            s.validate(&Tolerances::default()).unwrap();
        }
    }

    #[test]
    fn random_state_rejects_bad_arguments() {
        assert!(matches!(random_state(0, 1, 0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(random_state(2, 1, 0, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gauge_identity_and_constraint() {
        let s = random_state(3, 2, 1, 1.0).unwrap();
        let same = s.gauge_rescale(&[c(1.0); 3]).unwrap();
        assert_eq!(s, same);
        let g = s
            .gauge_rescale(&[C64::new(2.0, -1.0), C64::new(0.3, 0.4), C64::new(-5.0, 0.0)])
            .unwrap();
        assert!(g.constraint_drift() <= 1e-14);
        assert_eq!(g.x(), s.x());
        assert_eq!(g.p(), s.p());
    }

    #[test]
    fn gauge_rejects_zero() {
        let s = random_state(2, 2, 1, 1.0).unwrap();
        assert_eq!(s.gauge_rescale(&[c(1.0), c(0.0)]).unwrap_err(), Error::ZeroScale(1));
    }

    #[test]
    fn flat_round_trip() {
        let s = random_state(3, 2, 11, 1.0).unwrap();
        let back = PhaseState::from_flat(3, 2, &s.to_flat()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn xi_sums_powers() {
        let t = TimeVector::new(vec![c(1.0), c(2.0), c(3.0)]).unwrap();
        let z = C64::new(0.5, 0.5);
        let expect = z + 2.0 * z * z + 3.0 * z * z * z;
        assert!((t.xi(z) - expect).norm() < 1e-15);
    }
}
