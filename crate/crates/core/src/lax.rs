//! Lax pair, hierarchy Hamiltonians `H_m = tr L^m` and their gradients.
//!
//! ```text
//! L_ii = -p_i        L_ik = -(b_i.a_k) / (x_i - x_k)
//! M_ii = 0           M_ik = 2 (b_i.a_k) / (x_i - x_k)^2
//! R_ik = b_i.a_k     X    = diag(x)
//! ```
//!
//! On the constraint surface `R = I + [L, X]`. Residues at `z = infinity`
//! of resolvent expressions reduce to polynomials in `L`, see
//! [`resolvent_residue`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::phase::{PhaseState, Tolerances};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct LaxData {
    pub l: DMatrix<C64>,
    pub m: DMatrix<C64>,
    pub x: DMatrix<C64>,
    pub r: DMatrix<C64>,
}

impl LaxData {
    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    /// `R - I - [L, X]`.
    pub fn r_identity_defect(&self) -> DMatrix<C64> {
        let n = self.n();
        &self.r - DMatrix::identity(n, n) - (&self.l * &self.x - &self.x * &self.l)
    }
}

/// Builds `(L, M, X, R)` with the default collision floor.
pub fn build_lax(state: &PhaseState) -> Result<LaxData> {
    build_lax_with_floor(state, Tolerances::default().eps_coll)
}

pub fn build_lax_with_floor(state: &PhaseState, floor: f64) -> Result<LaxData> {
    state.check_separation(floor)?;
    let n = state.n_particles();
    let x = state.x();
    let r = state.pairing_matrix();
    let mut l = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = -state.p()[i];
        for k in 0..n {
            if k != i {
                let inv = (x[i] - x[k]).inv();
                l[(i, k)] = -r[(i, k)] * inv;
                m[(i, k)] = 2.0 * r[(i, k)] * inv * inv;
            }
        }
    }
    Ok(LaxData {
        l,
        m,
        x: DMatrix::from_diagonal(x),
        r,
    })
}

/// `[A, B] = AB - BA`.
pub fn commutator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

/// Powers `L^0, ..., L^kmax` by repeated multiplication.
pub fn matrix_powers(l: &DMatrix<C64>, kmax: usize) -> Vec<DMatrix<C64>> {
    let n = l.nrows();
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(DMatrix::identity(n, n));
    for k in 1..=kmax {
        let next = &out[k - 1] * l;
        out.push(next);
    }
    out
}

fn trace(m: &DMatrix<C64>) -> C64 {
    m.diagonal().iter().sum()
}

fn require_order(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("hierarchy index m must be at least 1".into()));
    }
    Ok(())
}

/// `H_m = tr L^m`.
pub fn hamiltonian(state: &PhaseState, m: usize) -> Result<C64> {
    require_order(m)?;
    let lax = build_lax(state)?;
    Ok(trace(&matrix_powers(&lax.l, m)[m]))
}

/// `[H_1, ..., H_kmax]`.
pub fn hamiltonians(state: &PhaseState, kmax: usize) -> Result<Vec<C64>> {
    let lax = build_lax(state)?;
    Ok(hamiltonians_of(&lax.l, kmax))
}

pub fn hamiltonians_of(l: &DMatrix<C64>, kmax: usize) -> Vec<C64> {
    matrix_powers(l, kmax)[1..].iter().map(trace).collect()
}

/// The two-body form `sum p_i^2 - sum_{i != k} (b_i.a_k)(b_k.a_i) / (x_i - x_k)^2`.
pub fn pairwise_hamiltonian(state: &PhaseState) -> C64 {
    let n = state.n_particles();
    let x = state.x();
    let mut h: C64 = state.p().iter().map(|p| p * p).sum();
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let d = x[i] - x[k];
                h -= state.pairing(i, k) * state.pairing(k, i) / (d * d);
            }
        }
    }
    h
}

/// Holomorphic partial derivatives of a scalar phase-space function.
///
/// `da` and `db` have the same `n x N` layout as the state's spin vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dx: DVector<C64>,
    pub dp: DVector<C64>,
    pub da: DMatrix<C64>,
    pub db: DMatrix<C64>,
}

impl Gradient {
    pub fn zeros(n: usize, spin_dim: usize) -> Self {
        Self {
            dx: DVector::zeros(n),
            dp: DVector::zeros(n),
            da: DMatrix::zeros(n, spin_dim),
            db: DMatrix::zeros(n, spin_dim),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.dx.len(), self.da.ncols())
    }

    /// Components in the packing order of [`PhaseState::to_flat`].
    pub fn to_flat(&self) -> Vec<C64> {
        let mut out: Vec<C64> = self.dx.iter().chain(self.dp.iter()).copied().collect();
        for m in [&self.da, &self.db] {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
        }
        out
    }
}

/// Analytic gradient of `H_m = tr L^m`.
///
/// Uses `dH_m/dq = m tr(L^{m-1} dL/dq)` and the sparsity of `dL/dq`:
/// `p_i` touches only `L_ii`, `x_i` only row and column `i`, `a_i` only
/// column `i` and `b_i` only row `i`.
pub fn grad_hamiltonian(state: &PhaseState, m: usize) -> Result<Gradient> {
    require_order(m)?;
    let lax = build_lax(state)?;
    Ok(grad_from_lax(state, &lax, m))
}

pub(crate) fn grad_from_lax(state: &PhaseState, lax: &LaxData, m: usize) -> Gradient {
    let n = state.n_particles();
    let spin_dim = state.spin_dim();
    let x = state.x();
    let (a, b) = (state.a(), state.b());
    let pw = matrix_powers(&lax.l, m - 1).pop().expect("at least L^0");
    let r = &lax.r;
    let mf = C64::new(m as f64, 0.0);

    let mut g = Gradient::zeros(n, spin_dim);
    for i in 0..n {
        g.dp[i] = -mf * pw[(i, i)];
        let mut dx = C64::new(0.0, 0.0);
        for k in 0..n {
            if k == i {
                continue;
            }
            let inv = (x[i] - x[k]).inv();
            dx += (pw[(k, i)] * r[(i, k)] - pw[(i, k)] * r[(k, i)]) * inv * inv;
            let wa = mf * pw[(i, k)] * inv;
            let wb = -mf * pw[(k, i)] * inv;
            for al in 0..spin_dim {
                g.da[(i, al)] += wa * b[(k, al)];
                g.db[(i, al)] += wb * a[(k, al)];
            }
        }
        g.dx[i] = mf * dx;
    }
    g
}

/// Complex-bilinear Poisson bracket with `{x_i, p_k} = {a_i^al, b_k^be} = delta`.
pub fn poisson_bracket(f: &Gradient, g: &Gradient) -> Result<C64> {
    if f.shape() != g.shape() {
        return Err(Error::DimensionMismatch(format!(
            "gradients of shape {:?} and {:?}",
            f.shape(),
            g.shape()
        )));
    }
    let canonical: C64 = f
        .dx
        .iter()
        .zip(g.dp.iter())
        .map(|(u, v)| u * v)
        .sum::<C64>()
        - f.dp.iter().zip(g.dx.iter()).map(|(u, v)| u * v).sum::<C64>();
    let spin: C64 = f
        .da
        .iter()
        .zip(g.db.iter())
        .map(|(u, v)| u * v)
        .sum::<C64>()
        - f.db.iter().zip(g.da.iter()).map(|(u, v)| u * v).sum::<C64>();
    Ok(canonical + spin)
}

/// Exact residue at `z = infinity` of resolvent expressions.
///
/// Without `a`: `res z^m (z - L)^{-1} = L^m`.
/// With `a`: `res z^m (z - L)^{-1} A (z - L)^{-1} = sum_{j<m} L^j A L^{m-1-j}`,
/// zero for `m = 0`.
pub fn resolvent_residue(l: &DMatrix<C64>, m: usize, a: Option<&DMatrix<C64>>) -> DMatrix<C64> {
    let pw = matrix_powers(l, m);
    match a {
        None => pw[m].clone(),
        Some(a) => resolvent_convolution(&pw, a, m),
    }
}

/// `sum_{j<m} P_j A P_{m-1-j}` for precomputed powers `P`.
pub(crate) fn resolvent_convolution(powers: &[DMatrix<C64>], a: &DMatrix<C64>, m: usize) -> DMatrix<C64> {
    let mut acc = DMatrix::zeros(powers[0].nrows(), a.ncols());
    for j in 0..m {
        acc += &powers[j] * a * &powers[m - 1 - j];
    }
    acc
}
