//! Independent numerical oracles.
//!
//! Nothing here shares a code path with the closed-form routines it is
//! used to check: derivatives come from central differences, residues from
//! trapezoid sums on circles, and the scalar Calogero-Moser reference from
//! its own Newtonian RK4 loop.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::phase::PhaseState;
use crate::C64;

/// Central differences of `f` along every packed coordinate, stepping by
/// `h` and by `i h`. Returns `(real_direction, imaginary_direction)`; for a
/// holomorphic `f` both approximate the complex derivative.
pub fn finite_difference_gradient<F>(state: &PhaseState, h: f64, f: F) -> (Vec<C64>, Vec<C64>)
where
    F: Fn(&PhaseState) -> C64,
{
    let n = state.n_particles();
    let spin_dim = state.spin_dim();
    let base = state.to_flat();
    let eval = |idx: usize, step: C64| {
        let mut q = base.clone();
        q[idx] += step;
        let s = PhaseState::from_flat(n, spin_dim, &q).expect("same shape");
        f(&s)
    };
    let mut re_dir = Vec::with_capacity(base.len());
    let mut im_dir = Vec::with_capacity(base.len());
    for idx in 0..base.len() {
        let hr = C64::new(h, 0.0);
        let hi = C64::new(0.0, h);
        re_dir.push((eval(idx, hr) - eval(idx, -hr)) / (2.0 * hr));
        im_dir.push((eval(idx, hi) - eval(idx, -hi)) / (2.0 * hi));
    }
    (re_dir, im_dir)
}

/// `(1 / 2 pi i) \oint f(z) dz` over the counter-clockwise circle
/// `|z - center| = radius`, by the `nodes`-point trapezoid rule.
pub fn circle_integral<F>(center: C64, radius: f64, nodes: usize, f: F) -> DMatrix<C64>
where
    F: Fn(C64) -> DMatrix<C64>,
{
    let mut acc: Option<DMatrix<C64>> = None;
    for k in 0..nodes {
        let theta = 2.0 * PI * (k as f64) / (nodes as f64);
        let offset = C64::from_polar(radius, theta);
        let term = f(center + offset) * offset;
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    acc.expect("at least one node") / C64::new(nodes as f64, 0.0)
}

/// Infinity norm (max row sum).
pub fn norm_inf(m: &DMatrix<C64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Contour-integration settings for [`resolvent_residue_by_contour`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ContourSettings {
    pub nodes: usize,
    /// Circle radius is `radius_factor * (||L||_inf + 1)`.
    pub radius_factor: f64,
}

impl Default for ContourSettings {
    fn default() -> Self {
        Self {
            nodes: 256,
            radius_factor: 2.0,
        }
    }
}

/// Numerical `res z^m (z - L)^{-1}` or `res z^m (z - L)^{-1} A (z - L)^{-1}`
/// on a circle that encloses the spectrum of `L`.
pub fn resolvent_residue_by_contour(
    l: &DMatrix<C64>,
    m: usize,
    a: Option<&DMatrix<C64>>,
    settings: &ContourSettings,
) -> DMatrix<C64> {
    let n = l.nrows();
    let radius = settings.radius_factor * (norm_inf(l) + 1.0);
    circle_integral(C64::new(0.0, 0.0), radius, settings.nodes, |z| {
        let shifted = DMatrix::<C64>::identity(n, n) * z - l;
        let g = shifted.try_inverse().expect("circle avoids the spectrum");
        let zm = z.powu(m as u32);
        match a {
            None => g * zm,
            Some(a) => &g * a * &g * zm,
        }
    })
}

/// Reference integrator for the scalar rational Calogero-Moser system
/// `x_i'' = -8 sum_{k != i} (x_i - x_k)^{-3}`, classic RK4 on `(x, x')`
/// along the straight segment from 0 to `t_final` in `steps` steps.
pub fn scalar_calogero(x0: &[C64], v0: &[C64], t_final: C64, steps: usize) -> Vec<C64> {
    let n = x0.len();
    let accel = |x: &[C64]| -> Vec<C64> {
        (0..n)
            .map(|i| {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    if k != i {
                        let d = x[i] - x[k];
                        acc -= 8.0 / (d * d * d);
                    }
                }
                acc
            })
            .collect()
    };
    let h = t_final / steps as f64;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let axpy = |y: &[C64], s: C64, d: &[C64]| -> Vec<C64> { y.iter().zip(d).map(|(a, b)| a + s * b).collect() };
    for _ in 0..steps {
        let k1x = v.clone();
        let k1v = accel(&x);
        let x2 = axpy(&x, h / 2.0, &k1x);
        let v2 = axpy(&v, h / 2.0, &k1v);
        let k2x = v2.clone();
        let k2v = accel(&x2);
        let x3 = axpy(&x, h / 2.0, &k2x);
        let v3 = axpy(&v, h / 2.0, &k2v);
        let k3x = v3.clone();
        let k3v = accel(&x3);
        let x4 = axpy(&x, h, &k3x);
        let v4 = axpy(&v, h, &k3v);
        let k4x = v4;
        let k4v = accel(&x4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
    }
    x
}
