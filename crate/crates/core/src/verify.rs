//! Verification suite: every named check run against one instance, with
//! thresholds from [`SuiteConfig`] reported next to each residual.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::flows::{
    check_lax, commutativity_check, integrate, newton_form_residual, residue_gauge_rate, vector_field_gradient,
    vector_field_residue, FlowSpec, Method, Tangent, Trajectory,
};
use crate::kp::{
    linear_problem_residual, rank1_residue_check, residue_identity_residual, ring_grid, t1_shift_residual,
    w1_consistency,
};
use crate::lax::{
    build_lax, grad_hamiltonian, hamiltonian, matrix_powers, pairwise_hamiltonian, poisson_bracket,
};
use crate::oracle::{finite_difference_gradient, scalar_calogero, ContourSettings};
use crate::phase::{random_state, PhaseState, Tolerances};
use crate::C64;

pub const SUITE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn relative_error(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

/// Normwise `max_j |u_j - v_j| / max(max_j |v_j|, 1)`.
pub fn relative_distance(u: &[C64], v: &[C64]) -> f64 {
    let scale = v.iter().map(|z| z.norm()).fold(1.0, f64::max);
    u.iter().zip(v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub constraint: f64,
    pub r_identity: f64,
    pub trace_identity: f64,
    pub gradient_fd: f64,
    pub involution: f64,
    pub dual_derivation: f64,
    pub lax: f64,
    pub conservation: f64,
    pub commutativity: f64,
    pub constraint_drift: f64,
    pub newton_form: f64,
    pub rank1_residues: f64,
    pub w1_residue: f64,
    pub v_derivative: f64,
    pub t1_shift: f64,
    pub linear_problem: f64,
    pub residue_identity: f64,
    pub first_order_cancellation: f64,
    pub n1_reduction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            constraint: Tolerances::default().eps_constr,
            r_identity: 1e-12,
            trace_identity: 1e-12,
            gradient_fd: 1e-6,
            involution: 1e-8,
            dual_derivation: 1e-12,
            lax: 1e-7,
            conservation: 1e-8,
            commutativity: 1e-6,
            constraint_drift: 1e-9,
            newton_form: 1e-6,
            rank1_residues: 1e-12,
            w1_residue: 1e-10,
            v_derivative: 1e-6,
            t1_shift: 1e-12,
            linear_problem: 1e-6,
            residue_identity: 1e-10,
            first_order_cancellation: 1e-12,
            n1_reduction: 1e-10,
        }
    }
}

impl Thresholds {
    fn all(&self) -> [(&'static str, f64); 19] {
        [
            ("constraint", self.constraint),
            ("r_identity", self.r_identity),
            ("trace_identity", self.trace_identity),
            ("gradient_fd", self.gradient_fd),
            ("involution", self.involution),
            ("dual_derivation", self.dual_derivation),
            ("lax", self.lax),
            ("conservation", self.conservation),
            ("commutativity", self.commutativity),
            ("constraint_drift", self.constraint_drift),
            ("newton_form", self.newton_form),
            ("rank1_residues", self.rank1_residues),
            ("w1_residue", self.w1_residue),
            ("v_derivative", self.v_derivative),
            ("t1_shift", self.t1_shift),
            ("linear_problem", self.linear_problem),
            ("residue_identity", self.residue_identity),
            ("first_order_cancellation", self.first_order_cancellation),
            ("n1_reduction", self.n1_reduction),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub tolerances: Tolerances,
    pub thresholds: Thresholds,
    pub contour: ContourSettings,
    /// Integrator step for every trajectory in the suite.
    pub dt: f64,
    /// Flow time for conservation, drift and the Lax residual.
    pub t_final: f64,
    /// Highest `m` in the gradient, involution and dual-derivation checks.
    pub m_max: usize,
    /// Finite-difference step for gradients.
    pub fd_step: f64,
    /// Flow times for the commutativity check.
    pub commutativity_s: f64,
    /// Second-difference step for the Newton-form check.
    pub newton_step: f64,
    /// Spectral parameter for Baker-Akhiezer checks.
    pub z: C64,
    pub dt2: f64,
    pub grid_points: usize,
    /// Distance of the Baker-Akhiezer grid from the outermost pole.
    pub grid_margin: f64,
    /// Finite-difference step for `V = -2 dw1/dx`.
    pub v_step: f64,
    pub t1_shift: f64,
    pub n1_t_final: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            thresholds: Thresholds::default(),
            contour: ContourSettings::default(),
            dt: 1e-3,
            t_final: 1.0,
            m_max: 4,
            fd_step: 1e-5,
            commutativity_s: 0.1,
            newton_step: 1e-2,
            z: C64::new(1.3, 0.7),
            dt2: 1e-4,
            grid_points: 20,
            grid_margin: 1.5,
            v_step: 1e-6,
            t1_shift: 0.4,
            n1_t_final: 0.5,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_coll", self.tolerances.eps_coll),
            ("eps_constr", self.tolerances.eps_constr),
            ("dt", self.dt),
            ("t_final", self.t_final),
            ("fd_step", self.fd_step),
            ("commutativity_s", self.commutativity_s),
            ("newton_step", self.newton_step),
            ("dt2", self.dt2),
            ("grid_margin", self.grid_margin),
            ("v_step", self.v_step),
            ("t1_shift", self.t1_shift),
            ("n1_t_final", self.n1_t_final),
            ("contour.radius_factor", self.contour.radius_factor),
        ];
        for (name, v) in positive.into_iter().chain(self.thresholds.all()) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.m_max == 0 || self.grid_points == 0 || self.contour.nodes == 0 {
            return Err(Error::InvalidArgument("m_max, grid_points and contour.nodes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    pub passed: bool,
    pub status: Status,
    pub details: BTreeMap<String, Value>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: Option<u64>,
    pub n_particles: usize,
    pub spin_dim: usize,
    pub suite_version: String,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    /// True iff every non-skipped check passed.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Failed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.status == Status::Failed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let seed = self.seed.map_or("-".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "instance: particles = {}, spin = {}, seed = {seed}, suite {}",
            self.n_particles, self.spin_dim, self.suite_version
        );
        let _ = writeln!(out, "{:<28} {:>12} {:>12}  status", "check", "residual", "threshold");
        for c in &self.checks {
            let status = match c.status {
                Status::Passed => "pass",
                Status::Failed => "FAIL",
                Status::Skipped => "skipped",
            };
            let _ = writeln!(out, "{:<28} {:>12.3e} {:>12.1e}  {status}", c.name, c.residual, c.threshold);
        }
        let failed = self.failed();
        if failed.is_empty() {
            let _ = writeln!(out, "all checks passed");
        } else {
            let _ = writeln!(out, "failed: {}", failed.join(", "));
        }
        out
    }
}

type Details = BTreeMap<String, Value>;

struct Runner {
    checks: Vec<CheckResult>,
}

impl Runner {
    fn run<F>(&mut self, name: &str, threshold: f64, f: F)
    where
        F: FnOnce() -> Result<(f64, Details)>,
    {
        let start = Instant::now();
        let outcome = f();
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let (residual, details) = match outcome {
            Ok(v) => v,
            Err(e) => (f64::NAN, Details::from([("error".to_string(), json!(e.to_string()))])),
        };
        let passed = residual <= threshold;
        self.checks.push(CheckResult {
            name: name.to_string(),
            residual,
            threshold,
            passed,
            status: if passed { Status::Passed } else { Status::Failed },
            details,
            wall_ms,
        });
    }

    fn skip(&mut self, name: &str, threshold: f64, reason: &str) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            residual: f64::NAN,
            threshold,
            passed: false,
            status: Status::Skipped,
            details: Details::from([("skipped".to_string(), json!(reason))]),
            wall_ms: 0.0,
        });
    }
}

fn details<const K: usize>(items: [(&str, Value); K]) -> Details {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Worst componentwise [`relative_error`] between the analytic gradient of
/// `H_m` and central differences along real and imaginary steps,
/// `1 <= m <= m_max`.
pub fn gradient_fd_error(state: &PhaseState, m_max: usize, h: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for m in 1..=m_max {
        let g = grad_hamiltonian(state, m)?.to_flat();
        let (re_dir, im_dir) = finite_difference_gradient(state, h, |s| hamiltonian(s, m).unwrap_or(C64::new(f64::NAN, 0.0)));
        for ((u, v), w) in re_dir.iter().zip(&im_dir).zip(&g) {
            worst = worst.max(relative_error(*u, *w)).max(relative_error(*v, *w));
        }
    }
    Ok(worst)
}

/// `max |{H_m, H_k}| / (1 + |H_m H_k|)^{1/2}` over `1 <= m < k <= m_max`.
pub fn involution_defect(state: &PhaseState, m_max: usize) -> Result<f64> {
    let grads = (1..=m_max).map(|m| grad_hamiltonian(state, m)).collect::<Result<Vec<_>>>()?;
    let hs = (1..=m_max).map(|m| hamiltonian(state, m)).collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for m in 0..m_max {
        for k in m + 1..m_max {
            let bracket = poisson_bracket(&grads[m], &grads[k])?;
            worst = worst.max(bracket.norm() / (1.0 + (hs[m] * hs[k]).norm()).sqrt());
        }
    }
    Ok(worst)
}

/// Relative distance between the residue-route and gradient-route
/// velocities on `(x', a', b')` for `1 <= m <= m_max`. With `mod_gauge`
/// the residue route is first stripped of its gauge rotation.
pub fn dual_derivation_error(state: &PhaseState, m_max: usize, mod_gauge: bool) -> Result<f64> {
    let pick = |t: &Tangent| -> Vec<C64> {
        let mut v: Vec<C64> = t.dx.iter().copied().collect();
        v.extend(t.da.iter());
        v.extend(t.db.iter());
        v
    };
    let mut worst = 0.0f64;
    for m in 1..=m_max {
        let g = vector_field_gradient(state, m)?;
        let mut r = vector_field_residue(state, m)?;
        if mod_gauge {
            r = r.without_gauge(state, &residue_gauge_rate(state, m)?);
        }
        worst = worst.max(relative_distance(&pick(&r), &pick(&g)));
    }
    Ok(worst)
}

/// `max_i |x_i(T) - y_i(T)|` between the `t_2` flow and the scalar
/// Calogero-Moser reference started from `y = x`, `y' = 2p`.
pub fn n1_reduction_error(state: &PhaseState, t_final: f64, dt: f64) -> Result<f64> {
    if state.spin_dim() != 1 {
        return Err(Error::InvalidArgument("the scalar reduction needs spin dimension 1".into()));
    }
    let t = C64::new(t_final, 0.0);
    let spec = FlowSpec::new(2, t, dt);
    let steps = (t_final / dt).ceil() as usize;
    let end = integrate(state, &spec)?;
    let v0: Vec<C64> = state.p().iter().map(|p| 2.0 * p).collect();
    let reference = scalar_calogero(state.x().as_slice(), &v0, t, steps);
    Ok(end
        .last()
        .state
        .x()
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max))
}

fn trajectory(state: &PhaseState, m: usize, config: &SuiteConfig) -> Result<Trajectory> {
    let mut spec = FlowSpec::new(m, C64::new(config.t_final, 0.0), config.dt).with_method(Method::Rk4);
    spec.eps_coll = config.tolerances.eps_coll;
    integrate(state, &spec)
}

/// Runs every check on `state`. Errors inside a check become failed
/// results; checks that need an unavailable trajectory are skipped.
pub fn run_suite(state: &PhaseState, seed: Option<u64>, config: &SuiteConfig) -> Result<VerificationReport> {
    config.validate()?;
    let th = &config.thresholds;
    let mut r = Runner { checks: Vec::new() };
    let tol = &config.tolerances;

    r.run("constraint", th.constraint, || {
        let sep = state.min_separation();
        let drift = state.constraint_drift();
        let residual = if sep < tol.eps_coll { f64::INFINITY } else { drift };
        Ok((residual, details([("min_separation", json!(sep)), ("eps_coll", json!(tol.eps_coll))])))
    });

    let lax = match build_lax(state) {
        Ok(l) => l,
        Err(e) => {
            let reason = format!("Lax matrix unavailable: {e}");
            for (name, t) in plan(th, state.spin_dim()).into_iter().skip(1) {
                r.skip(name, t, &reason);
            }
            return Ok(report(state, seed, r));
        }
    };

    r.run("r_identity", th.r_identity, || {
        let d = lax.r_identity_defect();
        Ok((d.iter().map(|z| z.norm()).fold(0.0, f64::max), Details::new()))
    });

    r.run("trace_identity", th.trace_identity, || {
        let powers = matrix_powers(&lax.l, 5);
        let mut worst = relative_error(hamiltonian(state, 2)?, pairwise_hamiltonian(state));
        for lm in powers.iter().skip(1) {
            worst = worst.max(relative_error((lm * &lax.r).trace(), lm.trace()));
        }
        Ok((worst, details([("m_max", json!(5))])))
    });

    r.run("gradient_fd", th.gradient_fd, || {
        Ok((
            gradient_fd_error(state, config.m_max, config.fd_step)?,
            details([("h", json!(config.fd_step)), ("m_max", json!(config.m_max))]),
        ))
    });

    r.run("involution", th.involution, || {
        Ok((involution_defect(state, config.m_max)?, details([("m_max", json!(config.m_max))])))
    });

    r.run("dual_derivation", th.dual_derivation, || {
        Ok((dual_derivation_error(state, config.m_max, false)?, details([("m_max", json!(config.m_max))])))
    });
    r.run("dual_derivation_mod_gauge", th.dual_derivation, || {
        Ok((
            dual_derivation_error(state, config.m_max, true)?,
            details([("m_max", json!(config.m_max)), ("gauge_rate", json!("(L^m)_ii"))]),
        ))
    });

    let traj2 = trajectory(state, 2, config);
    let traj3 = trajectory(state, 3, config);
    let traj_details = details([("dt", json!(config.dt)), ("t_final", json!(config.t_final))]);

    match &traj2 {
        Ok(t) => r.run("lax", th.lax, || {
            let series = check_lax(t)?;
            Ok((series.iter().map(|(_, v)| *v).fold(0.0, f64::max), traj_details.clone()))
        }),
        Err(e) => r.skip("lax", th.lax, &format!("t_2 integration failed: {e}")),
    }

    let both = match (&traj2, &traj3) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    match &both {
        Ok((a, b)) => r.run("conservation", th.conservation, || {
            Ok((a.conservation_defect().max(b.conservation_defect()), traj_details.clone()))
        }),
        Err(e) => r.skip("conservation", th.conservation, &format!("integration failed: {e}")),
    }

    r.run("commutativity", th.commutativity, || {
        let s = C64::new(config.commutativity_s, 0.0);
        Ok((
            commutativity_check(state, 2, 3, s, s, config.dt)?,
            details([("m", json!([2, 3])), ("s", json!(config.commutativity_s)), ("dt", json!(config.dt))]),
        ))
    });

    match &both {
        Ok((a, b)) => r.run("constraint_drift", th.constraint_drift, || {
            Ok((a.max_drift().max(b.max_drift()), traj_details.clone()))
        }),
        Err(e) => r.skip("constraint_drift", th.constraint_drift, &format!("integration failed: {e}")),
    }

    r.run("newton_form", th.newton_form, || {
        Ok((
            newton_form_residual(state, config.newton_step, config.dt)?,
            details([("h", json!(config.newton_step)), ("dt", json!(config.dt))]),
        ))
    });

    let grid = ring_grid(state, config.grid_points, config.grid_margin);
    let contour = config.contour;
    let z_details = || details([("z", json!([config.z.re, config.z.im])), ("grid_points", json!(grid.len()))]);

    let rank1 = rank1_residue_check(state, config.z, contour.nodes, 0.4);
    r.run("rank1_residues", th.rank1_residues, || {
        let (ratio, mismatch) = rank1.clone()?;
        let mut d = z_details();
        d.insert("residue_mismatch".into(), json!(mismatch));
        Ok((ratio, d))
    });

    let w1c = w1_consistency(state, &grid, config.v_step, contour.nodes, 0.4);
    r.run("w1_residue", th.w1_residue, || Ok((w1c.clone()?.0, details([("nodes", json!(contour.nodes))]))));
    r.run("v_derivative", th.v_derivative, || {
        Ok((w1c.clone()?.1, details([("h", json!(config.v_step))])))
    });

    r.run("t1_shift", th.t1_shift, || {
        Ok((
            t1_shift_residual(state, C64::new(config.t1_shift, 0.0), config.dt, &grid)?,
            details([("s", json!(config.t1_shift))]),
        ))
    });

    r.run("linear_problem", th.linear_problem, || {
        let res = linear_problem_residual(state, config.z, &grid, config.dt2)?;
        let mut d = z_details();
        d.insert("dt2".into(), json!(config.dt2));
        d.insert("direct".into(), json!(res.direct));
        d.insert("adjoint".into(), json!(res.adjoint));
        Ok((res.max(), d))
    });

    let identities: Result<Vec<_>> = (1..=3).map(|m| residue_identity_residual(state, m, &grid)).collect();
    r.run("residue_identity", th.residue_identity, || {
        let ids = identities.clone()?;
        let entry = ids.iter().map(|i| i.entrywise).fold(0.0, f64::max);
        let trace = ids.iter().map(|i| i.trace).fold(0.0, f64::max);
        Ok((
            entry.max(trace),
            details([("m_max", json!(3)), ("entrywise", json!(entry)), ("trace", json!(trace))]),
        ))
    });
    r.run("first_order_cancellation", th.first_order_cancellation, || {
        let ids = identities.clone()?;
        Ok((ids.iter().map(|i| i.first_order).fold(0.0, f64::max), details([("m_max", json!(3))])))
    });

    if state.spin_dim() == 1 {
        r.run("n1_reduction", th.n1_reduction, || {
            Ok((
                n1_reduction_error(state, config.n1_t_final, config.dt)?,
                details([("t_final", json!(config.n1_t_final)), ("dt", json!(config.dt))]),
            ))
        });
    }

    Ok(report(state, seed, r))
}

/// Check names in suite order with their thresholds.
pub fn plan(th: &Thresholds, spin_dim: usize) -> Vec<(&'static str, f64)> {
    let mut out: Vec<(&'static str, f64)> = th.all().into_iter().filter(|(n, _)| *n != "n1_reduction").collect();
    let at = out.iter().position(|(n, _)| *n == "dual_derivation").expect("listed") + 1;
    out.insert(at, ("dual_derivation_mod_gauge", th.dual_derivation));
    if spin_dim == 1 {
        out.push(("n1_reduction", th.n1_reduction));
    }
    out
}

fn report(state: &PhaseState, seed: Option<u64>, r: Runner) -> VerificationReport {
    VerificationReport {
        seed,
        n_particles: state.n_particles(),
        spin_dim: state.spin_dim(),
        suite_version: SUITE_VERSION.to_string(),
        checks: r.checks,
    }
}

/// Draws `random_state(n, spin_dim, seed, 1.0)` and runs the suite on it.
pub fn run_seeded(n: usize, spin_dim: usize, seed: u64, config: &SuiteConfig) -> Result<VerificationReport> {
    let state = random_state(n, spin_dim, seed, 1.0)?;
    run_suite(&state, Some(seed), config)
}
