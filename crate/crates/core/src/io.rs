//! File formats. Complex numbers are always `[re, im]` pairs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{Trajectory, RECORDED_HAMILTONIANS};
use crate::kp::{potential_v, psi_pair, w1, Gauge};
use crate::phase::{PhaseState, TimeVector};
use crate::C64;

pub type Pair = [f64; 2];

pub fn pair(z: C64) -> Pair {
    [z.re, z.im]
}

pub fn unpair(p: Pair) -> C64 {
    C64::new(p[0], p[1])
}

fn pairs(v: &DVector<C64>) -> Vec<Pair> {
    v.iter().map(|z| pair(*z)).collect()
}

pub fn matrix_pairs(m: &DMatrix<C64>) -> Vec<Vec<Pair>> {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|z| pair(*z)).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub n_particles: usize,
    pub spin_dim: usize,
    pub x: Vec<Pair>,
    pub p: Vec<Pair>,
    pub a: Vec<Vec<Pair>>,
    pub b: Vec<Vec<Pair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<Pair>>,
}

impl StateFile {
    pub fn from_state(state: &PhaseState, times: Option<&TimeVector>) -> Self {
        Self {
            n_particles: state.n_particles(),
            spin_dim: state.spin_dim(),
            x: pairs(state.x()),
            p: pairs(state.p()),
            a: matrix_pairs(state.a()),
            b: matrix_pairs(state.b()),
            times: times.map(|t| t.t.iter().map(|z| pair(*z)).collect()),
        }
    }

    /// Rebuilds the state after shape checks only; call
    /// [`PhaseState::validate`] to enforce the constraint and separation.
    pub fn to_state(&self) -> Result<(PhaseState, Option<TimeVector>)> {
        let (n, d) = (self.n_particles, self.spin_dim);
        let rows_ok = |m: &Vec<Vec<Pair>>| m.len() == n && m.iter().all(|r| r.len() == d);
        if self.x.len() != n || self.p.len() != n || !rows_ok(&self.a) || !rows_ok(&self.b) {
            return Err(Error::DimensionMismatch(format!(
                "state file declares n_particles = {n}, spin_dim = {d} but the arrays disagree"
            )));
        }
        let vec = |v: &[Pair]| DVector::from_iterator(v.len(), v.iter().map(|p| unpair(*p)));
        let mat = |m: &[Vec<Pair>]| DMatrix::from_row_iterator(n, d, m.iter().flatten().map(|p| unpair(*p)));
        let state = PhaseState::from_parts_unchecked(vec(&self.x), vec(&self.p), mat(&self.a), mat(&self.b))?;
        let times = match &self.times {
            Some(t) => Some(TimeVector::new(t.iter().map(|p| unpair(*p)).collect())?),
            None => None,
        };
        Ok((state, times))
    }
}

pub fn state_to_json(state: &PhaseState, times: Option<&TimeVector>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&StateFile::from_state(state, times))?)
}

pub fn state_from_json(text: &str) -> Result<(PhaseState, Option<TimeVector>)> {
    serde_json::from_str::<StateFile>(text)?.to_state()
}

pub fn write_state(path: &Path, state: &PhaseState, times: Option<&TimeVector>) -> Result<()> {
    std::fs::write(path, state_to_json(state, times)? + "\n")?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<(PhaseState, Option<TimeVector>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    state_from_json(&text)
}

/// CSV header for trajectories of `n` particles.
pub fn trajectory_csv_header(n: usize) -> String {
    let mut cols = vec!["step".to_string(), "re_t".into(), "im_t".into()];
    for name in ["x", "p"] {
        for i in 1..=n {
            cols.push(format!("re_{name}_{i}"));
            cols.push(format!("im_{name}_{i}"));
        }
    }
    cols.push("drift".into());
    for k in 1..=RECORDED_HAMILTONIANS {
        cols.push(format!("re_H{k}"));
        cols.push(format!("im_H{k}"));
    }
    cols.join(",")
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.samples[0].state.n_particles();
    let mut out = trajectory_csv_header(n);
    out.push('\n');
    for s in &traj.samples {
        let mut fields = vec![s.step.to_string(), s.t.re.to_string(), s.t.im.to_string()];
        for z in s.state.x().iter().chain(s.state.p().iter()).chain(s.hamiltonians.iter()) {
            fields.push(z.re.to_string());
            fields.push(z.im.to_string());
        }
        fields.insert(3 + 4 * n, s.drift.to_string());
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub step: usize,
    pub t: Pair,
    pub drift: f64,
    pub hamiltonians: Vec<Pair>,
    pub state: StateFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub m: usize,
    pub samples: Vec<SampleRecord>,
}

impl TrajectoryFile {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            m: traj.m,
            samples: traj
                .samples
                .iter()
                .map(|s| SampleRecord {
                    step: s.step,
                    t: pair(s.t),
                    drift: s.drift,
                    hamiltonians: s.hamiltonians.iter().map(|h| pair(*h)).collect(),
                    state: StateFile::from_state(&s.state, None),
                })
                .collect(),
        }
    }
}

pub fn trajectory_json(traj: &Trajectory) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TrajectoryFile::from_trajectory(traj))?)
}

/// Output of a Baker-Akhiezer evaluation over a grid of `x` values at fixed `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaEval {
    pub z: Pair,
    pub grid: Vec<Pair>,
    pub psi_tilde: Vec<Vec<Vec<Pair>>>,
    pub psi_dagger_tilde: Vec<Vec<Vec<Pair>>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<Vec<Pair>>>,
    pub w1: Vec<Vec<Vec<Pair>>>,
}

pub fn ba_eval(state: &PhaseState, times: &TimeVector, z: C64, grid: &[C64]) -> Result<BaEval> {
    let mut out = BaEval {
        z: pair(z),
        grid: grid.iter().map(|x| pair(*x)).collect(),
        psi_tilde: Vec::with_capacity(grid.len()),
        psi_dagger_tilde: Vec::with_capacity(grid.len()),
        v: Vec::with_capacity(grid.len()),
        w1: Vec::with_capacity(grid.len()),
    };
    for &x in grid {
        let ba = psi_pair(state, times, z, x, Gauge::Stripped)?;
        out.psi_tilde.push(matrix_pairs(&ba.psi_tilde));
        out.psi_dagger_tilde.push(matrix_pairs(&ba.psi_dagger_tilde));
        out.v.push(matrix_pairs(&potential_v(state, x)?));
        out.w1.push(matrix_pairs(&w1(state, x)?));
    }
    Ok(out)
}
