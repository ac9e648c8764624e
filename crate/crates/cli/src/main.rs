mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use spincm::flows::{integrate, FlowSpec, Method};
use spincm::io::{ba_eval, read_state, trajectory_csv, trajectory_json, write_state};
use spincm::kp::linear_grid;
use spincm::lax::hamiltonians;
use spincm::verify::run_suite;
use spincm::{random_state, C64};

use config::Config;

#[derive(Debug, Parser)]
#[command(name = "spincm", version, about = "Spin Calogero-Moser poles of rational matrix KP solutions")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "SPINCM_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for instance generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output path (for `evolve`, the stem of the .csv and .json files).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random phase-space point and write it as a state file.
    Gen {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        particles: u32,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        spin: u32,
        /// Minimum pairwise distance between poles.
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
    },
    /// Integrate the t_m flow from a state file.
    Evolve {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        m: u32,
        /// End time, e.g. `1`, `0.5+0.2i`.
        #[arg(long = "t-final", value_parser = parse_complex, allow_hyphen_values = true)]
        t_final: C64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long = "record-every")]
        record_every: Option<usize>,
    },
    /// Run the verification suite on a state file or a generated instance.
    Verify {
        #[arg(long, conflicts_with_all = ["particles", "spin"])]
        state: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..), requires = "spin")]
        particles: Option<u32>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..), requires = "particles")]
        spin: Option<u32>,
    },
    /// Evaluate Baker-Akhiezer matrices, V and w1 on a straight x-grid.
    BaEval {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        z: C64,
        #[arg(long = "x-from", value_parser = parse_complex, allow_hyphen_values = true)]
        x_from: C64,
        #[arg(long = "x-to", value_parser = parse_complex, allow_hyphen_values = true)]
        x_to: C64,
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
}

/// Parses `re`, `re+imi`, `re-imi`, `imi`.
fn parse_complex(s: &str) -> std::result::Result<C64, String> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("expected a complex number like 1.5, 2-0.5i or 0.3i, got {s:?}");
    let Some(body) = t.strip_suffix('i') else {
        return t.parse::<f64>().map(|re| C64::new(re, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => "1",
        "-" => "-1",
        other => other,
    };
    let re: f64 = re.parse().map_err(|_| bad())?;
    let im: f64 = im.trim_start_matches('+').parse().map_err(|_| bad())?;
    Ok(C64::new(re, im))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn fmt_c(z: C64) -> String {
    format!("{:.15e} {:+.15e}i", z.re, z.im)
}

fn out_path(cli: &Cli, config: &Config, default: &str) -> PathBuf {
    config.resolve(cli.out.as_deref().unwrap_or(Path::new(default)))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let config = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen {
            particles,
            spin,
            separation,
        } => {
            let state = random_state(*particles as usize, *spin as usize, cli.seed, *separation)?;
            let path = out_path(cli, &config, "state.json");
            ensure_parent(&path)?;
            write_state(&path, &state, None)?;
            println!("wrote {}", path.display());
            for (k, h) in hamiltonians(&state, 5)?.into_iter().enumerate() {
                println!("H{} = {}", k + 1, fmt_c(h));
            }
        }
        Command::Evolve {
            state,
            m,
            t_final,
            dt,
            method,
            record_every,
        } => {
            let (start, _) = read_state(state)?;
            start.validate(&config.tolerances)?;
            let defaults = &config.integrator;
            let spec = FlowSpec {
                m: *m as usize,
                t_final: *t_final,
                dt: dt.unwrap_or(defaults.dt),
                method: method.unwrap_or(defaults.method),
                record_every: record_every.unwrap_or(defaults.record_every),
                max_steps: defaults.max_steps,
                tolerance: defaults.tolerance,
                eps_coll: config.tolerances.eps_coll,
            };
            let traj = integrate(&start, &spec)?;
            let stem = out_path(cli, &config, "trajectory");
            ensure_parent(&stem)?;
            let csv = stem.with_extension("csv");
            let json = stem.with_extension("json");
            std::fs::write(&csv, trajectory_csv(&traj)).with_context(|| format!("writing {}", csv.display()))?;
            std::fs::write(&json, trajectory_json(&traj)? + "\n").with_context(|| format!("writing {}", json.display()))?;
            let last = traj.last();
            println!("wrote {} and {}", csv.display(), json.display());
            println!("samples: {}, final t = {}", traj.samples.len(), fmt_c(last.t));
            println!("max constraint drift: {:.3e}", traj.max_drift());
            println!("max scaled change of H1..H5: {:.3e}", traj.conservation_defect());
        }
        Command::Verify { state, particles, spin } => {
            let (instance, seed) = match (state, particles, spin) {
                (Some(path), _, _) => (read_state(path)?.0, None),
                (None, Some(n), Some(d)) => (random_state(*n as usize, *d as usize, cli.seed, 1.0)?, Some(cli.seed)),
                _ => bail!("verify needs --state or both --particles and --spin"),
            };
            let report = run_suite(&instance, seed, &config.suite())?;
            let path = out_path(cli, &config, "report.json");
            ensure_parent(&path)?;
            std::fs::write(&path, report.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
            print!("{}", report.summary_table());
            println!("wrote {}", path.display());
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::BaEval {
            state,
            z,
            x_from,
            x_to,
            points,
        } => {
            let (instance, times) = read_state(state)?;
            let grid = linear_grid(*x_from, *x_to, *points);
            let out = ba_eval(&instance, &times.unwrap_or_default(), *z, &grid)?;
            let path = out_path(cli, &config, "ba.json");
            ensure_parent(&path)?;
            std::fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} ({} grid points)", path.display(), grid.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
