use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conewalk::harness::{self, ExperimentSpec, SimulateSpec, Theorem};
use conewalk::kernels::KernelConfig;
use conewalk::selftest;
use conewalk::Error;

const SPEC_HELP: &str = r#"Experiment config (JSON):
{
  "ensemble": { "dim": 2, "support": [{ "matrix": [[2,1],[1,1]], "prob": 0.5 },
                                      { "matrix": [[1,1],[1,2]], "prob": 0.5 }] },
  "assert_non_arithmetic": true,
  "grid": { "n": [1024], "y": [2.0], "z": [0.5], "z_units": "sigma_sqrt_n", "delta": [1.0] },
  "num_traj": 1000000,
  "seed": 1,
  "theorem": "thm1"
}
Optional: center, start_x, start_x_dual, y_units, budgets, tol, delta_floor,
target, regime, ks_tol, min_survivors, kernel.
The ensemble may also be { "generator": "exp_uniform", "params": { "dim": 3, "low": 0, "high": 1 } }.
`simulate` takes { "ensemble", "n", "num_traj", "seed", "levels", "per_trajectory" }."#;

#[derive(Parser)]
#[command(name = "conewalk", version, about = "Random walks on the positive cone and their conditioned limit theorems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; reports go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of trajectories and summarize it.
    Simulate(Common),
    /// Estimate the Lyapunov exponent, variance, invariant measure and harmonic functions.
    Estimate(Common),
    /// Compare Monte Carlo frequencies with a limit theorem.
    Verify {
        /// thm1, target, caravenna, large_y, cclt, thm3 or duality.
        theorem: String,
        #[command(flatten)]
        common: Common,
        /// Per-cell tolerance on |ratio - 1|.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Tabulate a kernel (psi, ell, H, L, rayleigh_pdf, rayleigh_cdf) on a grid as CSV.
    Kernels {
        name: String,
        /// First-argument grid as start:stop:count.
        #[arg(long, default_value = "0:3:31")]
        x: String,
        /// Second-argument grid as start:stop:count.
        #[arg(long, default_value = "0:3:31")]
        y: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the kernel and geometry property suites.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::BoundViolation { .. } => Failure::Verification(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn read_config(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}\n\n{SPEC_HELP}", path.display())))
}

fn load_spec(common: &Common) -> Result<ExperimentSpec, Failure> {
    let text = read_config(&common.config)?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("invalid config {}: {e}\n\n{SPEC_HELP}", common.config.display())))?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn emit(out: Option<&Path>, file: &str, text: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(e.to_string()))?;
            std::fs::write(dir.join(file), text).map_err(|e| Failure::Usage(e.to_string()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Usage(e.to_string()))
}

fn parse_range(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("grid {s:?} is not start:stop:count"));
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, k] = parts.as_slice() else {
        return Err(bad());
    };
    let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    let k: usize = k.parse().map_err(|_| bad())?;
    Ok(match k {
        0 => return Err(bad()),
        1 => vec![a],
        _ => (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect(),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(common) => {
            let text = read_config(&common.config)?;
            let mut spec: SimulateSpec = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("invalid config: {e}\n\n{SPEC_HELP}")))?;
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let (summary, table) = harness::simulate(&spec)?;
            emit(common.out.as_deref(), "summary.json", &to_json(&summary)?)?;
            if let Some(csv) = table {
                emit(common.out.as_deref(), "trajectories.csv", &csv)?;
            }
            Ok(())
        }
        Command::Estimate(common) => {
            let spec = load_spec(&common)?;
            let (report, nu_csv) = harness::estimate(&spec)?;
            match common.out.as_deref() {
                Some(dir) => {
                    emit(Some(dir), "estimate.json", &to_json(&report)?)?;
                    if let Some(csv) = nu_csv {
                        emit(Some(dir), "nu.csv", &csv)?;
                    }
                    println!("{}", to_json(&report.diagnostics)?);
                }
                None => println!("{}", to_json(&report)?),
            }
            Ok(())
        }
        Command::Verify { theorem, common, tol } => {
            let theorem: Theorem = theorem.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let mut spec = load_spec(&common)?;
            spec.theorem = theorem;
            if let Some(t) = tol {
                spec.tol = t;
            }
            let report = harness::verify(&spec)?;
            match common.out.as_deref() {
                Some(dir) => report.write(dir)?,
                None => println!("{}", report.to_json()?),
            }
            for c in report.cells.iter().filter(|c| !c.pass) {
                eprintln!(
                    "FAIL n={} y={} z={} delta={} mc={:.4e}±{:.1e} theory={:.4e}",
                    c.n, c.y, c.z, c.delta, c.mc_prob, c.mc_stderr, c.theory
                );
            }
            for (k, v) in &report.metrics {
                eprintln!("{k} = {v}");
            }
            if report.pass {
                eprintln!("PASS {theorem:?}");
                Ok(())
            } else {
                Err(Failure::Verification(format!("{theorem:?} failed")))
            }
        }
        Command::Kernels { name, x, y, out } => {
            let csv = harness::tabulate_kernel(&KernelConfig::default(), &name, &parse_range(&x)?, &parse_range(&y)?)?;
            match out {
                Some(path) => std::fs::write(path, csv).map_err(|e| Failure::Usage(e.to_string())),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Selftest { seed } => {
            let mut checks = selftest::kernel_suite(&KernelConfig::default());
            checks.extend(selftest::geometry_suite(seed));
            for c in &checks {
                println!(
                    "{} {}/{} (worst {:.3e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.suite,
                    c.name,
                    c.worst
                );
            }
            if selftest::all_pass(&checks) {
                Ok(())
            } else {
                Err(Failure::Verification("self-test failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
    }
}
