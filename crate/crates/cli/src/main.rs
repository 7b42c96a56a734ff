//! `saddlelab`: command-line front end for dataset generation, yardstick
//! schedules, instrumented training, phase analysis, interpolator
//! certificates, seeded sweeps and the acceptance suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use saddlelab::checks;
use saddlelab::dataset::{self, validate_assumptions};
use saddlelab::interpolator;
use saddlelab::linalg::norm;
use saddlelab::phases;
use saddlelab::sweep::{self, SweepConfig};
use saddlelab::textio::{self, KeyValueReport};
use saddlelab::trainer::{self, sidecar, Cadence, TrainOptions};
use saddlelab::yardstick::{self, ScheduleRow, YardstickTrace};
use saddlelab::{Dataset, InitConfig, Scheme, TrainLog};

/// Relative tolerance when checking a `--traces` file against a fresh solve.
const TRACE_MATCH_RTOL: f64 = 1e-9;
/// Samples per stage for the trajectory infimum inside δ.
const MEASURE_SAMPLES: usize = 1000;

#[derive(Parser)]
#[command(
    name = "saddlelab",
    version,
    about = "Small-initialisation ReLU training laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset and write it in the text format.
    Gen {
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        d: usize,
        /// Number of points; defaults to d.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the yardstick trajectories of an initialisation and write the
    /// crossing schedule CSV.
    Yardstick {
        #[arg(long)]
        dataset: PathBuf,
        /// Init file: header `m d`, then `s_j z_j...` per line.
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scale used for δ/Δ and the time bounds; accepts `4^-8`.
        #[arg(long, default_value = "4^-10", value_parser = parse_lambda)]
        lambda: f64,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
    },
    /// Train from a balanced Gaussian initialisation and write the log with
    /// its sidecar files.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, value_parser = parse_lambda)]
        lambda: f64,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Seed of the initialisation draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2e7)]
        max_iters: f64,
        #[arg(long, default_value_t = 1e-9)]
        loss_tol: f64,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        track_eigen: bool,
        /// Size of a Gaussian test set drawn with the init seed.
        #[arg(long)]
        test_loss: Option<usize>,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        /// Store θ at every logged iteration (needed by the first-phase and
        /// `S` analyses of `phases`).
        #[arg(long)]
        keep_snapshots: bool,
        /// Also write the initialisation in the `yardstick --init` format.
        #[arg(long)]
        init_out: Option<PathBuf>,
    },
    /// Compare a training log against its yardstick schedule and the
    /// bundle-phase predictions.
    Phases {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_parser = parse_lambda)]
        lambda: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate M for a dataset and build the interpolators it predicts.
    Interp {
        #[arg(long, conflicts_with = "family")]
        dataset: Option<PathBuf>,
        #[arg(long, value_parser = ["mneg", "mpos"])]
        family: Option<String>,
        /// Dimension of a built-in family.
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, requires = "family")]
        xi: Option<f64>,
        #[arg(long, requires = "family")]
        b: Option<f64>,
        /// Random multistarts per index set.
        #[arg(long, default_value_t = 64)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sweep from a key-value config and write the row CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<out_dir>/sweep.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite; exits nonzero on any hard failure.
    Verify {
        /// Skip the full-scale sweep comparison.
        #[arg(long)]
        fast: bool,
    },
}

/// Accepts plain decimals or `base^exp`, e.g. `4^-8`.
fn parse_lambda(s: &str) -> std::result::Result<f64, String> {
    let value = match s.split_once('^') {
        Some((base, exp)) => {
            let base: f64 = base
                .trim()
                .parse()
                .map_err(|_| format!("bad base in {s:?}"))?;
            let exp: i32 = exp
                .trim()
                .parse()
                .map_err(|_| format!("bad exponent in {s:?}"))?;
            base.powi(exp)
        }
        None => s.trim().parse().map_err(|_| format!("bad number {s:?}"))?,
    };
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(format!("scale must be positive and finite, got {s:?}"))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            scheme,
            d,
            n,
            seed,
            out,
        } => {
            if !matches!(scheme, Scheme::Centred | Scheme::Uncentred) {
                bail!("gen supports only centred and uncentred schemes");
            }
            let ds = dataset::generate(scheme, d, n.unwrap_or(d), seed)?;
            ds.write(&out)?;
            println!(
                "wrote {} points in dimension {} to {}",
                ds.len(),
                d,
                out.display()
            );
        }
        Command::Yardstick {
            dataset,
            init,
            out,
            lambda,
            eps,
        } => cmd_yardstick(&dataset, &init, &out, lambda, eps)?,
        Command::Train {
            dataset,
            m,
            lambda,
            lr,
            seed,
            max_iters,
            loss_tol,
            log,
            track_eigen,
            test_loss,
            eps,
            keep_snapshots,
            init_out,
        } => {
            if !(max_iters >= 0.0 && max_iters.fract() == 0.0) {
                bail!("--max-iters must be a non-negative integer");
            }
            let ds = Dataset::read(&dataset)?;
            let init = InitConfig::gaussian(ds.dim(), m, lambda, eps, seed)?;
            let mut opts = TrainOptions {
                lr,
                max_iters: max_iters as u64,
                loss_tol,
                cadence: Cadence::Geometric,
                track_eigen,
                test: test_loss.map(|c| (c, seed)),
                keep_snapshots,
                ..TrainOptions::default()
            };
            // Log the iterates nearest T₀ and T₁ when the schedule is solvable.
            if let Ok(traces) = yardstick::simulate_all(&ds, &init) {
                let g = norm(&ds.gamma_all());
                let t0 = traces
                    .iter()
                    .map(YardstickTrace::last_tau)
                    .fold(0.0, f64::max)
                    + 1.0;
                let t1 = eps * (-lambda.ln()) / g;
                opts.force_log = vec![(t0 / lr).round() as u64, (t1 / lr).round() as u64];
            }
            let start = Instant::now();
            let run = trainer::train(&trainer::init_balanced(&init), &ds, &opts)?;
            run.write_bundle(&log)?;
            if let Some(p) = init_out {
                textio::write_file(&p, &init.to_text())?;
            }
            let last = run.final_record();
            println!(
                "stop {} after {} iterations, loss {:.6e}, ‖θ‖² {:.6}, {:.2}s",
                run.stop.as_str(),
                run.iterations,
                last.loss,
                last.sq_norm,
                start.elapsed().as_secs_f64()
            );
        }
        Command::Phases {
            log,
            dataset,
            traces,
            lambda,
            eps,
            out,
        } => cmd_phases(&log, &dataset, &traces, lambda, eps, &out)?,
        Command::Interp {
            dataset,
            family,
            d,
            xi,
            b,
            budget,
            seed,
            out,
        } => {
            let ds = match (dataset, family.as_deref()) {
                (Some(p), None) => Dataset::read(&p)?,
                (None, Some("mneg")) => {
                    let xi = xi.context("--family mneg needs --xi")?;
                    interpolator::example_family_mneg(d.unwrap_or(2), xi)?
                }
                (None, Some("mpos")) => {
                    let b = b.context("--family mpos needs --b")?;
                    interpolator::example_family_mpos(d.unwrap_or(3), b)?
                }
                _ => bail!("give either --dataset or --family"),
            };
            let report = interpolator::analyze(&ds, budget, seed)?;
            textio::write_file(&out, &report.to_kv().render())?;
            report.rank1.write(&sidecar(&out, "rank1"))?;
            if let Some(c) = &report.counterexample {
                c.params.write(&sidecar(&out, "counterexample"))?;
            }
            println!(
                "M = {:.9} ({})",
                report.witness.value,
                report.verdict.as_str()
            );
        }
        Command::Sweep { config, out } => {
            let text = textio::read_file(&config)?;
            let cfg = SweepConfig::from_text(&text)?;
            let out = out
                .or_else(|| cfg.out_dir.as_ref().map(|d| d.join("sweep.csv")))
                .context("no --out given and the config has no out_dir")?;
            let start = Instant::now();
            let rows = sweep::run_sweep(&cfg)?;
            textio::write_file(&out, &sweep::rows_to_csv(&rows))?;
            println!(
                "{} rows written to {} in {:.1}s",
                rows.len(),
                out.display(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Verify { fast } => {
            let results = checks::run_all(fast, |r| println!("{}", r.line()));
            if results.iter().any(|r| r.hard_failure()) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_yardstick(dataset: &Path, init: &Path, out: &Path, lambda: f64, eps: f64) -> Result<()> {
    let ds = Dataset::read(dataset)?;
    let init = InitConfig::read(init, lambda, eps)?;
    if init.dim() != ds.dim() {
        bail!(
            "init dimension {} does not match dataset dimension {}",
            init.dim(),
            ds.dim()
        );
    }
    let start = Instant::now();
    let traces = yardstick::simulate_all(&ds, &init)?;
    let solve_secs = start.elapsed().as_secs_f64();
    yardstick::write_traces(out, &traces)?;
    println!("{} traces solved in {:.3}s", traces.len(), solve_secs);
    let report = validate_assumptions(&ds, &init);
    if !report.all_passed() {
        println!("assumptions not met: {}", report.violations.join("; "));
        return Ok(());
    }
    let start = Instant::now();
    let meas = yardstick::measurements(&ds, &init, &traces, MEASURE_SAMPLES)?;
    let times = yardstick::theoretical_times(&meas, lambda, eps, 1e-9, &traces)?;
    println!(
        "delta {:.6e}  Delta {:.6e}  ({:.3}s)",
        meas.delta,
        meas.big_delta,
        start.elapsed().as_secs_f64()
    );
    println!(
        "T0 {:.6}  T1 {:.6}  T2 bound {:.6e}  loss-time bound {:.6e}",
        times.t0, times.t1, times.t2_bound, times.loss_time_bound
    );
    Ok(())
}

/// Rows whose neuron, stage, crossing and time agree up to `TRACE_MATCH_RTOL`.
fn same_schedule(file: &[ScheduleRow], fresh: &[ScheduleRow]) -> bool {
    file.len() == fresh.len()
        && file.iter().zip(fresh).all(|(a, b)| {
            a.neuron == b.neuron
                && a.sign == b.sign
                && a.stage == b.stage
                && a.crossing == b.crossing
                && (a.tau - b.tau).abs() <= TRACE_MATCH_RTOL * a.tau.abs().max(1.0)
        })
}

fn cmd_phases(
    log: &Path,
    dataset: &Path,
    traces: &Path,
    lambda: f64,
    eps: f64,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::read(dataset)?;
    let run = TrainLog::read_bundle(log)?;
    // The CSV lacks the full ω state, so the schedule is re-solved from the
    // initialisation stored next to the log and checked against the file.
    let init = run
        .initial
        .provenance
        .clone()
        .with_context(|| format!("{} has no init sidecar", log.display()))?;
    let init = InitConfig::new(init.z, init.signs, lambda, eps)?;
    let fresh = yardstick::simulate_all(&ds, &init)?;
    let file_rows = yardstick::read_traces(traces)?;
    let fresh_rows = yardstick::parse_traces_csv(&yardstick::traces_to_csv(&fresh), "solver")?;
    if !same_schedule(&file_rows, &fresh_rows) {
        bail!(
            "{} does not match the schedule of the logged initialisation",
            traces.display()
        );
    }
    let report = phases::analyze(&run, &ds, &fresh, lambda, eps)?;
    let mut kv: KeyValueReport = report.to_kv();
    kv.push("log", log.display());
    textio::write_file(out, &kv.render())?;
    textio::write_file(&sidecar(out, "neurons.csv"), &report.neurons_csv())?;
    println!(
        "crossing order {} for {} neurons, T2 {}",
        if report.crossing_order_ok() {
            "matches"
        } else {
            "differs"
        },
        report.crossings.len(),
        report.t2.map_or("not reached".into(), |t| t.to_string())
    );
    Ok(())
}
