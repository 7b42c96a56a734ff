//! Seeded experiment sweeps over `(scheme, d, m, λ, trial)` with per-cell
//! resume files and median/std aggregation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{generate, InitConfig, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{median, population_std};
use crate::rng::derive_seed;
use crate::textio::{fmt_f64, read_file, write_file, KeyValueReport};
use crate::trainer::{init_balanced, train, Cadence, TrainOptions};

pub const SWEEP_CSV_HEADER: &str =
    "scheme,d,m,lambda_exp,seed,final_loss,iters,max_angle_deg,avg_angle_deg,nuclear_norm,sq_norm,test_loss";

/// Stream tags mixed into derived seeds.
const DATASET_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TEST_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub scheme: Scheme,
    pub dims: Vec<usize>,
    pub widths: Vec<usize>,
    /// `λ = 4^e` for each entry.
    pub lambda_exps: Vec<i32>,
    pub trials: usize,
    pub lr: f64,
    pub max_iters: u64,
    pub loss_tol: f64,
    pub eps: f64,
    pub test_count: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Uncentred,
            dims: vec![4, 16, 64, 256, 1024],
            widths: vec![200],
            lambda_exps: (-13..=2).rev().collect(),
            trials: 5,
            lr: 0.01,
            max_iters: 20_000_000,
            loss_tol: 1e-9,
            eps: 0.25,
            test_count: 64,
            seed: 0,
            jobs: 1,
            out_dir: None,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::parse("sweep config", format!("bad entry {s:?} in {key}")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::parse("sweep config", format!("bad value {value:?} for {key}")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl SweepConfig {
    /// Parse `key = value` text; unspecified keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in KeyValueReport::parse(text).entries {
            match key.as_str() {
                "scheme" => cfg.scheme = parse_one(&key, &value)?,
                "dims" => cfg.dims = parse_list(&key, &value)?,
                "widths" => cfg.widths = parse_list(&key, &value)?,
                "lambda_exps" => cfg.lambda_exps = parse_list(&key, &value)?,
                "trials" => cfg.trials = parse_one(&key, &value)?,
                "lr" => cfg.lr = parse_one(&key, &value)?,
                "max_iters" => cfg.max_iters = parse_one::<f64>(&key, &value)? as u64,
                "loss_tol" => cfg.loss_tol = parse_one(&key, &value)?,
                "eps" => cfg.eps = parse_one(&key, &value)?,
                "test_count" => cfg.test_count = parse_one(&key, &value)?,
                "seed" => cfg.seed = parse_one(&key, &value)?,
                "jobs" => cfg.jobs = parse_one(&key, &value)?,
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::parse(
                        "sweep config",
                        format!("unknown key {other:?}"),
                    ));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValueReport::default();
        kv.push("scheme", self.scheme);
        kv.push("dims", join(&self.dims));
        kv.push("widths", join(&self.widths));
        kv.push("lambda_exps", join(&self.lambda_exps));
        kv.push("trials", self.trials);
        kv.push("lr", self.lr);
        kv.push("max_iters", self.max_iters);
        kv.push("loss_tol", self.loss_tol);
        kv.push("eps", self.eps);
        kv.push("test_count", self.test_count);
        kv.push("seed", self.seed);
        kv.push("jobs", self.jobs);
        if let Some(dir) = &self.out_dir {
            kv.push("out_dir", dir.display());
        }
        kv.render()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.widths.is_empty() || self.lambda_exps.is_empty() {
            return Err(Error::Precondition("sweep lists must be nonempty".into()));
        }
        if !matches!(self.scheme, Scheme::Centred | Scheme::Uncentred) {
            return Err(Error::Precondition(
                "sweep scheme must be centred or uncentred".into(),
            ));
        }
        if !(self.lr > 0.0) || self.trials == 0 || self.jobs == 0 {
            return Err(Error::Precondition(
                "need lr > 0, trials ≥ 1 and jobs ≥ 1".into(),
            ));
        }
        if !(self.eps > 0.0 && self.eps <= 0.25) {
            return Err(Error::Precondition(format!(
                "ε must lie in (0, 1/4], got {}",
                self.eps
            )));
        }
        Ok(())
    }

    /// Every cell in canonical `(d, m, λ, trial)` order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &d in &self.dims {
            for &m in &self.widths {
                for &e in &self.lambda_exps {
                    for trial in 0..self.trials {
                        out.push(Cell {
                            d,
                            m,
                            lambda_exp: e,
                            trial,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub d: usize,
    pub m: usize,
    pub lambda_exp: i32,
    pub trial: usize,
}

impl Cell {
    pub fn lambda(&self) -> f64 {
        4f64.powi(self.lambda_exp)
    }

    fn key(&self, scheme: Scheme) -> String {
        format!(
            "{}_d{}_m{}_l{}_t{}",
            scheme.as_str(),
            self.d,
            self.m,
            self.lambda_exp,
            self.trial
        )
    }
}

/// One completed cell, or an aggregate over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub d: usize,
    pub m: usize,
    pub lambda_exp: i32,
    /// Trial index, or `median` / `std` on aggregate rows.
    pub seed: String,
    pub final_loss: f64,
    pub iters: f64,
    pub max_angle_deg: f64,
    pub avg_angle_deg: f64,
    pub nuclear_norm: f64,
    pub sq_norm: f64,
    pub test_loss: f64,
}

impl SweepRow {
    fn numeric(&self) -> [f64; 7] {
        [
            self.final_loss,
            self.iters,
            self.max_angle_deg,
            self.avg_angle_deg,
            self.nuclear_norm,
            self.sq_norm,
            self.test_loss,
        ]
    }

    pub fn to_csv_line(&self) -> String {
        let nums: Vec<String> = self.numeric().iter().map(|&x| fmt_f64(x)).collect();
        format!(
            "{},{},{},{},{},{}",
            self.scheme,
            self.d,
            self.m,
            self.lambda_exp,
            self.seed,
            nums.join(",")
        )
    }

    pub fn from_csv_line(line: &str, origin: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return Err(Error::parse(
                origin,
                format!("expected 12 fields, got {}", f.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::parse(origin, format!("bad number {s:?}")))
        };
        Ok(Self {
            scheme: f[0].parse()?,
            d: num(f[1])? as usize,
            m: num(f[2])? as usize,
            lambda_exp: f[3]
                .parse()
                .map_err(|_| Error::parse(origin, format!("bad lambda_exp {:?}", f[3])))?,
            seed: f[4].to_string(),
            final_loss: num(f[5])?,
            iters: num(f[6])?,
            max_angle_deg: num(f[7])?,
            avg_angle_deg: num(f[8])?,
            nuclear_norm: num(f[9])?,
            sq_norm: num(f[10])?,
            test_loss: num(f[11])?,
        })
    }

    fn group(&self) -> (String, usize, usize, i32) {
        (
            self.scheme.as_str().to_string(),
            self.d,
            self.m,
            self.lambda_exp,
        )
    }

    pub fn is_aggregate(&self) -> bool {
        self.seed == "median" || self.seed == "std"
    }
}

/// Median and population standard deviation per `(scheme, d, m, λ)`.
pub fn aggregate(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut groups: Vec<(String, usize, usize, i32)> = rows
        .iter()
        .filter(|r| !r.is_aggregate())
        .map(SweepRow::group)
        .collect();
    groups.sort_by(|a, b| (&a.0, a.1, a.2, -a.3).cmp(&(&b.0, b.1, b.2, -b.3)));
    groups.dedup();
    let mut out = Vec::new();
    for g in groups {
        let members: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| !r.is_aggregate() && r.group() == g)
            .collect();
        let cols: Vec<Vec<f64>> = (0..7)
            .map(|k| members.iter().map(|r| r.numeric()[k]).collect())
            .collect();
        for (label, f) in [
            ("median", median as fn(&[f64]) -> f64),
            ("std", population_std),
        ] {
            let v: Vec<f64> = cols.iter().map(|c| f(c)).collect();
            out.push(SweepRow {
                scheme: members[0].scheme,
                d: g.1,
                m: g.2,
                lambda_exp: g.3,
                seed: label.to_string(),
                final_loss: v[0],
                iters: v[1],
                max_angle_deg: v[2],
                avg_angle_deg: v[3],
                nuclear_norm: v[4],
                sq_norm: v[5],
                test_loss: v[6],
            });
        }
    }
    out
}

/// Train one cell. The dataset depends on `(seed, scheme, d, trial)` and
/// the initial directions on `(seed, scheme, d, m, trial)`, so every λ in a
/// sweep rescales the same `z`.
pub fn run_cell(cfg: &SweepConfig, cell: Cell) -> Result<(SweepRow, crate::trainer::TrainLog)> {
    let scheme_tag = cfg.scheme as u64;
    let (d, m, t) = (cell.d as u64, cell.m as u64, cell.trial as u64);
    let ds = generate(
        cfg.scheme,
        cell.d,
        cell.d,
        derive_seed(&[cfg.seed, DATASET_STREAM, scheme_tag, d, t]),
    )?;
    let init = InitConfig::gaussian(
        cell.d,
        cell.m,
        cell.lambda(),
        cfg.eps,
        derive_seed(&[cfg.seed, INIT_STREAM, scheme_tag, d, m, t]),
    )?;
    let opts = TrainOptions {
        lr: cfg.lr,
        max_iters: cfg.max_iters,
        loss_tol: cfg.loss_tol,
        cadence: Cadence::Geometric,
        test: (cfg.test_count > 0).then(|| {
            (
                cfg.test_count,
                derive_seed(&[cfg.seed, TEST_STREAM, scheme_tag, d, t]),
            )
        }),
        track_crossings: false,
        ..TrainOptions::default()
    };
    let log = train(&init_balanced(&init), &ds, &opts)?;
    let last = log.final_record();
    let row = SweepRow {
        scheme: cfg.scheme,
        d: cell.d,
        m: cell.m,
        lambda_exp: cell.lambda_exp,
        seed: cell.trial.to_string(),
        final_loss: last.loss,
        iters: log.iterations as f64,
        max_angle_deg: if last.angle_flag {
            f64::NAN
        } else {
            last.max_angle_deg
        },
        avg_angle_deg: if last.angle_flag {
            f64::NAN
        } else {
            last.avg_angle_deg
        },
        nuclear_norm: last.nuclear_norm,
        sq_norm: last.sq_norm,
        test_loss: last.test_loss.unwrap_or(f64::NAN),
    };
    Ok((row, log))
}

fn cell_paths(dir: &Path, key: &str) -> (PathBuf, PathBuf) {
    let cells = dir.join("cells");
    (
        cells.join(format!("{key}.row")),
        cells.join(format!("{key}.log.csv")),
    )
}

/// Run every cell (skipping those with a saved row under `out_dir/cells`),
/// then return cell rows sorted by `(scheme, d, m, λ, trial)` followed by
/// aggregate rows.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let results: Vec<Result<SweepRow>> = pool.install(|| {
        cfg.cells()
            .into_par_iter()
            .map(|cell| {
                let key = cell.key(cfg.scheme);
                if let Some(dir) = &cfg.out_dir {
                    let (row_path, _) = cell_paths(dir, &key);
                    if row_path.exists() {
                        let text = read_file(&row_path)?;
                        return SweepRow::from_csv_line(&text, &row_path.display().to_string());
                    }
                }
                let (row, log) = run_cell(cfg, cell)?;
                if let Some(dir) = &cfg.out_dir {
                    let (row_path, log_path) = cell_paths(dir, &key);
                    write_file(&log_path, &log.to_csv())?;
                    write_file(&row_path, &(row.to_csv_line() + "\n"))?;
                }
                Ok(row)
            })
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        (
            a.scheme.as_str(),
            a.d,
            a.m,
            -a.lambda_exp,
            a.seed.parse::<usize>().unwrap_or(0),
        )
            .cmp(&(
                b.scheme.as_str(),
                b.d,
                b.m,
                -b.lambda_exp,
                b.seed.parse::<usize>().unwrap_or(0),
            ))
    });
    let agg = aggregate(&rows);
    rows.extend(agg);
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn rows_from_csv(text: &str, origin: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == SWEEP_CSV_HEADER => {}
        _ => return Err(Error::parse(origin, "missing sweep CSV header")),
    }
    lines.map(|l| SweepRow::from_csv_line(l, origin)).collect()
}

/// Median rows for one `(d, m)` ordered by decreasing `λ`.
pub fn medians_by_lambda(rows: &[SweepRow], d: usize, m: usize) -> Vec<(i32, f64)> {
    let mut v: Vec<(i32, f64)> = rows
        .iter()
        .filter(|r| r.seed == "median" && r.d == d && r.m == m)
        .map(|r| (r.lambda_exp, r.max_angle_deg))
        .collect();
    v.sort_by_key(|x| -x.0);
    v
}

/// Medians strictly decrease as `λ` decreases.
pub fn strictly_decreasing(medians: &[(i32, f64)]) -> bool {
    medians.windows(2).all(|w| w[1].1 < w[0].1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(seed: &str, max_angle: f64) -> SweepRow {
        SweepRow {
            scheme: Scheme::Uncentred,
            d: 4,
            m: 8,
            lambda_exp: -2,
            seed: seed.into(),
            final_loss: 1.0,
            iters: 10.0,
            max_angle_deg: max_angle,
            avg_angle_deg: max_angle / 2.0,
            nuclear_norm: 1.0,
            sq_norm: 2.0,
            test_loss: 0.5,
        }
    }

    fn tiny() -> SweepConfig {
        SweepConfig {
            dims: vec![3],
            widths: vec![6],
            lambda_exps: vec![-1, -3],
            trials: 2,
            max_iters: 300,
            test_count: 8,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn aggregate_by_hand() {
        let rows = vec![row("0", 1.0), row("1", 2.0), row("2", 100.0)];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].seed, "median");
        assert_eq!(agg[0].max_angle_deg, 2.0);
        let mean = 103.0 / 3.0;
        let var = ((1.0 - mean) * (1.0f64 - mean)
            + (2.0 - mean) * (2.0 - mean)
            + (100.0 - mean) * (100.0 - mean))
            / 3.0;
        assert_abs_diff_eq!(agg[1].max_angle_deg, var.sqrt(), epsilon = 1e-12);
        let single = aggregate(&[row("0", 7.0)]);
        assert_eq!(single[0].max_angle_deg, 7.0);
        assert_eq!(single[1].max_angle_deg, 0.0);
    }

    #[test]
    fn five_rows_match_spreadsheet() {
        let vals = [3.0, 1.0, 4.0, 1.0, 5.0];
        let rows: Vec<SweepRow> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| row(&i.to_string(), v))
            .collect();
        let agg = aggregate(&rows);
        assert_eq!(agg[0].max_angle_deg, 3.0);
        // STDEV.P of {3,1,4,1,5}: mean 2.8, variance 12.8/5 = 2.56.
        assert_abs_diff_eq!(agg[1].max_angle_deg, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(agg[1].avg_angle_deg, 1.6 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg = SweepConfig {
            out_dir: Some("out".into()),
            ..tiny()
        };
        let back = SweepConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(SweepConfig::from_text("bogus = 1").is_err());
        assert!(SweepConfig::from_text("dims = ").is_err());
        assert!(SweepConfig::from_text("lr = 0").is_err());
        assert!(SweepConfig::from_text("scheme = mneg").is_err());
        let c = SweepConfig::from_text("max_iters = 2e7\nlambda_exps = 2, 1, -13").unwrap();
        assert_eq!(c.max_iters, 20_000_000);
        assert_eq!(c.lambda_exps, vec![2, 1, -13]);
    }

    #[test]
    fn deterministic_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig {
            out_dir: Some(dir.path().to_path_buf()),
            jobs: 2,
            ..tiny()
        };
        let first = rows_to_csv(&run_sweep(&cfg).unwrap());
        let again = rows_to_csv(&run_sweep(&tiny()).unwrap());
        assert_eq!(first, again);
        // Resumed run reads every cell from disk.
        let resumed = rows_to_csv(&run_sweep(&cfg).unwrap());
        assert_eq!(first, resumed);
        let cells = std::fs::read_dir(dir.path().join("cells")).unwrap().count();
        assert_eq!(cells, 2 * tiny().cells().len());
        let parsed = rows_from_csv(&first, "mem").unwrap();
        assert_eq!(rows_to_csv(&parsed), first);
        // 4 cell rows + 2 groups × (median, std).
        assert_eq!(parsed.len(), 8);
        assert_eq!(parsed[0].lambda_exp, -1);
    }

    #[test]
    fn same_directions_across_lambda() {
        let cfg = tiny();
        let (_, a) = run_cell(
            &cfg,
            Cell {
                d: 3,
                m: 6,
                lambda_exp: -1,
                trial: 0,
            },
        )
        .unwrap();
        let (_, b) = run_cell(
            &cfg,
            Cell {
                d: 3,
                m: 6,
                lambda_exp: -3,
                trial: 0,
            },
        )
        .unwrap();
        let za = &a.initial.provenance.as_ref().unwrap().z;
        let zb = &b.initial.provenance.as_ref().unwrap().z;
        assert_eq!(za, zb);
    }

    #[test]
    fn trend_helpers() {
        assert!(strictly_decreasing(&[(-2, 3.0), (-4, 2.0), (-6, 1.0)]));
        assert!(!strictly_decreasing(&[(-2, 3.0), (-4, 3.0)]));
    }
}
