//! Student network `h(x) = Σ_j a_j relu(w_jᵀx)`, its loss and gradient, and
//! an instrumented full-batch gradient descent loop.
//!
//! The ReLU derivative at zero is taken to be zero.

use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::{Dataset, EigenAnalysis, InitConfig};
use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, norm};
use crate::rng::{seeded, standard_normal_vec};
use crate::textio::{self, fmt_f64, fmt_row};

/// Parameters `θ = (a, W)` with `W` stored row-major (`m` rows of length `d`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub a: Vec<f64>,
    pub w: Vec<f64>,
    pub d: usize,
    /// Initialisation that produced these parameters, if any.
    pub provenance: Option<InitConfig>,
}

impl NetworkParams {
    pub fn new(a: Vec<f64>, w: Vec<Vec<f64>>) -> Result<Self> {
        let d = w.first().map_or(0, Vec::len);
        if a.len() != w.len() || a.is_empty() || w.iter().any(|r| r.len() != d) || d == 0 {
            return Err(Error::Precondition("inconsistent parameter shapes".into()));
        }
        let p = Self {
            a,
            w: w.into_iter().flatten().collect(),
            d,
            provenance: None,
        };
        if !p.is_finite() {
            return Err(Error::Precondition("non-finite parameter".into()));
        }
        Ok(p)
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            a: vec![0.0; m],
            w: vec![0.0; m * d],
            d,
            provenance: None,
        }
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn neuron(&self, j: usize) -> &[f64] {
        &self.w[j * self.d..(j + 1) * self.d]
    }

    pub fn neurons(&self) -> impl Iterator<Item = &[f64]> {
        self.w.chunks_exact(self.d)
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.w).all(|v| v.is_finite())
    }

    /// `‖θ‖² = Σ_j a_j² + ‖W‖_F²`.
    pub fn sq_norm(&self) -> f64 {
        self.a.iter().chain(&self.w).map(|v| v * v).sum()
    }

    /// `a_j² − ‖w_j‖²` per neuron.
    pub fn balance_residuals(&self) -> Vec<f64> {
        self.neurons()
            .zip(&self.a)
            .map(|(w, a)| a * a - dot(w, w))
            .collect()
    }

    /// Sum of singular values of `W`.
    pub fn nuclear_norm(&self) -> f64 {
        DMatrix::from_row_slice(self.width(), self.d, &self.w)
            .singular_values()
            .sum()
    }

    /// Text form: header `m d`, then one line `a_j w_j...` per neuron.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.width(), self.d);
        for (a, w) in self.a.iter().zip(self.neurons()) {
            s.push_str(&fmt_f64(*a));
            s.push(' ');
            s.push_str(&fmt_row(w));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let lines = textio::token_lines(text);
        let header = lines
            .first()
            .ok_or_else(|| Error::parse(origin, "empty parameter file"))?;
        if header.len() != 2 {
            return Err(Error::parse(origin, "header must be `m d`"));
        }
        let m = textio::parse_usize(header[0], origin)?;
        let d = textio::parse_usize(header[1], origin)?;
        if lines.len() != m + 1 {
            return Err(Error::parse(origin, format!("expected {m} neuron lines")));
        }
        let mut a = Vec::with_capacity(m);
        let mut w = Vec::with_capacity(m);
        for line in &lines[1..] {
            let v = textio::parse_f64s(line, origin)?;
            if v.len() != d + 1 {
                return Err(Error::parse(origin, "neuron line has wrong length"));
            }
            a.push(v[0]);
            w.push(v[1..].to_vec());
        }
        Self::new(a, w)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        textio::write_file(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&textio::read_file(path)?, &path.display().to_string())
    }
}

/// `w_j = λ z_j`, `a_j = s_j λ ‖z_j‖`.
pub fn init_balanced(init: &InitConfig) -> NetworkParams {
    let d = init.dim();
    let mut a = Vec::with_capacity(init.width());
    let mut w = Vec::with_capacity(init.width() * d);
    for (z, &s) in init.z.iter().zip(&init.signs) {
        let wj: Vec<f64> = z.iter().map(|c| init.lambda * c).collect();
        a.push(f64::from(s) * norm(&wj));
        w.extend(wj);
    }
    NetworkParams {
        a,
        w,
        d,
        provenance: Some(init.clone()),
    }
}

/// Convenience wrapper validating `(λ, z, s)` first.
pub fn init_balanced_from(lambda: f64, z: Vec<Vec<f64>>, signs: Vec<i8>) -> Result<NetworkParams> {
    Ok(init_balanced(&InitConfig::new(z, signs, lambda, 0.25)?))
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> f64 {
    params
        .neurons()
        .zip(&params.a)
        .map(|(w, a)| a * dot(w, x).max(0.0))
        .sum()
}

/// `L(θ) = (1/2n) Σ_i (y_i − h(x_i))²`.
pub fn loss(params: &NetworkParams, ds: &Dataset) -> f64 {
    let n = ds.len() as f64;
    ds.points()
        .zip(ds.labels())
        .map(|(x, y)| (y - forward(params, x)).powi(2))
        .sum::<f64>()
        / (2.0 * n)
}

/// `∂L/∂a_j = −w_jᵀg_j`, `∂L/∂w_j = −a_j g_j` with
/// `g_j = (1/n) Σ_i (y_i − h(x_i)) 1[w_jᵀx_i > 0] x_i`.
pub fn gradient(params: &NetworkParams, ds: &Dataset) -> NetworkParams {
    let (m, d) = (params.width(), params.dim());
    let n = ds.len() as f64;
    let resid: Vec<f64> = ds
        .points()
        .zip(ds.labels())
        .map(|(x, y)| y - forward(params, x))
        .collect();
    let mut grad = NetworkParams::zeros(m, d);
    for j in 0..m {
        let w = params.neuron(j);
        let mut g = vec![0.0; d];
        for (x, r) in ds.points().zip(&resid) {
            if dot(w, x) > 0.0 {
                crate::linalg::axpy(r / n, x, &mut g);
            }
        }
        grad.a[j] = -dot(w, &g);
        for c in 0..d {
            grad.w[j * d + c] = -params.a[j] * g[c];
        }
    }
    grad
}

/// Standard-normal test inputs labelled by the teacher.
pub fn test_set(teacher: &[f64], count: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = seeded(seed);
    let xs: Vec<Vec<f64>> = (0..count)
        .map(|_| standard_normal_vec(&mut rng, teacher.len()))
        .collect();
    let ys = xs.iter().map(|x| dot(teacher, x).max(0.0)).collect();
    (xs, ys)
}

fn half_mse(params: &NetworkParams, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (y - forward(params, x)).powi(2))
        .sum::<f64>()
        / (2.0 * xs.len() as f64)
}

/// Same loss form as training, on `count` fresh Gaussian inputs.
pub fn test_loss(params: &NetworkParams, teacher: &[f64], count: usize, seed: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::Precondition("test count must be at least 1".into()));
    }
    if teacher.len() != params.dim() {
        return Err(Error::Precondition("teacher dimension mismatch".into()));
    }
    let (xs, ys) = test_set(teacher, count, seed);
    Ok(half_mse(params, &xs, &ys))
}

/// Snapshot of the run at one logged iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub loss: f64,
    pub grad_sq: f64,
    /// `v = Σ_{j∈J+} a_j w_j`; empty when reconstructed from CSV.
    pub bundle: Vec<f64>,
    /// `ν_k = u_kᵀv` when eigen tracking is on.
    pub nu: Option<Vec<f64>>,
    pub neuron_norms: Vec<f64>,
    pub balance: Vec<f64>,
    pub max_angle_deg: f64,
    pub avg_angle_deg: f64,
    pub active_count: usize,
    /// Fewer than two active neurons: the angle fields are placeholders.
    pub angle_flag: bool,
    pub nuclear_norm: f64,
    pub sq_norm: f64,
    pub pl_ratio: Option<f64>,
    pub test_loss: Option<f64>,
}

impl MetricsRecord {
    pub fn max_balance(&self) -> f64 {
        self.balance.iter().map(|b| b.abs()).fold(0.0, f64::max)
    }
}

/// Neurons with at least one training point strictly in their half-space.
pub fn active_neurons(params: &NetworkParams, ds: &Dataset) -> Vec<usize> {
    (0..params.width())
        .filter(|&j| !ds.index_sets(params.neuron(j)).plus.is_empty())
        .collect()
}

/// Max and mean pairwise angle (degrees) among the given neurons.
pub fn pairwise_angles(params: &NetworkParams, neurons: &[usize]) -> Option<(f64, f64)> {
    if neurons.len() < 2 {
        return None;
    }
    let (mut max, mut sum, mut count) = (0.0f64, 0.0, 0usize);
    for (k, &p) in neurons.iter().enumerate() {
        for &q in &neurons[k + 1..] {
            let ang = cosine(params.neuron(p), params.neuron(q))
                .acos()
                .to_degrees();
            max = max.max(ang);
            sum += ang;
            count += 1;
        }
    }
    Some((max, sum / count as f64))
}

/// `J+` for a parameter set: provenance signs when available, current signs
/// otherwise, restricted to neurons that see a point.
pub fn j_plus_of(params: &NetworkParams, ds: &Dataset) -> Vec<usize> {
    match &params.provenance {
        Some(init) => init.j_plus(ds),
        None => (0..params.width())
            .filter(|&j| params.a[j] > 0.0 && !ds.index_sets(params.neuron(j)).plus.is_empty())
            .collect(),
    }
}

pub fn bundle(params: &NetworkParams, j_plus: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; params.dim()];
    for &j in j_plus {
        crate::linalg::axpy(params.a[j], params.neuron(j), &mut v);
    }
    v
}

fn record_for(
    params: &NetworkParams,
    ds: &Dataset,
    eigen: Option<&EigenAnalysis>,
    j_plus: &[usize],
    iteration: u64,
    loss_value: f64,
    grad_sq: f64,
    test: Option<&(Vec<Vec<f64>>, Vec<f64>)>,
) -> MetricsRecord {
    let active = active_neurons(params, ds);
    let angles = pairwise_angles(params, &active);
    let v = bundle(params, j_plus);
    MetricsRecord {
        iteration,
        loss: loss_value,
        grad_sq,
        nu: eigen.map(|e| e.coords(&v)),
        bundle: v,
        neuron_norms: params.neurons().map(norm).collect(),
        balance: params.balance_residuals(),
        max_angle_deg: angles.map_or(0.0, |a| a.0),
        avg_angle_deg: angles.map_or(0.0, |a| a.1),
        active_count: active.len(),
        angle_flag: angles.is_none(),
        nuclear_norm: params.nuclear_norm(),
        sq_norm: params.sq_norm(),
        pl_ratio: (loss_value > 0.0).then(|| grad_sq / loss_value),
        test_loss: test.map(|(xs, ys)| half_mse(params, xs, ys)),
    }
}

/// All metrics of a parameter set at once.
pub fn metrics(
    params: &NetworkParams,
    ds: &Dataset,
    eigen: Option<&EigenAnalysis>,
) -> MetricsRecord {
    let g = gradient(params, ds);
    let j_plus = j_plus_of(params, ds);
    record_for(
        params,
        ds,
        eigen,
        &j_plus,
        0,
        loss(params, ds),
        g.sq_norm(),
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cadence {
    /// Every iteration up to 100, then spacing growing by 5%.
    Geometric,
    Every(u64),
}

impl Cadence {
    fn next_after(self, t: u64) -> u64 {
        match self {
            Cadence::Every(k) => t + k.max(1),
            Cadence::Geometric => {
                if t < 100 {
                    t + 1
                } else {
                    ((t as f64 * 1.05).ceil() as u64).max(t + 1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    LossTol,
    MaxIters,
    Divergence,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::LossTol => "loss_tol",
            StopReason::MaxIters => "max_iters",
            StopReason::Divergence => "divergence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "loss_tol" => Some(StopReason::LossTol),
            "max_iters" => Some(StopReason::MaxIters),
            "divergence" => Some(StopReason::Divergence),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub max_iters: u64,
    pub loss_tol: f64,
    pub cadence: Cadence,
    /// Extra iterations that must be logged (e.g. nearest to `T₁/lr`).
    pub force_log: Vec<u64>,
    pub track_eigen: bool,
    /// `(count, seed)` of the Gaussian test set.
    pub test: Option<(usize, u64)>,
    pub track_crossings: bool,
    /// Keep a copy of `θ` at every logged iteration.
    pub keep_snapshots: bool,
    /// Stop once the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_iters: 20_000_000,
            loss_tol: 1e-9,
            cadence: Cadence::Geometric,
            force_log: Vec::new(),
            track_eigen: false,
            test: None,
            track_crossings: true,
            keep_snapshots: false,
            divergence_factor: 1e6,
        }
    }
}

/// Activation boundary crossing observed between two iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEvent {
    pub neuron: usize,
    pub point: usize,
    /// Fractional iteration from linear interpolation of `w_jᵀx_i`.
    pub iteration: f64,
    pub entering: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub options: TrainOptions,
    pub initial: NetworkParams,
    pub j_plus: Vec<usize>,
    pub records: Vec<MetricsRecord>,
    pub crossings: Vec<CrossingEvent>,
    /// Aligned with `records` when snapshots are kept.
    pub snapshots: Vec<NetworkParams>,
    pub final_params: NetworkParams,
    pub iterations: u64,
    pub stop: StopReason,
}

impl TrainLog {
    pub fn final_record(&self) -> &MetricsRecord {
        self.records
            .last()
            .expect("a log always has a final record")
    }

    /// Time of a record under `t = iteration · lr`.
    pub fn time(&self, iteration: f64) -> f64 {
        iteration * self.options.lr
    }

    pub fn csv_header(&self) -> String {
        let d = self.initial.dim();
        let mut h = String::from(
            "iteration,loss,grad_sq,max_angle_deg,avg_angle_deg,nuclear_norm,sq_norm,pl_ratio",
        );
        if self.options.track_eigen {
            for k in 1..=d {
                h.push_str(&format!(",nu_{k}"));
            }
        }
        if self.options.test.is_some() {
            h.push_str(",test_loss");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.csv_header();
        s.push('\n');
        for r in &self.records {
            let mut fields = vec![
                r.iteration.to_string(),
                fmt_f64(r.loss),
                fmt_f64(r.grad_sq),
                fmt_f64(r.max_angle_deg),
                fmt_f64(r.avg_angle_deg),
                fmt_f64(r.nuclear_norm),
                fmt_f64(r.sq_norm),
                fmt_f64(r.pl_ratio.unwrap_or(f64::NAN)),
            ];
            if let Some(nu) = &r.nu {
                fields.extend(nu.iter().map(|v| fmt_f64(*v)));
            }
            if let Some(t) = r.test_loss {
                fields.push(fmt_f64(t));
            }
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }

    pub fn crossings_csv(&self) -> String {
        let mut s = String::from("neuron,point,iteration,direction\n");
        for c in &self.crossings {
            s.push_str(&format!(
                "{},{},{},{}\n",
                c.neuron,
                c.point,
                fmt_f64(c.iteration),
                if c.entering { "enter" } else { "exit" }
            ));
        }
        s
    }
}

/// Records parsed back from a log CSV; per-neuron fields are left empty.
pub fn records_from_csv(text: &str, origin: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse(origin, "empty log"))?
        .split(',')
        .collect();
    if header.len() < 8 || header[0] != "iteration" {
        return Err(Error::parse(origin, "unexpected log header"));
    }
    let nu_cols: Vec<usize> = (0..header.len())
        .filter(|&k| header[k].starts_with("nu_"))
        .collect();
    let test_col = header.iter().position(|h| *h == "test_loss");
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(Error::parse(origin, format!("bad log row {line:?}")));
        }
        let num = |k: usize| {
            f[k].trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(origin, format!("bad number {:?}", f[k])))
        };
        let iteration = f[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::parse(origin, "bad iteration"))?;
        let pl = num(7)?;
        let nu = if nu_cols.is_empty() {
            None
        } else {
            Some(
                nu_cols
                    .iter()
                    .map(|&k| num(k))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        out.push(MetricsRecord {
            iteration,
            loss: num(1)?,
            grad_sq: num(2)?,
            bundle: Vec::new(),
            nu,
            neuron_norms: Vec::new(),
            balance: Vec::new(),
            max_angle_deg: num(3)?,
            avg_angle_deg: num(4)?,
            active_count: 0,
            angle_flag: false,
            nuclear_norm: num(5)?,
            sq_norm: num(6)?,
            pl_ratio: (!pl.is_nan()).then_some(pl),
            test_loss: test_col.map(num).transpose()?,
        });
    }
    Ok(out)
}

/// File next to a log: `run.csv` becomes `run.csv.<suffix>`.
pub fn sidecar(log: &Path, suffix: &str) -> std::path::PathBuf {
    let mut name = log.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    name.into()
}

/// Crossing events parsed back from [`TrainLog::crossings_csv`].
pub fn crossings_from_csv(text: &str, origin: &str) -> Result<Vec<CrossingEvent>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("neuron,point,iteration,direction") {
        return Err(Error::parse(origin, "unexpected crossings header"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(Error::parse(origin, format!("bad crossing row {line:?}")));
            }
            let entering = match f[3] {
                "enter" => true,
                "exit" => false,
                other => return Err(Error::parse(origin, format!("bad direction {other:?}"))),
            };
            Ok(CrossingEvent {
                neuron: textio::parse_usize(f[0], origin)?,
                point: textio::parse_usize(f[1], origin)?,
                iteration: textio::parse_f64s(&f[2..3], origin)?[0],
                entering,
            })
        })
        .collect()
}

/// Snapshots as lines `iteration a_1..a_m w_11..w_md` under a `count m d` header.
pub fn snapshots_to_text(records: &[MetricsRecord], snapshots: &[NetworkParams]) -> String {
    let (m, d) = snapshots.first().map_or((0, 0), |p| (p.width(), p.dim()));
    let mut s = format!("{} {} {}\n", snapshots.len(), m, d);
    for (r, p) in records.iter().zip(snapshots) {
        s.push_str(&format!(
            "{} {} {}\n",
            r.iteration,
            fmt_row(&p.a),
            fmt_row(&p.w)
        ));
    }
    s
}

pub fn snapshots_from_text(text: &str, origin: &str) -> Result<Vec<(u64, NetworkParams)>> {
    let lines = textio::token_lines(text);
    let header = lines
        .first()
        .ok_or_else(|| Error::parse(origin, "empty snapshot file"))?;
    if header.len() != 3 {
        return Err(Error::parse(origin, "header must be `count m d`"));
    }
    let count = textio::parse_usize(header[0], origin)?;
    let m = textio::parse_usize(header[1], origin)?;
    let d = textio::parse_usize(header[2], origin)?;
    if lines.len() != count + 1 {
        return Err(Error::parse(
            origin,
            format!("expected {count} snapshot lines"),
        ));
    }
    lines[1..]
        .iter()
        .map(|line| {
            if line.len() != 1 + m + m * d {
                return Err(Error::parse(origin, "snapshot line has wrong length"));
            }
            let it = line[0]
                .parse::<u64>()
                .map_err(|_| Error::parse(origin, "bad snapshot iteration"))?;
            let v = textio::parse_f64s(&line[1..], origin)?;
            let w = v[m..].chunks(d).map(<[f64]>::to_vec).collect();
            Ok((it, NetworkParams::new(v[..m].to_vec(), w)?))
        })
        .collect()
}

impl TrainLog {
    /// Write the metrics CSV at `path` plus sidecars: `meta` (key-value run
    /// settings), `initial` and `params` (parameter dumps), `init` (the
    /// `(s, z)` draw, when known), `crossings.csv` and, when kept,
    /// `snapshots`.
    pub fn write_bundle(&self, path: &Path) -> Result<()> {
        textio::write_file(path, &self.to_csv())?;
        let mut kv = textio::KeyValueReport::default();
        kv.push("lr", self.options.lr);
        kv.push("max_iters", self.options.max_iters);
        kv.push("loss_tol", self.options.loss_tol);
        kv.push("iterations", self.iterations);
        kv.push("stop", self.stop.as_str());
        kv.push("track_eigen", self.options.track_eigen);
        if let Some((count, seed)) = self.options.test {
            kv.push("test_count", count);
            kv.push("test_seed", seed);
        }
        if let Some(init) = &self.initial.provenance {
            kv.push("lambda", init.lambda);
            kv.push("eps", init.eps);
            textio::write_file(&sidecar(path, "init"), &init.to_text())?;
        }
        let jp: Vec<String> = self.j_plus.iter().map(usize::to_string).collect();
        kv.push("j_plus", jp.join(" "));
        textio::write_file(&sidecar(path, "meta"), &kv.render())?;
        self.initial.write(&sidecar(path, "initial"))?;
        self.final_params.write(&sidecar(path, "params"))?;
        textio::write_file(&sidecar(path, "crossings.csv"), &self.crossings_csv())?;
        if !self.snapshots.is_empty() {
            textio::write_file(
                &sidecar(path, "snapshots"),
                &snapshots_to_text(&self.records, &self.snapshots),
            )?;
        }
        Ok(())
    }

    /// Inverse of [`TrainLog::write_bundle`]. Per-neuron record fields are
    /// restored from snapshots when those exist.
    pub fn read_bundle(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let mut records = records_from_csv(&textio::read_file(path)?, &origin)?;
        let meta_path = sidecar(path, "meta");
        let meta = textio::KeyValueReport::parse(&textio::read_file(&meta_path)?);
        let meta_origin = meta_path.display().to_string();
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::parse(&meta_origin, format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(&meta_origin, format!("bad value for {k}")))
        };
        let mut initial = NetworkParams::read(&sidecar(path, "initial"))?;
        let init_path = sidecar(path, "init");
        if init_path.exists() {
            initial.provenance = Some(InitConfig::read(&init_path, num("lambda")?, num("eps")?)?);
        }
        let final_params = NetworkParams::read(&sidecar(path, "params"))?;
        let crossings_path = sidecar(path, "crossings.csv");
        let crossings = if crossings_path.exists() {
            crossings_from_csv(
                &textio::read_file(&crossings_path)?,
                &crossings_path.display().to_string(),
            )?
        } else {
            Vec::new()
        };
        let j_plus = get("j_plus")?
            .split_whitespace()
            .map(|t| textio::parse_usize(t, &meta_origin))
            .collect::<Result<Vec<_>>>()?;
        let snap_path = sidecar(path, "snapshots");
        let snapshots = if snap_path.exists() {
            let snaps = snapshots_from_text(
                &textio::read_file(&snap_path)?,
                &snap_path.display().to_string(),
            )?;
            if snaps.len() != records.len()
                || snaps
                    .iter()
                    .zip(&records)
                    .any(|((it, _), r)| *it != r.iteration)
            {
                return Err(Error::parse(
                    snap_path.display().to_string(),
                    "snapshots do not line up with the log records",
                ));
            }
            for (r, (_, p)) in records.iter_mut().zip(&snaps) {
                r.bundle = bundle(p, &j_plus);
                r.neuron_norms = p.neurons().map(norm).collect();
                r.balance = p.balance_residuals();
            }
            snaps.into_iter().map(|(_, p)| p).collect()
        } else {
            Vec::new()
        };
        let test = match (meta.get("test_count"), meta.get("test_seed")) {
            (Some(c), Some(s)) => Some((
                textio::parse_usize(c, &meta_origin)?,
                s.parse()
                    .map_err(|_| Error::parse(&meta_origin, "bad test_seed"))?,
            )),
            _ => None,
        };
        let options = TrainOptions {
            lr: num("lr")?,
            max_iters: num("max_iters")? as u64,
            loss_tol: num("loss_tol")?,
            track_eigen: get("track_eigen")? == "true",
            keep_snapshots: !snapshots.is_empty(),
            test,
            ..TrainOptions::default()
        };
        let stop = StopReason::parse(get("stop")?)
            .ok_or_else(|| Error::parse(&meta_origin, "bad stop reason"))?;
        if records.is_empty() {
            return Err(Error::parse(origin, "log has no records"));
        }
        Ok(TrainLog {
            options,
            initial,
            j_plus,
            records,
            crossings,
            snapshots,
            final_params,
            iterations: num("iterations")? as u64,
            stop,
        })
    }
}

/// Dense buffers for the training loop.
struct Workspace {
    x: DMatrix<f64>,
    xt: DMatrix<f64>,
    y: Vec<f64>,
    w: DMatrix<f64>,
    a: Vec<f64>,
    p: DMatrix<f64>,
    mask: DMatrix<f64>,
    g: DMatrix<f64>,
    grad_a: Vec<f64>,
}

impl Workspace {
    fn new(params: &NetworkParams, ds: &Dataset) -> Self {
        let (m, d, n) = (params.width(), params.dim(), ds.len());
        let x = DMatrix::from_row_slice(n, d, ds.points_flat());
        Self {
            xt: x.transpose(),
            x,
            y: ds.labels().to_vec(),
            w: DMatrix::from_row_slice(m, d, &params.w),
            a: params.a.clone(),
            p: DMatrix::zeros(m, n),
            mask: DMatrix::zeros(m, n),
            g: DMatrix::zeros(m, d),
            grad_a: vec![0.0; m],
        }
    }

    /// Pre-activations `P = W Xᵀ`.
    fn preactivations(&mut self) {
        self.p.gemm(1.0, &self.w, &self.xt, 0.0);
    }

    /// Loss and `‖∇L‖²` at the current point; leaves `g_j` rows in `self.g`.
    fn loss_and_grad(&mut self) -> (f64, f64) {
        let (m, n) = self.p.shape();
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        for i in 0..n {
            let col = self.p.column(i);
            let h: f64 = col
                .iter()
                .zip(&self.a)
                .map(|(p, a)| if *p > 0.0 { a * p } else { 0.0 })
                .sum();
            let r = self.y[i] - h;
            loss += r * r;
            let scaled = r * inv_n;
            for j in 0..m {
                self.mask[(j, i)] = if self.p[(j, i)] > 0.0 { scaled } else { 0.0 };
            }
        }
        self.g.gemm(1.0, &self.mask, &self.x, 0.0);
        let mut sq = 0.0;
        for j in 0..m {
            // w_jᵀg_j = (1/n) Σ_i r_i relu(P_ji).
            let mut wg = 0.0;
            for i in 0..n {
                wg += self.mask[(j, i)] * self.p[(j, i)];
            }
            self.grad_a[j] = -wg;
            let gn: f64 = self.g.row(j).iter().map(|v| v * v).sum();
            sq += wg * wg + self.a[j] * self.a[j] * gn;
        }
        (loss * 0.5 * inv_n, sq)
    }

    fn step(&mut self, lr: f64) {
        let m = self.a.len();
        for j in 0..m {
            let c = lr * self.a[j];
            let mut row = self.w.row_mut(j);
            row += c * self.g.row(j);
        }
        for j in 0..m {
            self.a[j] -= lr * self.grad_a[j];
        }
    }

    fn params(&self, template: &NetworkParams) -> NetworkParams {
        let (m, d) = self.w.shape();
        let mut w = Vec::with_capacity(m * d);
        for j in 0..m {
            w.extend(self.w.row(j).iter());
        }
        NetworkParams {
            a: self.a.clone(),
            w,
            d,
            provenance: template.provenance.clone(),
        }
    }
}

/// Gradient descent `θ ← θ − lr ∇L(θ)` with metrics at the logging cadence,
/// at every forced iteration and at the final iterate.
pub fn train(params: &NetworkParams, ds: &Dataset, opts: &TrainOptions) -> Result<TrainLog> {
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::Precondition(format!(
            "learning rate must be positive, got {}",
            opts.lr
        )));
    }
    if params.dim() != ds.dim() {
        return Err(Error::Precondition(
            "parameter and data dimensions differ".into(),
        ));
    }
    let eigen = if opts.track_eigen {
        Some(ds.eigen_analysis()?)
    } else {
        None
    };
    let test = opts
        .test
        .map(|(count, seed)| test_set(ds.teacher(), count.max(1), seed));
    let j_plus = j_plus_of(params, ds);
    let mut forced = opts.force_log.clone();
    forced.sort_unstable();
    forced.dedup();
    let mut forced = forced.into_iter().peekable();

    let mut ws = Workspace::new(params, ds);
    let (m, n) = (params.width(), ds.len());
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut crossings = Vec::new();
    let mut prev_p: Option<DMatrix<f64>> = None;
    let mut next_log = 0u64;
    let mut initial_loss = None;
    let mut t = 0u64;

    let stop = loop {
        ws.preactivations();
        if opts.track_crossings {
            if let Some(prev) = &prev_p {
                for i in 0..n {
                    for j in 0..m {
                        let (old, new) = (prev[(j, i)], ws.p[(j, i)]);
                        if (old > 0.0) != (new > 0.0) {
                            crossings.push(CrossingEvent {
                                neuron: j,
                                point: i,
                                iteration: (t - 1) as f64 + old / (old - new),
                                entering: new > 0.0,
                            });
                        }
                    }
                }
            }
            match &mut prev_p {
                Some(prev) => prev.copy_from(&ws.p),
                None => prev_p = Some(ws.p.clone()),
            }
        }
        let (l, gsq) = ws.loss_and_grad();
        let l0 = *initial_loss.get_or_insert(l);

        let stop = if !l.is_finite() || l > opts.divergence_factor * l0.max(f64::MIN_POSITIVE) {
            Some(StopReason::Divergence)
        } else if l < opts.loss_tol {
            Some(StopReason::LossTol)
        } else if t >= opts.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };

        while forced.peek().is_some_and(|&f| f < t) {
            forced.next();
        }
        let is_forced = forced.peek() == Some(&t);
        if t == next_log || is_forced || stop.is_some() {
            let p = ws.params(params);
            records.push(record_for(
                &p,
                ds,
                eigen.as_ref(),
                &j_plus,
                t,
                l,
                gsq,
                test.as_ref(),
            ));
            if opts.keep_snapshots {
                snapshots.push(p);
            }
            if t == next_log {
                next_log = opts.cadence.next_after(t);
            }
        }
        if let Some(reason) = stop {
            break reason;
        }
        ws.step(opts.lr);
        t += 1;
    };

    Ok(TrainLog {
        options: opts.clone(),
        initial: params.clone(),
        j_plus,
        records,
        crossings,
        snapshots,
        final_params: ws.params(params),
        iterations: t,
        stop,
    })
}

#[cfg(test)]
mod tests {

    #[test]
    fn bundle_round_trip() {
        let ds = crate::dataset::generate_uncentred(3, 4, 2).unwrap();
        let init = InitConfig::gaussian(3, 5, 0.1, 0.25, 4).unwrap();
        let opts = TrainOptions {
            lr: 0.05,
            max_iters: 300,
            track_eigen: true,
            keep_snapshots: true,
            test: Some((8, 1)),
            ..TrainOptions::default()
        };
        let log = train(&init_balanced(&init), &ds, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        log.write_bundle(&path).unwrap();
        let back = TrainLog::read_bundle(&path).unwrap();
        assert_eq!(back.final_params.a, log.final_params.a);
        assert_eq!(back.initial.provenance, log.initial.provenance);
        assert_eq!(back.crossings, log.crossings);
        assert_eq!(back.snapshots.len(), log.snapshots.len());
        assert_eq!(back.j_plus, log.j_plus);
        assert_eq!(back.stop, log.stop);
        for (a, b) in back.records.iter().zip(&log.records) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.nu, b.nu);
            assert_eq!(a.bundle, b.bundle);
            assert_eq!(a.neuron_norms, b.neuron_norms);
        }
        assert_eq!(back.to_csv(), log.to_csv());
    }
    use super::*;
    use crate::dataset::generate_uncentred;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn toy() -> Dataset {
        Dataset::from_points(vec![vec![1.0, 0.0], vec![0.8, 0.6]], vec![1.0, 0.0]).unwrap()
    }

    fn rank1(ds: &Dataset) -> NetworkParams {
        NetworkParams::new(vec![1.0], vec![ds.teacher().to_vec()]).unwrap()
    }

    /// One-sided Jacobi SVD, independent of nalgebra.
    fn jacobi_singular_values(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
        // Columns of A as vectors; orthogonalise pairs until convergence.
        let mut a: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| data[r * cols + c]).collect())
            .collect();
        for _ in 0..100 {
            let mut off = 0.0f64;
            for p in 0..cols {
                for q in p + 1..cols {
                    let alpha = dot(&a[p], &a[p]);
                    let beta = dot(&a[q], &a[q]);
                    let gamma = dot(&a[p], &a[q]);
                    if gamma.abs() < 1e-300 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt());
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for r in 0..rows {
                        let (x, y) = (a[p][r], a[q][r]);
                        a[p][r] = c * x - s * y;
                        a[q][r] = s * x + c * y;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        a.iter().map(|v| norm(v)).collect()
    }

    fn random_params(seed: u64, m: usize, d: usize) -> NetworkParams {
        let mut rng = seeded(seed);
        let a = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = (0..m).map(|_| standard_normal_vec(&mut rng, d)).collect();
        NetworkParams::new(a, w).unwrap()
    }

    #[test]
    fn balanced_init_formula() {
        let p = init_balanced_from(0.1, vec![vec![3.0, 4.0]], vec![-1]).unwrap();
        assert!((p.w[0] - 0.3).abs() < 1e-15 && (p.w[1] - 0.4).abs() < 1e-15);
        assert!((p.a[0] + 0.5).abs() < 1e-15);
        let q = init_balanced_from(1.0, vec![vec![1.0, 0.0]], vec![1]).unwrap();
        assert_eq!((q.a[0], q.w.clone()), (1.0, vec![1.0, 0.0]));
        let init = InitConfig::gaussian(5, 30, 0.37, 0.25, 11).unwrap();
        let r = init_balanced(&init);
        // a_j = s_j ‖w_j‖ holds to rounding; residual is at the ulp level.
        assert!(r.balance_residuals().iter().all(|b| b.abs() <= 1e-15));
        assert!(init_balanced_from(0.1, vec![vec![0.0, 0.0]], vec![1]).is_err());
    }

    #[test]
    fn forward_cases() {
        let p = NetworkParams::new(vec![1.0], vec![vec![1.0, 0.0]]).unwrap();
        assert!((forward(&p, &[0.7, 3.0]) - 0.7).abs() < 1e-15);
        let dead =
            NetworkParams::new(vec![1.0, -2.0], vec![vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(forward(&dead, &[1.0, 1.0]), 0.0);
        let ds = toy();
        let r = rank1(&ds);
        for (x, y) in ds.points().zip(ds.labels()) {
            assert!((forward(&r, x) - y).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_cases() {
        let ds = toy();
        let zero = NetworkParams::zeros(3, 2);
        let expected = (1.0 + 0.64) / 4.0;
        assert!((loss(&zero, &ds) - expected).abs() < 1e-15);
        assert!(loss(&rank1(&ds), &ds) <= 1e-12);
        let p = random_params(1, 5, 2);
        let mut acc = 0.0;
        for i in 0..ds.len() {
            let mut h = 0.0;
            for j in 0..5 {
                let pre = p.w[2 * j] * ds.point(i)[0] + p.w[2 * j + 1] * ds.point(i)[1];
                if pre > 0.0 {
                    h += p.a[j] * pre;
                }
            }
            acc += (ds.labels()[i] - h) * (ds.labels()[i] - h);
        }
        assert!((loss(&p, &ds) - acc / 4.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_special_cases() {
        let ds = toy();
        let dead = NetworkParams::new(vec![0.5], vec![vec![-1.0, -1.0]]).unwrap();
        let g = gradient(&dead, &ds);
        assert!(g.a.iter().chain(&g.w).all(|v| *v == 0.0));
        let g = gradient(&rank1(&ds), &ds);
        assert!(g.sq_norm() <= 1e-28);
    }

    fn finite_difference_check(seed: u64) {
        let ds = generate_uncentred(4, 4, 3).unwrap();
        let p = random_params(seed, 8, 4);
        let g = gradient(&p, &ds);
        let h = 1e-6;
        let mut fd = NetworkParams::zeros(8, 4);
        for k in 0..8 {
            let mut plus = p.clone();
            plus.a[k] += h;
            let mut minus = p.clone();
            minus.a[k] -= h;
            fd.a[k] = (loss(&plus, &ds) - loss(&minus, &ds)) / (2.0 * h);
        }
        for k in 0..32 {
            let mut plus = p.clone();
            plus.w[k] += h;
            let mut minus = p.clone();
            minus.w[k] -= h;
            fd.w[k] = (loss(&plus, &ds) - loss(&minus, &ds)) / (2.0 * h);
        }
        let diff: f64 =
            g.a.iter()
                .chain(&g.w)
                .zip(fd.a.iter().chain(&fd.w))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
        assert!(
            diff <= 1e-5 * g.sq_norm().sqrt().max(1e-3),
            "seed {seed}: {diff}"
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            finite_difference_check(seed);
        }
    }

    #[test]
    fn workspace_matches_reference() {
        let ds = generate_uncentred(4, 6, 1).unwrap();
        let p = random_params(4, 7, 4);
        let mut ws = Workspace::new(&p, &ds);
        ws.preactivations();
        let (l, sq) = ws.loss_and_grad();
        let g = gradient(&p, &ds);
        assert!((l - loss(&p, &ds)).abs() < 1e-13);
        assert!((sq - g.sq_norm()).abs() < 1e-12 * sq.max(1.0));
        ws.step(0.1);
        let stepped = ws.params(&p);
        for k in 0..p.w.len() {
            assert!((stepped.w[k] - (p.w[k] - 0.1 * g.w[k])).abs() < 1e-14);
        }
        for k in 0..p.a.len() {
            assert!((stepped.a[k] - (p.a[k] - 0.1 * g.a[k])).abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_point_stops_immediately() {
        let ds = toy();
        let log = train(&rank1(&ds), &ds, &TrainOptions::default()).unwrap();
        assert_eq!(log.iterations, 0);
        assert_eq!(log.stop, StopReason::LossTol);
        assert!(log.final_record().loss <= 1e-12);
    }

    #[test]
    fn small_step_loss_is_monotone() {
        let ds = generate_uncentred(4, 4, 2).unwrap();
        let init = InitConfig::gaussian(4, 10, 0.1, 0.25, 1).unwrap();
        let opts = TrainOptions {
            lr: 1e-3,
            max_iters: 5000,
            cadence: Cadence::Every(10),
            ..TrainOptions::default()
        };
        let log = train(&init_balanced(&init), &ds, &opts).unwrap();
        for w in log.records.windows(2) {
            assert!(w[1].loss <= w[0].loss);
        }
        let iters: Vec<u64> = log.records.iter().map(|r| r.iteration).collect();
        assert!(iters.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn divergence_is_detected() {
        // One overshooting step multiplies the loss by about 21.
        let ds = toy();
        let p = NetworkParams::new(vec![0.5], vec![vec![0.5, 0.0]]).unwrap();
        let opts = TrainOptions {
            lr: 5.0,
            max_iters: 1000,
            divergence_factor: 10.0,
            ..TrainOptions::default()
        };
        let log = train(&p, &ds, &opts).unwrap();
        assert_eq!(log.stop, StopReason::Divergence);
        assert_eq!(log.iterations, 1);

        let huge = NetworkParams::new(vec![1e200], vec![vec![1e200, 0.0]]).unwrap();
        let log = train(&huge, &ds, &TrainOptions::default()).unwrap();
        assert_eq!(log.stop, StopReason::Divergence);
        assert!(train(&p, &ds, &TrainOptions { lr: 0.0, ..opts }).is_err());
    }

    #[test]
    fn geometric_cadence_spacing() {
        let mut t = 0;
        let mut seen = vec![];
        while t < 300 {
            seen.push(t);
            t = Cadence::Geometric.next_after(t);
        }
        assert_eq!(&seen[..101], &(0..=100).collect::<Vec<_>>()[..]);
        assert_eq!(seen[101], 105);
        assert_eq!(seen[102], 111);
    }

    #[test]
    fn crossings_are_interpolated() {
        let ds = generate_uncentred(4, 4, 5).unwrap();
        let init = InitConfig::gaussian(4, 12, 0.05, 0.25, 8).unwrap();
        let opts = TrainOptions {
            lr: 1e-2,
            max_iters: 3000,
            ..TrainOptions::default()
        };
        let log = train(&init_balanced(&init), &ds, &opts).unwrap();
        for c in &log.crossings {
            assert!(c.iteration >= 0.0 && c.iteration <= log.iterations as f64);
        }
    }

    #[test]
    fn angle_metrics() {
        let ds = toy();
        let p = NetworkParams::new(
            vec![1.0, 2.0, 1.0],
            vec![vec![1.0, 0.2], vec![2.0, 0.4], vec![0.5, 0.1]],
        )
        .unwrap();
        let r = metrics(&p, &ds, None);
        assert!(r.max_angle_deg.abs() < 1e-5 && !r.angle_flag);
        let single =
            NetworkParams::new(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![-1.0, -1.0]]).unwrap();
        let r = metrics(&single, &ds, None);
        assert!(r.angle_flag);
        assert_eq!(r.max_angle_deg, 0.0);
    }

    #[test]
    fn rank_one_norms() {
        let ds = toy();
        // W = [0.6 v*; 0.8 v*] has unit Frobenius norm and rank 1.
        let p = NetworkParams::new(vec![0.6, 0.8], vec![vec![0.6, 0.0], vec![0.8, 0.0]]).unwrap();
        let r = metrics(&p, &ds, None);
        assert!((r.nuclear_norm - 1.0).abs() < 1e-12);
        assert!((r.sq_norm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nuclear_norm_matches_jacobi() {
        for seed in 0..5 {
            let p = random_params(seed, 9, 4);
            let mut sv = jacobi_singular_values(9, 4, &p.w);
            sv.sort_by(f64::total_cmp);
            let total: f64 = sv.iter().sum();
            assert!((p.nuclear_norm() - total).abs() < 1e-10 * total);
        }
    }

    #[test]
    fn test_loss_cases() {
        let ds = toy();
        assert!(test_loss(&rank1(&ds), ds.teacher(), 64, 3).unwrap() < 1e-30);
        let zero = NetworkParams::zeros(2, 2);
        let (_, ys) = test_set(ds.teacher(), 64, 3);
        let expected = ys.iter().map(|y| y * y).sum::<f64>() / 128.0;
        assert_eq!(test_loss(&zero, ds.teacher(), 64, 3).unwrap(), expected);
        let p = random_params(2, 3, 2);
        assert_eq!(
            test_loss(&p, ds.teacher(), 64, 9).unwrap().to_bits(),
            test_loss(&p, ds.teacher(), 64, 9).unwrap().to_bits()
        );
        assert!(test_loss(&p, ds.teacher(), 0, 9).is_err());
    }

    #[test]
    fn params_text_round_trip() {
        let p = random_params(6, 4, 3);
        let back = NetworkParams::from_text(&p.to_text(), "mem").unwrap();
        assert_eq!(back.a, p.a);
        assert_eq!(back.w, p.w);
    }

    #[test]
    fn log_csv_round_trip() {
        let ds = generate_uncentred(3, 3, 2).unwrap();
        let init = InitConfig::gaussian(3, 6, 0.1, 0.25, 2).unwrap();
        let opts = TrainOptions {
            max_iters: 200,
            track_eigen: true,
            test: Some((16, 1)),
            ..TrainOptions::default()
        };
        let log = train(&init_balanced(&init), &ds, &opts).unwrap();
        let recs = records_from_csv(&log.to_csv(), "mem").unwrap();
        assert_eq!(recs.len(), log.records.len());
        for (a, b) in recs.iter().zip(&log.records) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.nu, b.nu);
            assert_eq!(a.test_loss, b.test_loss);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gradient_fd_random(seed in 0u64..1_000_000) {
            finite_difference_check(seed);
        }

        #[test]
        fn sign_and_balance_along_short_runs(seed in 0u64..1000) {
            let ds = generate_uncentred(3, 4, seed).unwrap();
            let init = InitConfig::gaussian(3, 6, 0.05, 0.25, seed).unwrap();
            let opts = TrainOptions {
                lr: 1e-3,
                max_iters: 2000,
                cadence: Cadence::Every(100),
                ..TrainOptions::default()
            };
            let log = train(&init_balanced(&init), &ds, &opts).unwrap();
            let max_g = log.records.iter().map(|r| r.grad_sq).fold(0.0, f64::max);
            let budget = 10.0 * opts.lr * log.iterations as f64 * max_g;
            for r in &log.records {
                prop_assert!(r.max_balance() <= budget + 1e-15);
            }
            let fin = &log.final_params;
            for j in 0..fin.width() {
                prop_assert_eq!(fin.a[j] > 0.0, init.signs[j] > 0);
            }
            prop_assert!(log.records.iter().all(|r| r.loss >= 0.0 && r.nuclear_norm >= 0.0));
            prop_assert!(log
                .records
                .iter()
                .all(|r| (0.0..=180.0).contains(&r.max_angle_deg)));
        }

        #[test]
        fn forward_is_deterministic(seed in 0u64..1000) {
            let p = random_params(seed, 5, 3);
            let x = [0.3, -0.2, 1.1];
            prop_assert_eq!(forward(&p, &x).to_bits(), forward(&p, &x).to_bits());
        }
    }
}
