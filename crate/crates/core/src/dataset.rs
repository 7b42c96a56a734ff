//! Teacher-labelled training sets: generation, text I/O, index sets,
//! label-weighted sums and the eigen-structure of the second-moment matrix.
//!
//! Points are stored row-major (`n` rows of length `d`); the column
//! convention `X = [x_1 ... x_n]` only shows up in formulas such as
//! `(1/n) X Xᵀ = (1/n) Σ_i x_i x_iᵀ`.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine, dot, norm, normalized};
use crate::rng::{seeded, standard_normal_vec, Rng};
use crate::textio::{self, fmt_f64, fmt_row};

/// Relative zero band used to classify a point as lying on a ReLU boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Maximum number of redraws for a single generated point.
pub const MAX_RESAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Centred,
    Uncentred,
    /// Hand-built family with negative dual-cone quantity.
    MNeg,
    /// Hand-built family with positive dual-cone quantity.
    MPos,
    Custom,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Centred => "centred",
            Scheme::Uncentred => "uncentred",
            Scheme::MNeg => "mneg",
            Scheme::MPos => "mpos",
            Scheme::Custom => "custom",
        }
    }

    /// Spread parameter ρ of the Gaussian generators.
    pub fn rho(self) -> Option<f64> {
        match self {
            Scheme::Centred => Some(1.0),
            Scheme::Uncentred => Some(std::f64::consts::SQRT_2 - 1.0),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centred" | "centered" => Ok(Scheme::Centred),
            "uncentred" | "uncentered" => Ok(Scheme::Uncentred),
            "mneg" => Ok(Scheme::MNeg),
            "mpos" => Ok(Scheme::MPos),
            "custom" => Ok(Scheme::Custom),
            other => Err(Error::parse("scheme", format!("unknown scheme {other:?}"))),
        }
    }
}

/// How strongly the points must correlate with the teacher.
///
/// `Strict` requires every angle below π/4; `Relaxed` only below π/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMode {
    Strict,
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub scheme: Scheme,
    pub seed: u64,
    /// Redraws per point during generation (empty for non-generated sets).
    pub resamples: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DatasetMeta {
    pub fn new(scheme: Scheme, seed: u64) -> Self {
        Self {
            scheme,
            seed,
            resamples: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Training points, their labels `y_i = max(v*ᵀx_i, 0)` and the unit teacher `v*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    n: usize,
    points: Vec<f64>,
    labels: Vec<f64>,
    teacher: Vec<f64>,
    mode: CorrelationMode,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Build a dataset in strict correlation mode.
    pub fn from_points(points: Vec<Vec<f64>>, teacher: Vec<f64>) -> Result<Self> {
        Self::new(
            points,
            teacher,
            DatasetMeta::new(Scheme::Custom, 0),
            CorrelationMode::Strict,
        )
    }

    /// Validate and label a point set.
    ///
    /// `required` is the weakest correlation mode accepted; the stored mode is
    /// `Strict` whenever all angles are below π/4.
    pub fn new(
        points: Vec<Vec<f64>>,
        teacher: Vec<f64>,
        mut meta: DatasetMeta,
        required: CorrelationMode,
    ) -> Result<Self> {
        let n = points.len();
        let d = teacher.len();
        if d < 2 {
            return Err(Error::Precondition(format!(
                "dimension must exceed 1, got {d}"
            )));
        }
        if n < d {
            return Err(Error::Precondition(format!(
                "need at least d = {d} points, got {n}"
            )));
        }
        if let Some(bad) = points.iter().position(|p| p.len() != d) {
            return Err(Error::Precondition(format!(
                "point {bad} has length {}, expected {d}",
                points[bad].len()
            )));
        }
        if points
            .iter()
            .flatten()
            .chain(&teacher)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Precondition("non-finite coordinate".into()));
        }
        if (norm(&teacher) - 1.0).abs() > 1e-12 {
            return Err(Error::AssumptionViolation(format!(
                "teacher must have unit norm, got {}",
                norm(&teacher)
            )));
        }
        if let Some(i) = points.iter().position(|p| norm(p) == 0.0) {
            return Err(Error::Precondition(format!("point {i} is zero")));
        }

        let labels: Vec<f64> = points.iter().map(|x| dot(&teacher, x).max(0.0)).collect();
        let cosines: Vec<f64> = points.iter().map(|x| cosine(&teacher, x)).collect();
        if let Some(i) = labels.iter().position(|&y| y <= 0.0) {
            return Err(Error::AssumptionViolation(format!(
                "point {i} is not positively correlated with the teacher (cos = {})",
                cosines[i]
            )));
        }
        let wide = cosines.iter().filter(|&&c| c <= FRAC_PI_4.cos()).count();
        let mode = if wide == 0 {
            CorrelationMode::Strict
        } else {
            if required == CorrelationMode::Strict {
                return Err(Error::AssumptionViolation(format!(
                    "{wide} point(s) at angle >= pi/4 from the teacher in strict mode"
                )));
            }
            meta.warnings.push(format!(
                "relaxed correlation: {wide} point(s) at angle >= pi/4 from the teacher"
            ));
            CorrelationMode::Relaxed
        };

        let flat: Vec<f64> = points.into_iter().flatten().collect();
        let ds = Self {
            d,
            n,
            points: flat,
            labels,
            teacher,
            mode,
            meta,
        };
        let rank = ds.numerical_rank();
        if rank < d {
            return Err(Error::AssumptionViolation(format!(
                "points span a subspace of dimension {rank} < {d}"
            )));
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    /// Row-major `n × d` storage.
    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn teacher(&self) -> &[f64] {
        &self.teacher
    }

    pub fn mode(&self) -> CorrelationMode {
        self.mode
    }

    /// Angle between the teacher and each point.
    pub fn angles(&self) -> Vec<f64> {
        self.points()
            .map(|x| cosine(&self.teacher, x).acos())
            .collect()
    }

    fn point_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.points)
    }

    /// Rank of the point matrix with threshold `1e-10 · ‖X‖`.
    pub fn numerical_rank(&self) -> usize {
        let sv = self.point_matrix().singular_values();
        let top = sv.iter().cloned().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > 1e-10 * top).count()
    }

    /// Partition `[n]` by the sign of `vᵀx_i`.
    pub fn index_sets(&self, v: &[f64]) -> IndexSets {
        let vn = norm(v);
        let mut sets = IndexSets::default();
        for (i, x) in self.points().enumerate() {
            let p = dot(v, x);
            let band = BOUNDARY_TOL * vn * norm(x);
            if p > band {
                sets.plus.push(i);
            } else if p < -band {
                sets.minus.push(i);
            } else {
                sets.zero.push(i);
            }
        }
        sets
    }

    /// `γ_I = (1/n) Σ_{i∈I} y_i x_i`; zero for the empty set.
    pub fn gamma(&self, indices: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        let inv_n = 1.0 / self.n as f64;
        for &i in indices {
            axpy(inv_n * self.labels[i], self.point(i), &mut g);
        }
        g
    }

    pub fn gamma_all(&self) -> Vec<f64> {
        let all: Vec<usize> = (0..self.n).collect();
        self.gamma(&all)
    }

    /// `(1/n) X Xᵀ` as a `d × d` matrix.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let x = self.point_matrix();
        (x.transpose() * x) / self.n as f64
    }

    /// `X Xᵀ v = Σ_i x_i (x_iᵀ v)`, computed from the points directly.
    pub fn apply_xxt(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for x in self.points() {
            axpy(dot(x, v), x, &mut out);
        }
        out
    }

    pub fn eigen_analysis(&self) -> Result<EigenAnalysis> {
        EigenAnalysis::new(self)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.d,
            self.n,
            self.meta.scheme.as_str(),
            self.meta.seed
        );
        s.push_str(&fmt_row(&self.teacher));
        s.push('\n');
        for (x, y) in self.points().zip(&self.labels) {
            s.push_str(&fmt_row(x));
            s.push(' ');
            s.push_str(&fmt_f64(*y));
            s.push('\n');
        }
        s
    }

    /// Parse the text format; labels must agree with `max(v*ᵀx_i, 0)`.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let lines = textio::token_lines(text);
        let header = lines
            .first()
            .ok_or_else(|| Error::parse(origin, "empty dataset file"))?;
        if header.len() != 4 {
            return Err(Error::parse(origin, "header must be `d n scheme seed`"));
        }
        let d = textio::parse_usize(header[0], origin)?;
        let n = textio::parse_usize(header[1], origin)?;
        let scheme: Scheme = header[2].parse()?;
        let seed: u64 = header[3]
            .parse()
            .map_err(|_| Error::parse(origin, "bad seed"))?;
        if lines.len() != n + 2 {
            return Err(Error::parse(
                origin,
                format!("expected {} data lines, found {}", n + 1, lines.len() - 1),
            ));
        }
        let teacher = textio::parse_f64s(&lines[1], origin)?;
        if teacher.len() != d {
            return Err(Error::parse(origin, "teacher length differs from d"));
        }
        let mut points = Vec::with_capacity(n);
        let mut stored = Vec::with_capacity(n);
        for (k, line) in lines[2..].iter().enumerate() {
            let vals = textio::parse_f64s(line, origin)?;
            if vals.len() != d + 1 {
                return Err(Error::parse(
                    origin,
                    format!(
                        "point line {k} has {} fields, expected {}",
                        vals.len(),
                        d + 1
                    ),
                ));
            }
            stored.push(vals[d]);
            points.push(vals[..d].to_vec());
        }
        let ds = Self::new(
            points,
            teacher,
            DatasetMeta::new(scheme, seed),
            CorrelationMode::Relaxed,
        )?;
        for (i, (&y, &yr)) in stored.iter().zip(&ds.labels).enumerate() {
            if (y - yr).abs() > 1e-12 * yr.abs().max(1.0) {
                return Err(Error::parse(
                    origin,
                    format!("label {i} is {y} but the teacher gives {yr}"),
                ));
            }
        }
        Ok(ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        textio::write_file(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&textio::read_file(path)?, &path.display().to_string())
    }
}

/// Indices of points strictly inside, on, and strictly outside a half-space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexSets {
    pub plus: Vec<usize>,
    pub zero: Vec<usize>,
    pub minus: Vec<usize>,
}

impl IndexSets {
    /// `I_{+1}` or `I_{-1}` by sign.
    pub fn by_sign(&self, sign: i8) -> &[usize] {
        if sign > 0 {
            &self.plus
        } else {
            &self.minus
        }
    }
}

fn check_gen_args(d: usize, n: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Precondition(format!("d must exceed 1, got {d}")));
    }
    if n < d {
        return Err(Error::Precondition(format!(
            "need n >= d, got n = {n}, d = {d}"
        )));
    }
    Ok(())
}

fn unit_sphere(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        if let Some(u) = normalized(&standard_normal_vec(rng, d)) {
            return u;
        }
    }
}

fn gaussian_around(rng: &mut Rng, mu: &[f64], sd: f64) -> Vec<f64> {
    standard_normal_vec(rng, mu.len())
        .into_iter()
        .zip(mu)
        .map(|(g, m)| m + sd * g)
        .collect()
}

fn draw_points(
    rng: &mut Rng,
    mu: &[f64],
    teacher: &[f64],
    sd: f64,
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut points = Vec::with_capacity(n);
    let mut resamples = Vec::with_capacity(n);
    for i in 0..n {
        let mut tries = 0;
        let x = loop {
            let x = gaussian_around(rng, mu, sd);
            if dot(teacher, &x) > 0.0 {
                break x;
            }
            tries += 1;
            if tries >= MAX_RESAMPLE {
                return Err(Error::Generation(format!(
                    "point {i} exceeded {MAX_RESAMPLE} redraws"
                )));
            }
        };
        points.push(x);
        resamples.push(tries);
    }
    Ok((points, resamples))
}

fn finish_generated(
    scheme: Scheme,
    seed: u64,
    points: Vec<Vec<f64>>,
    teacher: Vec<f64>,
    resamples: Vec<usize>,
) -> Result<Dataset> {
    let mut meta = DatasetMeta::new(scheme, seed);
    meta.resamples = resamples;
    Dataset::new(points, teacher, meta, CorrelationMode::Relaxed)
}

/// Points drawn around a uniform unit mean `μ` with `v* = μ` and `ρ = 1`.
///
/// Points at angle `>= π/2` from the teacher are redrawn.
pub fn generate_centred(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    check_gen_args(d, n)?;
    let mut rng = seeded(seed);
    let mu = unit_sphere(&mut rng, d);
    let sd = (Scheme::Centred.rho().unwrap() / d as f64).sqrt();
    let (points, resamples) = draw_points(&mut rng, &mu, &mu, sd, n)?;
    finish_generated(Scheme::Centred, seed, points, mu, resamples)
}

/// As [`generate_centred`] with `ρ = √2 − 1` and the teacher set to the
/// direction of one extra draw `x_0`.
pub fn generate_uncentred(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    check_gen_args(d, n)?;
    let mut rng = seeded(seed);
    let mu = unit_sphere(&mut rng, d);
    let sd = (Scheme::Uncentred.rho().unwrap() / d as f64).sqrt();
    let teacher = loop {
        if let Some(t) = normalized(&gaussian_around(&mut rng, &mu, sd)) {
            break t;
        }
    };
    let (points, resamples) = draw_points(&mut rng, &mu, &teacher, sd, n)?;
    finish_generated(Scheme::Uncentred, seed, points, teacher, resamples)
}

pub fn generate(scheme: Scheme, d: usize, n: usize, seed: u64) -> Result<Dataset> {
    match scheme {
        Scheme::Centred => generate_centred(d, n, seed),
        Scheme::Uncentred => generate_uncentred(d, n, seed),
        other => Err(Error::Unsupported(format!(
            "scheme {other} has no random generator"
        ))),
    }
}

/// Eigen-structure of `(1/n) X Xᵀ` with eigenvectors oriented so that every
/// teacher coordinate `ν*_k = u_kᵀ v*` is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenAnalysis {
    /// Strictly decreasing eigenvalues `α_1 > ... > α_d > 0`.
    pub alphas: Vec<f64>,
    /// Unit eigenvectors `u_k`, aligned with `alphas`.
    pub vectors: Vec<Vec<f64>>,
    pub nu_star: Vec<f64>,
}

impl EigenAnalysis {
    pub const GAP_TOL: f64 = 1e-10;
    pub const NU_TOL: f64 = 1e-10;

    fn new(ds: &Dataset) -> Result<Self> {
        let d = ds.dim();
        let eig = SymmetricEigen::new(ds.second_moment());
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut alphas = Vec::with_capacity(d);
        let mut vectors = Vec::with_capacity(d);
        let mut nu_star = Vec::with_capacity(d);
        for &k in &order {
            let mut u: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
            let mut nu = dot(&u, ds.teacher());
            if nu < 0.0 {
                u.iter_mut().for_each(|c| *c = -*c);
                nu = -nu;
            }
            alphas.push(eig.eigenvalues[k]);
            vectors.push(u);
            nu_star.push(nu);
        }

        if alphas[d - 1] <= 0.0 {
            return Err(Error::AssumptionViolation(format!(
                "second-moment matrix is not positive definite (alpha_d = {})",
                alphas[d - 1]
            )));
        }
        for k in 0..d - 1 {
            if alphas[k] - alphas[k + 1] <= Self::GAP_TOL * alphas[0].max(1.0) {
                return Err(Error::AssumptionViolation(format!(
                    "eigenvalues {} and {} coincide ({} vs {})",
                    k + 1,
                    k + 2,
                    alphas[k],
                    alphas[k + 1]
                )));
            }
        }
        if let Some(k) = nu_star.iter().position(|&v| v <= Self::NU_TOL) {
            return Err(Error::AssumptionViolation(format!(
                "teacher is (numerically) orthogonal to eigenvector {} (nu* = {})",
                k + 1,
                nu_star[k]
            )));
        }

        let ea = Self {
            alphas,
            vectors,
            nu_star,
        };
        // γ_[n] = (1/n) X Xᵀ v* = Σ α_k ν*_k u_k
        let gamma = ds.gamma_all();
        let mut recon = vec![0.0; d];
        for k in 0..d {
            axpy(ea.alphas[k] * ea.nu_star[k], &ea.vectors[k], &mut recon);
        }
        let err = norm(&crate::linalg::sub(&gamma, &recon));
        if err > 1e-9 * norm(&gamma).max(1.0) {
            return Err(Error::NumericalFailure(format!(
                "eigen reconstruction of gamma_[n] off by {err}"
            )));
        }
        Ok(ea)
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    /// Coordinates `ν_k = u_kᵀ v`.
    pub fn coords(&self, v: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|u| dot(u, v)).collect()
    }

    pub fn from_coords(&self, nu: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for (u, &c) in self.vectors.iter().zip(nu) {
            axpy(c, u, &mut v);
        }
        v
    }

    pub fn alpha_max(&self) -> f64 {
        self.alphas[0]
    }

    pub fn alpha_min(&self) -> f64 {
        self.alphas[self.dim() - 1]
    }
}

/// Unscaled balanced initialisation `(z_j, s_j)` with scale `λ` and the
/// analysis parameter `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub z: Vec<Vec<f64>>,
    pub signs: Vec<i8>,
    pub lambda: f64,
    pub eps: f64,
}

impl InitConfig {
    pub fn new(z: Vec<Vec<f64>>, signs: Vec<i8>, lambda: f64, eps: f64) -> Result<Self> {
        if z.len() != signs.len() || z.is_empty() {
            return Err(Error::InvalidInit(format!(
                "{} directions but {} signs",
                z.len(),
                signs.len()
            )));
        }
        if let Some(j) = z
            .iter()
            .position(|v| norm(v) == 0.0 || !norm(v).is_finite())
        {
            return Err(Error::InvalidInit(format!(
                "direction {j} is zero or non-finite"
            )));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidInit("signs must be +1 or -1".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInit(format!(
                "scale must be positive, got {lambda}"
            )));
        }
        if !(eps > 0.0 && eps <= 0.25) {
            return Err(Error::InvalidInit(format!(
                "eps must lie in (0, 1/4], got {eps}"
            )));
        }
        Ok(Self {
            z,
            signs,
            lambda,
            eps,
        })
    }

    /// `z_j ~ N(0, I/(d m))`, `s_j` uniform on `{±1}`.
    pub fn gaussian(d: usize, m: usize, lambda: f64, eps: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let sd = 1.0 / ((d * m) as f64).sqrt();
        let z: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                standard_normal_vec(&mut rng, d)
                    .into_iter()
                    .map(|g| sd * g)
                    .collect()
            })
            .collect();
        let signs = (0..m)
            .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
            .collect();
        Self::new(z, signs, lambda, eps)
    }

    pub fn width(&self) -> usize {
        self.z.len()
    }

    pub fn dim(&self) -> usize {
        self.z[0].len()
    }

    /// Neurons initially active on some point with sign `sign`.
    pub fn active_with_sign(&self, ds: &Dataset, sign: i8) -> Vec<usize> {
        (0..self.width())
            .filter(|&j| self.signs[j] == sign && !ds.index_sets(&self.z[j]).plus.is_empty())
            .collect()
    }

    pub fn j_plus(&self, ds: &Dataset) -> Vec<usize> {
        self.active_with_sign(ds, 1)
    }

    pub fn j_minus(&self, ds: &Dataset) -> Vec<usize> {
        self.active_with_sign(ds, -1)
    }

    /// Text form: header `m d`, then one line `s_j z_j...` per neuron.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.width(), self.dim());
        for (z, sign) in self.z.iter().zip(&self.signs) {
            s.push_str(&format!("{} {}\n", sign, fmt_row(z)));
        }
        s
    }

    /// Parse the text form, attaching `lambda` and `eps`.
    pub fn from_text(text: &str, origin: &str, lambda: f64, eps: f64) -> Result<Self> {
        let lines = textio::token_lines(text);
        let header = lines
            .first()
            .ok_or_else(|| Error::parse(origin, "empty init file"))?;
        if header.len() != 2 {
            return Err(Error::parse(origin, "header must be `m d`"));
        }
        let m = textio::parse_usize(header[0], origin)?;
        let d = textio::parse_usize(header[1], origin)?;
        if lines.len() != m + 1 {
            return Err(Error::parse(origin, format!("expected {m} neuron lines")));
        }
        let mut z = Vec::with_capacity(m);
        let mut signs = Vec::with_capacity(m);
        for line in &lines[1..] {
            let vals = textio::parse_f64s(line, origin)?;
            if vals.len() != d + 1 {
                return Err(Error::parse(origin, "neuron line has wrong length"));
            }
            signs.push(if vals[0] > 0.0 { 1 } else { -1 });
            z.push(vals[1..].to_vec());
        }
        Self::new(z, signs, lambda, eps)
    }

    pub fn read(path: &Path, lambda: f64, eps: f64) -> Result<Self> {
        Self::from_text(
            &textio::read_file(path)?,
            &path.display().to_string(),
            lambda,
            eps,
        )
    }
}

/// Outcome of the static assumption checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    /// `(check name, passed)` in evaluation order.
    pub checks: Vec<(String, bool)>,
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    fn record(&mut self, name: &str, ok: bool, detail: impl FnOnce() -> String) {
        self.checks.push((name.to_string(), ok));
        if !ok {
            self.violations.push(format!("{name}: {}", detail()));
        }
    }

    pub fn all_passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn passed(&self, name: &str) -> Option<bool> {
        self.checks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, ok)| *ok)
    }
}

/// Static parts of the standing assumptions on data and initialisation.
///
/// Conditions on whole trajectories (no simultaneous yardstick crossings,
/// permanent deactivation) can only be observed along simulations and are
/// listed as notes.
pub fn validate_assumptions(ds: &Dataset, init: &InitConfig) -> AssumptionReport {
    let mut r = AssumptionReport::default();
    let d = ds.dim();

    r.record("dimension", d > 1, || format!("d = {d}"));
    let rank = ds.numerical_rank();
    r.record("span", rank == d, || format!("rank {rank} < {d}"));
    let tn = norm(ds.teacher());
    r.record("unit_teacher", (tn - 1.0).abs() <= 1e-12, || {
        format!("|v*| = {tn}")
    });
    r.record("init_dimension", init.dim() == d, || {
        format!("init has dimension {}, data {d}", init.dim())
    });
    if init.dim() != d {
        return r;
    }

    let j_plus = init.j_plus(ds);
    r.record("j_plus_nonempty", !j_plus.is_empty(), || {
        "no positive-sign neuron sees a training point".into()
    });

    let on_boundary: Vec<usize> = (0..init.width())
        .filter(|&j| !ds.index_sets(&init.z[j]).zero.is_empty())
        .collect();
    r.record("no_boundary_points", on_boundary.is_empty(), || {
        format!("neurons {on_boundary:?} have a training point on their boundary")
    });

    let g = ds.gamma_all();
    let aligned: Vec<usize> = init
        .j_minus(ds)
        .into_iter()
        .filter(|&j| cosine(&init.z[j], &g) >= 1.0 - 1e-15)
        .collect();
    r.record("j_minus_not_aligned", aligned.is_empty(), || {
        format!("negative neurons {aligned:?} are aligned with gamma_[n]")
    });

    let units: Vec<Vec<f64>> = ds.points().map(|x| normalized(x).unwrap()).collect();
    let mut dup = None;
    'outer: for a in 0..units.len() {
        for b in a + 1..units.len() {
            if norm(&crate::linalg::sub(&units[a], &units[b])) <= 1e-12 {
                dup = Some((a, b));
                break 'outer;
            }
        }
    }
    r.record("distinct_normalized_points", dup.is_none(), || {
        let (a, b) = dup.unwrap();
        format!("points {a} and {b} have the same direction")
    });

    let eig = ds.eigen_analysis();
    r.record("distinct_eigenvalues", eig.is_ok(), || match &eig {
        Err(e) => e.to_string(),
        Ok(_) => String::new(),
    });

    if ds.mode() == CorrelationMode::Relaxed {
        r.notes
            .push("dataset is in relaxed correlation mode (some angle >= pi/4)".into());
    }
    r.notes.push(
        "no simultaneous yardstick crossings: verified along simulated trajectories only".into(),
    );
    r.notes
        .push("permanent deactivation: verified along simulated trajectories only".into());
    r
}

/// Natural log of the admissible initialisation-scale bound
/// `exp[-(6/ε)(ln m + n² (Δ/δ)² ln(6/δ))]`.
pub fn ln_lambda_bound(m: usize, n: usize, delta: f64, big_delta: f64, eps: f64) -> Result<f64> {
    if !(delta > 0.0 && big_delta > 0.0) {
        return Err(Error::Precondition(
            "delta and Delta must be positive".into(),
        ));
    }
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::Precondition(format!(
            "eps must lie in (0, 1/4], got {eps}"
        )));
    }
    let n2 = (n * n) as f64;
    let ratio = big_delta / delta;
    Ok(-(6.0 / eps) * ((m as f64).ln() + n2 * ratio * ratio * (6.0 / delta).ln()))
}

/// The bound itself; underflows to zero for realistic inputs, so prefer
/// [`ln_lambda_bound`] for comparisons.
pub fn lambda_bound(m: usize, n: usize, delta: f64, big_delta: f64, eps: f64) -> Result<f64> {
    ln_lambda_bound(m, n, delta, big_delta, eps).map(f64::exp)
}
