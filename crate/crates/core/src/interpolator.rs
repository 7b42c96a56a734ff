//! The dual-cone quantity `M`, rank-1 interpolators `Θ_{v*}` and the
//! smaller-norm counterexample networks built from a positive witness.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::dataset::{Dataset, DatasetMeta, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, norm, normalized, scale};
use crate::rng::{derive_seed, seeded};
use crate::textio::KeyValueReport;
use crate::trainer::{loss, NetworkParams};

/// Largest accepted condition number of the point matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Biorthogonality tolerance of the dual basis.
pub const BIORTH_TOL: f64 = 1e-9;
/// Default upper bound on `d` for the subset enumeration.
pub const MAX_SUBSET_DIM: usize = 12;
/// `|M|` at or below this is reported as indeterminate.
pub const VERDICT_TOL: f64 = 1e-6;
/// Grid step of the exhaustive oracle.
pub const GRID_STEP: f64 = 1e-3;
/// Loss certificate for the rank-1 construction.
pub const RANK1_LOSS_TOL: f64 = 1e-12;
/// ‖θ‖² certificate for the rank-1 construction.
pub const RANK1_NORM_TOL: f64 = 1e-10;
/// Loss certificate for the counterexample.
pub const COUNTER_LOSS_TOL: f64 = 1e-10;
/// Slack on ‖θ‖² ≤ 2 − ξ² for the counterexample.
pub const COUNTER_NORM_TOL: f64 = 1e-9;

/// Rows of `X⁻¹` where `X = [x_1, …, x_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBasis {
    pub chi: Vec<Vec<f64>>,
}

impl DualBasis {
    pub fn dim(&self) -> usize {
        self.chi.len()
    }

    /// `Σ_k coeffs_k χ_{idx_k}`.
    pub fn combine(&self, idx: &[usize], coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (&k, &c) in idx.iter().zip(coeffs) {
            crate::linalg::axpy(c, &self.chi[k], &mut out);
        }
        out
    }
}

pub fn dual_basis(ds: &Dataset) -> Result<DualBasis> {
    let d = ds.dim();
    if ds.len() != d {
        return Err(Error::Unsupported(format!(
            "dual basis needs n = d, got n = {} and d = {d}",
            ds.len()
        )));
    }
    let x = DMatrix::from_fn(d, d, |r, c| ds.point(c)[r]);
    let sv = x.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin >= MAX_CONDITION {
        return Err(Error::NumericalFailure(format!(
            "point matrix is near-singular (condition {:.3e})",
            smax / smin
        )));
    }
    let inv = x
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("point matrix is not invertible".into()))?;
    let chi: Vec<Vec<f64>> = (0..d)
        .map(|k| inv.row(k).iter().cloned().collect())
        .collect();
    for (k, c) in chi.iter().enumerate() {
        for i in 0..d {
            let target = if i == k { 1.0 } else { 0.0 };
            let err = (dot(c, ds.point(i)) - target).abs();
            if err > BIORTH_TOL {
                return Err(Error::NumericalFailure(format!(
                    "dual basis biorthogonality off by {err:.3e} at ({k}, {i})"
                )));
            }
        }
    }
    Ok(DualBasis { chi })
}

/// Maximiser of `cos∠(p,q) − sin∠(p,v*)` found by the search.
#[derive(Debug, Clone, PartialEq)]
pub struct MWitness {
    pub value: f64,
    /// 0-based indices of `K`.
    pub k_set: Vec<usize>,
    /// Simplex coefficients of `p` over `K`.
    pub b: Vec<f64>,
    /// 0-based indices of the complement.
    pub k_comp: Vec<usize>,
    /// Simplex coefficients of `q` over the complement.
    pub c: Vec<f64>,
    /// True when an exhaustive grid backs the value (d ≤ 3).
    pub grid_checked: bool,
    /// Best grid objective when available.
    pub grid_value: Option<f64>,
}

impl MWitness {
    pub fn p(&self, basis: &DualBasis) -> Vec<f64> {
        basis.combine(&self.k_set, &self.b)
    }

    pub fn q(&self, basis: &DualBasis) -> Vec<f64> {
        basis.combine(&self.k_comp, &self.c)
    }

    /// Objective recomputed from the stored coefficients.
    pub fn recompute(&self, basis: &DualBasis, teacher: &[f64]) -> f64 {
        objective(&self.p(basis), &self.q(basis), teacher)
    }
}

/// `cos∠(p,q) − sin∠(p,v*)`.
pub fn objective(p: &[f64], q: &[f64], teacher: &[f64]) -> f64 {
    let cpv = cosine(p, teacher);
    cosine(p, q) - (1.0 - cpv * cpv).max(0.0).sqrt()
}

/// Gradient of the objective with respect to `p` and `q`.
fn objective_grad(p: &[f64], q: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (np, nq) = (norm(p), norm(q));
    let cpq = dot(p, q) / (np * nq);
    let cpv = dot(p, v) / (np * norm(v));
    let sin = (1.0 - cpv * cpv).max(0.0).sqrt().max(1e-12);
    let d = p.len();
    let mut gp = vec![0.0; d];
    let mut gq = vec![0.0; d];
    for i in 0..d {
        let dcpq_p = q[i] / (np * nq) - cpq * p[i] / (np * np);
        let dcpv_p = v[i] / (np * norm(v)) - cpv * p[i] / (np * np);
        gp[i] = dcpq_p + cpv / sin * dcpv_p;
        gq[i] = p[i] / (np * nq) - cpq * q[i] / (nq * nq);
    }
    (gp, gq)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

struct SubsetProblem<'a> {
    basis: &'a DualBasis,
    teacher: &'a [f64],
    k_set: Vec<usize>,
    k_comp: Vec<usize>,
}

impl SubsetProblem<'_> {
    fn eval(&self, b: &[f64], c: &[f64]) -> f64 {
        objective(
            &self.basis.combine(&self.k_set, b),
            &self.basis.combine(&self.k_comp, c),
            self.teacher,
        )
    }

    fn grad(&self, b: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.basis.combine(&self.k_set, b);
        let q = self.basis.combine(&self.k_comp, c);
        let (gp, gq) = objective_grad(&p, &q, self.teacher);
        let gb = self
            .k_set
            .iter()
            .map(|&k| dot(&self.basis.chi[k], &gp))
            .collect();
        let gc = self
            .k_comp
            .iter()
            .map(|&k| dot(&self.basis.chi[k], &gq))
            .collect();
        (gb, gc)
    }

    /// Projected-gradient ascent with Armijo backtracking.
    fn ascend(&self, mut b: Vec<f64>, mut c: Vec<f64>) -> (f64, Vec<f64>, Vec<f64>) {
        let mut f = self.eval(&b, &c);
        let mut step = 1.0;
        for _ in 0..2000 {
            let (gb, gc) = self.grad(&b, &c);
            let mut improved = false;
            let mut t = step * 4.0;
            while t > 1e-14 {
                let nb = project_simplex(
                    &b.iter()
                        .zip(&gb)
                        .map(|(x, g)| x + t * g)
                        .collect::<Vec<_>>(),
                );
                let nc = project_simplex(
                    &c.iter()
                        .zip(&gc)
                        .map(|(x, g)| x + t * g)
                        .collect::<Vec<_>>(),
                );
                let lin: f64 = nb
                    .iter()
                    .zip(&b)
                    .zip(&gb)
                    .map(|((n, o), g)| g * (n - o))
                    .sum::<f64>()
                    + nc.iter()
                        .zip(&c)
                        .zip(&gc)
                        .map(|((n, o), g)| g * (n - o))
                        .sum::<f64>();
                let nf = self.eval(&nb, &nc);
                if nf.is_finite() && nf >= f + 1e-4 * lin && lin > 0.0 {
                    let gain = nf - f;
                    b = nb;
                    c = nc;
                    f = nf;
                    step = t;
                    improved = gain > 1e-15;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (f, b, c)
    }
}

fn random_simplex(rng: &mut crate::rng::Rng, len: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn unit(len: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[k] = 1.0;
    v
}

/// All points of the simplex of the given length on a grid of the given step.
fn simplex_grid(len: usize, step: f64) -> Vec<Vec<f64>> {
    let steps = (1.0 / step).round() as usize;
    fn rec(len: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if len == 1 {
            cur.push(left as f64 / steps as f64);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k as f64 / steps as f64);
            rec(len - 1, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(len, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive grid maximum over all `K` (only for `d ≤ 3`).
pub fn grid_oracle(ds: &Dataset, basis: &DualBasis, step: f64) -> Result<f64> {
    let d = basis.dim();
    if d > 3 {
        return Err(Error::Unsupported("grid oracle is limited to d ≤ 3".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 1..(1u32 << d) - 1 {
        let (k_set, k_comp) = split_mask(mask, d);
        let prob = SubsetProblem {
            basis,
            teacher: ds.teacher(),
            k_set,
            k_comp,
        };
        let gb = simplex_grid(prob.k_set.len(), step);
        let gc = simplex_grid(prob.k_comp.len(), step);
        for b in &gb {
            for c in &gc {
                best = best.max(prob.eval(b, c));
            }
        }
    }
    Ok(best)
}

fn split_mask(mask: u32, d: usize) -> (Vec<usize>, Vec<usize>) {
    (0..d).partition(|&k| mask & (1 << k) != 0)
}

/// Lower bound on `M` by multistart projected-gradient ascent over every
/// nonempty proper subset `K`; `budget` random starts per subset on top of
/// all single-generator pairs.
pub fn compute_m(ds: &Dataset, basis: &DualBasis, budget: usize, seed: u64) -> Result<MWitness> {
    let d = basis.dim();
    if d < 2 {
        return Err(Error::Precondition("M needs d ≥ 2".into()));
    }
    if d > MAX_SUBSET_DIM {
        return Err(Error::Unsupported(format!(
            "subset enumeration limited to d ≤ {MAX_SUBSET_DIM}, got {d}"
        )));
    }
    let results: Vec<(f64, u32, Vec<f64>, Vec<f64>)> = (1..(1u32 << d) - 1)
        .into_par_iter()
        .map(|mask| {
            let (k_set, k_comp) = split_mask(mask, d);
            let prob = SubsetProblem {
                basis,
                teacher: ds.teacher(),
                k_set,
                k_comp,
            };
            let (nk, nc) = (prob.k_set.len(), prob.k_comp.len());
            let mut starts = Vec::new();
            for i in 0..nk {
                for j in 0..nc {
                    starts.push((unit(nk, i), unit(nc, j)));
                }
            }
            let mut rng = seeded(derive_seed(&[seed, mask as u64]));
            for _ in 0..budget {
                starts.push((random_simplex(&mut rng, nk), random_simplex(&mut rng, nc)));
            }
            let mut best = (f64::NEG_INFINITY, Vec::new(), Vec::new());
            for (b, c) in starts {
                let (f, b, c) = prob.ascend(b, c);
                if f > best.0 {
                    best = (f, b, c);
                }
            }
            (best.0, mask, best.1, best.2)
        })
        .collect();
    let (value, mask, b, c) = results
        .into_iter()
        .reduce(|a, x| if x.0 > a.0 { x } else { a })
        .expect("at least one subset");
    if !value.is_finite() {
        return Err(Error::NumericalFailure(
            "M search produced a non-finite objective".into(),
        ));
    }
    let (k_set, k_comp) = split_mask(mask, d);
    let grid_value = if d <= 3 {
        Some(grid_oracle(ds, basis, GRID_STEP)?)
    } else {
        None
    };
    Ok(MWitness {
        value,
        k_set,
        b,
        k_comp,
        c,
        grid_checked: grid_value.is_some(),
        grid_value,
    })
}

/// `w_j = √split_j · v*`, `a_j = √split_j`.
pub fn build_rank1(ds: &Dataset, split: &[f64]) -> Result<NetworkParams> {
    if split.is_empty() || split.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::Precondition(
            "split weights must be nonnegative and finite".into(),
        ));
    }
    let total: f64 = split.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "split weights sum to {total}, not 1"
        )));
    }
    let a: Vec<f64> = split.iter().map(|s| s.sqrt()).collect();
    let w = a.iter().map(|&r| scale(ds.teacher(), r)).collect();
    NetworkParams::new(a, w)
}

/// A certified counterexample network with `‖θ‖² ≤ 2 − ξ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub params: NetworkParams,
    pub xi: f64,
    pub loss: f64,
    pub sq_norm: f64,
    /// `cos∠(p, v*) ≥ 0`.
    pub acute_case: bool,
}

pub fn build_counterexample(
    ds: &Dataset,
    basis: &DualBasis,
    witness: &MWitness,
    m: usize,
) -> Result<Counterexample> {
    if m < 2 {
        return Err(Error::Precondition("counterexample needs m ≥ 2".into()));
    }
    if !(witness.value > 0.0) {
        return Err(Error::ConstructionUnavailable(format!(
            "witness objective {} does not separate",
            witness.value
        )));
    }
    let v = ds.teacher();
    let p_raw = witness.p(basis);
    let pn = norm(&p_raw);
    let p = scale(&p_raw, 1.0 / pn);
    let q = normalized(&witness.q(basis))
        .ok_or_else(|| Error::ConstructionUnavailable("q vanishes".into()))?;
    let mut r = p.clone();
    crate::linalg::axpy(-dot(&q, &p), &q, &mut r);
    let rn = norm(&r);
    let cpv = dot(&p, v);
    let cpq = dot(&p, &q).clamp(-1.0, 1.0);
    let spq = (1.0 - cpq * cpq).sqrt();
    let acute = cpv >= 0.0;
    let xi = if acute {
        // Coefficients of the unit-norm p̄ in the dual basis.
        let ratio = witness
            .k_set
            .iter()
            .zip(&witness.b)
            .filter(|(_, &b)| b != 0.0)
            .map(|(&k, &b)| ds.labels()[k] / (b / pn))
            .fold(f64::INFINITY, f64::min);
        ratio.min(cpv - spq)
    } else {
        -cpv - spq
    };
    if !(xi > 0.0) || !(rn > 0.0) {
        return Err(Error::ConstructionUnavailable(format!(
            "construction gives ξ = {xi} and ‖r‖ = {rn}"
        )));
    }
    let mut w1 = v.to_vec();
    crate::linalg::axpy(if acute { -xi } else { xi }, &p, &mut w1);
    let a2 = (xi * rn).sqrt() * if acute { 1.0 } else { -1.0 };
    let w2 = scale(&r, (xi / rn).sqrt());
    let d = ds.dim();
    let mut a = vec![1.0, a2];
    let mut w = vec![w1, w2];
    a.resize(m, 0.0);
    w.resize(m, vec![0.0; d]);
    let params = NetworkParams::new(a, w)?;
    let l = loss(&params, ds);
    let sq = params.sq_norm();
    if !(l <= COUNTER_LOSS_TOL) || !(sq <= 2.0 - xi * xi + COUNTER_NORM_TOL) {
        return Err(Error::Internal(format!(
            "counterexample certificate failed: loss {l:.3e}, ‖θ‖² {sq}, ξ {xi}"
        )));
    }
    Ok(Counterexample {
        params,
        xi,
        loss: l,
        sq_norm: sq,
        acute_case: acute,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `M < 0`: the rank-1 set holds every global minimiser.
    RankOneOptimal,
    /// `M > 0`: a smaller-norm interpolator exists.
    SmallerNormExists,
    /// `|M|` within the tolerance of zero.
    Indeterminate,
}

impl Verdict {
    pub fn from_m(m: f64) -> Self {
        if m < -VERDICT_TOL {
            Verdict::RankOneOptimal
        } else if m > VERDICT_TOL {
            Verdict::SmallerNormExists
        } else {
            Verdict::Indeterminate
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::RankOneOptimal => "rank1_optimal",
            Verdict::SmallerNormExists => "smaller_norm_exists",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatorReport {
    pub witness: MWitness,
    pub rank1: NetworkParams,
    pub rank1_loss: f64,
    pub rank1_sq_norm: f64,
    pub counterexample: Option<Counterexample>,
    pub verdict: Verdict,
}

/// Full pipeline: basis, `M`, a two-neuron rank-1 network and, when
/// `M > 0`, the counterexample with `m = 2`.
pub fn analyze(ds: &Dataset, budget: usize, seed: u64) -> Result<InterpolatorReport> {
    let basis = dual_basis(ds)?;
    let witness = compute_m(ds, &basis, budget, seed)?;
    let rank1 = build_rank1(ds, &[0.5, 0.5])?;
    let rank1_loss = loss(&rank1, ds);
    let rank1_sq_norm = rank1.sq_norm();
    if rank1_loss > RANK1_LOSS_TOL || (rank1_sq_norm - 2.0).abs() > RANK1_NORM_TOL {
        return Err(Error::Internal(format!(
            "rank-1 certificate failed: loss {rank1_loss:.3e}, ‖θ‖² {rank1_sq_norm}"
        )));
    }
    let verdict = Verdict::from_m(witness.value);
    let counterexample = if verdict == Verdict::SmallerNormExists {
        Some(build_counterexample(ds, &basis, &witness, 2)?)
    } else {
        None
    };
    Ok(InterpolatorReport {
        witness,
        rank1,
        rank1_loss,
        rank1_sq_norm,
        counterexample,
        verdict,
    })
}

impl InterpolatorReport {
    pub fn to_kv(&self) -> KeyValueReport {
        let w = &self.witness;
        let one_based = |v: &[usize]| {
            v.iter()
                .map(|k| (k + 1).to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut kv = KeyValueReport::default();
        kv.push("m_value", w.value);
        kv.push("k_set", one_based(&w.k_set));
        kv.push("b", join(&w.b));
        kv.push("k_complement", one_based(&w.k_comp));
        kv.push("c", join(&w.c));
        kv.push("global_optimum_guaranteed", w.grid_checked);
        kv.push(
            "grid_value",
            w.grid_value.map_or("none".into(), |g| g.to_string()),
        );
        kv.push("verdict", self.verdict.as_str());
        kv.push("rank1_loss", self.rank1_loss);
        kv.push("rank1_sq_norm", self.rank1_sq_norm);
        match &self.counterexample {
            Some(c) => {
                kv.push("counterexample", "present");
                kv.push("xi", c.xi);
                kv.push("counterexample_loss", c.loss);
                kv.push("counterexample_sq_norm", c.sq_norm);
                kv.push(
                    "counterexample_case",
                    if c.acute_case { "acute" } else { "obtuse" },
                );
            }
            None => kv.push("counterexample", "absent"),
        }
        kv
    }
}

fn family_dataset(points: Vec<Vec<f64>>, teacher: Vec<f64>, scheme: Scheme) -> Result<Dataset> {
    Dataset::new(
        points,
        teacher,
        DatasetMeta::new(scheme, 0),
        crate::dataset::CorrelationMode::Strict,
    )
}

/// `x_i = (1 − (d−1)(1−ξ)/d) e_i + ((1−ξ)/d) Σ_{k≠i} e_k`, `v* ∝ (1,…,1)`.
pub fn example_family_mneg(d: usize, xi: f64) -> Result<Dataset> {
    if d < 2 {
        return Err(Error::Precondition("family needs d ≥ 2".into()));
    }
    let cap = (2.0 * (2f64.sqrt() - 1.0) / (d as f64 - 1.0)).sqrt();
    if !(xi > 0.0 && xi <= cap) {
        return Err(Error::Precondition(format!(
            "ξ must lie in (0, {cap}], got {xi}"
        )));
    }
    let off = (1.0 - xi) / d as f64;
    let diag = 1.0 - (d as f64 - 1.0) * off;
    let points = (0..d)
        .map(|i| (0..d).map(|k| if k == i { diag } else { off }).collect())
        .collect();
    let teacher = vec![1.0 / (d as f64).sqrt(); d];
    family_dataset(points, teacher, Scheme::MNeg)
}

/// `x₁ = b e₁`, `x₂,₃ = b e₁ ∓ √b e₂ + e₃`, `x_i = b e₁ + e_i` for `i ≥ 4`,
/// `v* = (4/5) e₁ + (3/5) e₃`.
pub fn example_family_mpos(d: usize, b: f64) -> Result<Dataset> {
    if d <= 2 || !(b >= 11.0) {
        return Err(Error::Precondition(format!(
            "family needs d > 2 and b ≥ 11, got d = {d}, b = {b}"
        )));
    }
    let sb = b.sqrt();
    let points = (0..d)
        .map(|i| {
            let mut x = vec![0.0; d];
            x[0] = b;
            match i {
                0 => {}
                1 => {
                    x[1] = -sb;
                    x[2] = 1.0;
                }
                2 => {
                    x[1] = sb;
                    x[2] = 1.0;
                }
                _ => x[i] = 1.0,
            }
            x
        })
        .collect();
    let mut teacher = vec![0.0; d];
    teacher[0] = 0.8;
    teacher[2] = 0.6;
    family_dataset(points, teacher, Scheme::MPos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::forward;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn identity_dataset(d: usize) -> Dataset {
        let pts = (0..d).map(|i| unit(d, i)).collect();
        let meta = DatasetMeta::new(Scheme::Custom, 0);
        let teacher = vec![1.0 / (d as f64).sqrt(); d];
        Dataset::new(pts, teacher, meta, crate::dataset::CorrelationMode::Relaxed).unwrap()
    }

    #[test]
    fn identity_basis() {
        let b = dual_basis(&identity_dataset(3)).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                assert_abs_diff_eq!(b.chi[k][i], if k == i { 1.0 } else { 0.0 }, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn mneg_basis_and_points() {
        let ds = example_family_mneg(2, 0.5).unwrap();
        assert_abs_diff_eq!(ds.point(0)[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(ds.point(0)[1], 0.25, epsilon = 1e-15);
        let b = dual_basis(&ds).unwrap();
        assert_abs_diff_eq!(b.chi[0][0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.chi[0][1], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.chi[1][0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.chi[1][1], 1.5, epsilon = 1e-12);
        // Independent evaluation of χ_k = (1/ξ)(e_k − ((1−ξ)/d) 1).
        for d in 2..6 {
            let xi = 0.3;
            let ds = example_family_mneg(d, xi).unwrap();
            let b = dual_basis(&ds).unwrap();
            for k in 0..d {
                for i in 0..d {
                    let e = if i == k { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(
                        b.chi[k][i],
                        (e - (1.0 - xi) / d as f64) / xi,
                        epsilon = 1e-10
                    );
                }
                let sq = dot(ds.point(k), ds.point(k));
                assert_abs_diff_eq!(
                    sq,
                    1.0 / d as f64 + (d as f64 - 1.0) / d as f64 * xi * xi,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn mneg_value() {
        let ds = example_family_mneg(2, 0.5).unwrap();
        let b = dual_basis(&ds).unwrap();
        let w = compute_m(&ds, &b, 8, 0).unwrap();
        let closed = -0.6 - 0.8f64.sqrt();
        assert_abs_diff_eq!(w.value, closed, epsilon = 1e-9);
        assert_abs_diff_eq!(w.grid_value.unwrap(), closed, epsilon = 1e-9);
        assert_abs_diff_eq!(w.recompute(&b, ds.teacher()), w.value, epsilon = 1e-9);
        assert_eq!(Verdict::from_m(w.value), Verdict::RankOneOptimal);
        let rep = analyze(&ds, 8, 0).unwrap();
        assert!(rep.counterexample.is_none());
        let err = build_counterexample(&ds, &b, &w, 2).unwrap_err();
        assert!(matches!(err, Error::ConstructionUnavailable(_)));
    }

    #[test]
    fn mpos_basis_and_witness() {
        let ds = example_family_mpos(3, 11.0).unwrap();
        for x in ds.points() {
            assert!(cosine(x, ds.teacher()) > 11.0 / 15.0);
        }
        let b = dual_basis(&ds).unwrap();
        let s = 11f64.sqrt();
        let chi2 = [0.0, -1.0 / (2.0 * s), 0.5];
        let chi3 = [0.0, 1.0 / (2.0 * s), 0.5];
        for i in 0..3 {
            assert_abs_diff_eq!(b.chi[1][i], chi2[i], epsilon = 1e-12);
            assert_abs_diff_eq!(b.chi[2][i], chi3[i], epsilon = 1e-12);
        }
        let reference_pair = objective(&b.chi[1], &b.chi[2], ds.teacher());
        assert_abs_diff_eq!(reference_pair, 5.0 / 6.0 - 0.67f64.sqrt(), epsilon = 1e-12);
        let w = compute_m(&ds, &b, 8, 0).unwrap();
        assert!(w.value >= reference_pair - 1e-6);
        assert!((w.value - w.grid_value.unwrap()).abs() <= 1e-4);
    }

    #[test]
    fn mpos_counterexample_by_hand() {
        let ds = example_family_mpos(3, 11.0).unwrap();
        let b = dual_basis(&ds).unwrap();
        let w = MWitness {
            value: objective(&b.chi[1], &b.chi[2], ds.teacher()),
            k_set: vec![1],
            b: vec![1.0],
            k_comp: vec![0, 2],
            c: vec![0.0, 1.0],
            grid_checked: false,
            grid_value: None,
        };
        let ce = build_counterexample(&ds, &b, &w, 3).unwrap();
        let p = normalized(&b.chi[1]).unwrap();
        let q = normalized(&b.chi[2]).unwrap();
        let cpq = dot(&p, &q);
        let expected = dot(&p, ds.teacher()) - (1.0 - cpq * cpq).sqrt();
        assert_abs_diff_eq!(ce.xi, expected, epsilon = 1e-12);
        assert!((ce.xi - 0.02177).abs() <= 1e-4);
        assert!(ce.acute_case);
        assert!(ce.loss <= COUNTER_LOSS_TOL);
        assert!(ce.sq_norm <= 2.0 - ce.xi * ce.xi + COUNTER_NORM_TOL);
        assert_eq!(ce.params.neuron(2), &[0.0, 0.0, 0.0]);
        for (x, y) in ds.points().zip(ds.labels()) {
            assert_abs_diff_eq!(forward(&ce.params, x), *y, epsilon = 1e-9);
        }
    }

    #[test]
    fn family_preconditions() {
        assert!(example_family_mneg(2, 0.0).is_err());
        assert!(example_family_mneg(3, 0.7).is_err());
        assert!(example_family_mpos(2, 11.0).is_err());
        assert!(example_family_mpos(3, 10.0).is_err());
        assert!(example_family_mpos(5, 11.0).is_ok());
        let ds = crate::dataset::generate_uncentred(3, 4, 0).unwrap();
        assert!(matches!(dual_basis(&ds), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rank1_examples() {
        let ds = example_family_mneg(2, 0.5).unwrap();
        let one = build_rank1(&ds, &[1.0]).unwrap();
        assert_abs_diff_eq!(one.a[0], 1.0);
        assert_abs_diff_eq!(loss(&one, &ds), 0.0, epsilon = 1e-15);
        let two = build_rank1(&ds, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(norm(two.neuron(0)), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(two.sq_norm(), 2.0, epsilon = 1e-12);
        let zero = build_rank1(&ds, &[0.0, 1.0]).unwrap();
        assert_eq!(zero.neuron(0), &[0.0, 0.0]);
        assert!(build_rank1(&ds, &[0.6, 0.6]).is_err());
        assert!(build_rank1(&ds, &[-0.5, 1.5]).is_err());
    }

    #[test]
    fn simplex_projection_oracle() {
        let p = project_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_simplex(&[2.0, 0.0, -1.0]);
        assert_abs_diff_eq!(p[0], 1.0);
        let p = project_simplex(&[0.4, 0.3, 0.1]);
        for (a, b) in p
            .iter()
            .zip([0.4 + 0.2 / 3.0, 0.3 + 0.2 / 3.0, 0.1 + 0.2 / 3.0])
        {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(simplex_grid(2, 0.5).len(), 3);
        assert_eq!(simplex_grid(3, 0.5).len(), 6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = [0.3, -0.2, 0.9];
        let q = [0.1, 0.7, 0.2];
        let v = [0.6, 0.0, 0.8];
        let (gp, gq) = objective_grad(&p, &q, &v);
        let h = 1e-6;
        for i in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[i] += h;
            pm[i] -= h;
            let fd = (objective(&pp, &q, &v) - objective(&pm, &q, &v)) / (2.0 * h);
            assert_abs_diff_eq!(gp[i], fd, epsilon = 1e-7);
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (objective(&p, &qp, &v) - objective(&p, &qm, &v)) / (2.0 * h);
            assert_abs_diff_eq!(gq[i], fd, epsilon = 1e-7);
        }
    }

    fn random_strict(d: usize, seed: u64) -> Option<Dataset> {
        let mut rng = seeded(seed);
        let teacher = normalized(&crate::rng::standard_normal_vec(&mut rng, d))?;
        let pts = (0..d)
            .map(|_| {
                let mut x = teacher.clone();
                crate::linalg::axpy(0.35, &crate::rng::standard_normal_vec(&mut rng, d), &mut x);
                x
            })
            .collect();
        Dataset::from_points(pts, teacher).ok()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn two_dimensional_m_is_negative(seed in 0u64..10_000) {
            let Some(ds) = random_strict(2, seed) else { return Ok(()) };
            let Ok(b) = dual_basis(&ds) else { return Ok(()) };
            let w = compute_m(&ds, &b, 2, seed).unwrap();
            prop_assert!(w.value < 0.0);
        }

        #[test]
        fn objective_scale_invariant(seed in 0u64..10_000, s1 in 0.01f64..100.0, s2 in 0.01f64..100.0) {
            let Some(ds) = random_strict(3, seed) else { return Ok(()) };
            let Ok(b) = dual_basis(&ds) else { return Ok(()) };
            let w = compute_m(&ds, &b, 2, seed).unwrap();
            prop_assert!((w.recompute(&b, ds.teacher()) - w.value).abs() <= 1e-9);
            let mut scaled = w.clone();
            scaled.b = scale(&w.b, s1);
            scaled.c = scale(&w.c, s2);
            prop_assert!((scaled.recompute(&b, ds.teacher()) - w.value).abs() <= 1e-9);
            prop_assert!((w.value - w.grid_value.unwrap()).abs() <= 1e-4);
        }

        #[test]
        fn rank1_certificates(seed in 0u64..10_000, m in 1usize..6) {
            let Some(ds) = random_strict(4, seed) else { return Ok(()) };
            let mut rng = seeded(seed);
            let split = random_simplex(&mut rng, m);
            let total: f64 = split.iter().sum();
            let split: Vec<f64> = split.iter().map(|s| s / total).collect();
            let Ok(p) = build_rank1(&ds, &split) else { return Ok(()) };
            prop_assert!(loss(&p, &ds) <= RANK1_LOSS_TOL);
            prop_assert!((p.sq_norm() - 2.0).abs() <= RANK1_NORM_TOL);
        }
    }
}
