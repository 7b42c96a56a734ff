//! Yardstick trajectories `dω/dt = s ‖ω‖ γ_{I+(ω)}`, `ω(0) = z`.
//!
//! Between two consecutive boundary crossings the governing vector `γ` is
//! fixed, `ω` stays in the plane spanned by its starting direction and `γ`,
//! and the angle `φ` to `γ` obeys `cos φ(t) = tanh(artanh cos φ⁺ + s‖γ‖Δt)`.
//! Everything below follows from that: crossing angles come from a sine
//! relation, crossing times from inverting the tanh law, and norms from
//! integrating `d ln‖ω‖/dt = s‖γ‖ cos φ`.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Dataset, InitConfig};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, normalized, scale};
use crate::textio::{self, fmt_f64};

/// Relative tolerance on the argmin used to detect simultaneous crossings.
pub const TIE_TOL: f64 = 1e-10;
/// Below this `sin φ⁺` the stage plane is undefined.
pub const SIN_FLOOR: f64 = 1e-15;
/// Default trajectory samples per stage for the δ infimum terms.
pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    /// `s = +1`: every point is active and `ω` turns towards `γ_[n]`.
    AlignsToGamma,
    /// `s = −1`: the last point left at `φ = π/2` and `ω` is frozen.
    Deactivates,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::AlignsToGamma => "aligns_to_gamma",
            Terminal::Deactivates => "deactivates",
        }
    }
}

/// One smooth piece of a trajectory: fixed governing vector from `tau_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub sign: i8,
    pub tau_start: f64,
    pub dir_start: Vec<f64>,
    pub norm_start: f64,
    /// Unit governing direction; ignored when `gamma_norm == 0`.
    pub gamma_hat: Vec<f64>,
    pub gamma_norm: f64,
    /// Angle between `dir_start` and `gamma_hat`.
    pub phi_start: f64,
}

/// Direction, norm and governing angle of `ω` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaState {
    pub dir: Vec<f64>,
    pub norm: f64,
    /// `NaN` once the trajectory is frozen.
    pub phi: f64,
}

impl OmegaState {
    pub fn omega(&self) -> Vec<f64> {
        scale(&self.dir, self.norm)
    }
}

impl Segment {
    /// Closed-form state at `t ≥ tau_start`.
    pub fn state_at(&self, t: f64) -> OmegaState {
        let dt = t - self.tau_start;
        if self.gamma_norm == 0.0 {
            return OmegaState {
                dir: self.dir_start.clone(),
                norm: self.norm_start,
                phi: f64::NAN,
            };
        }
        let s = f64::from(self.sign);
        let g = self.gamma_norm;
        let c0 = self.phi_start.cos();
        let s0 = self.phi_start.sin();
        let e = (g * dt).exp();
        let norm = self.norm_start * (0.5 * (1.0 + s * c0) * e + 0.5 * (1.0 - s * c0) / e);
        if s0 < SIN_FLOOR {
            // Aligned (or anti-aligned) with γ: the direction never moves.
            return OmegaState {
                dir: self.dir_start.clone(),
                norm,
                phi: self.phi_start,
            };
        }
        let cos_phi = (c0.atanh() + s * g * dt).tanh();
        let phi = cos_phi.clamp(-1.0, 1.0).acos();
        let mut dir = scale(&self.dir_start, phi.sin() / s0);
        axpy((self.phi_start - phi).sin() / s0, &self.gamma_hat, &mut dir);
        OmegaState { dir, norm, phi }
    }
}

/// One stage `ℓ` of the crossing schedule, between `τ^{ℓ−1}` and `τ^ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct YardstickStage {
    /// 1-based stage index `ℓ`.
    pub index: usize,
    /// Active set `I^ℓ` during the stage (sorted).
    pub active: Vec<usize>,
    /// Point `i^ℓ` reaching the boundary at the end of the stage.
    pub crossing: usize,
    pub tau_entry: f64,
    pub tau_exit: f64,
    pub phi_entry: f64,
    pub phi_exit: f64,
    pub norm_entry: f64,
    pub norm_exit: f64,
    /// `| ‖γ_{I^ℓ}‖ cos φ^{ℓ−} − ‖γ_{I^{ℓ+1}}‖ cos φ^{ℓ+} |`.
    pub continuity_residual: f64,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YardstickTrace {
    pub neuron: usize,
    pub sign: i8,
    pub z: Vec<f64>,
    pub stages: Vec<YardstickStage>,
    pub terminal: Terminal,
    /// Open segment after the last crossing (frozen for `s = −1`).
    pub tail: Segment,
}

impl YardstickTrace {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// `τ^{n_j}` (zero without stages).
    pub fn last_tau(&self) -> f64 {
        self.stages.last().map_or(0.0, |s| s.tau_exit)
    }

    /// Crossing indices in schedule order.
    pub fn crossing_order(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.crossing).collect()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.tau_exit).collect()
    }

    /// `artanh cos φ` of the `s = +1` tail at time `t`; `None` otherwise.
    pub fn tail_artanh(&self, t: f64) -> Option<f64> {
        match self.terminal {
            Terminal::AlignsToGamma => {
                let c0 = self.tail.phi_start.cos();
                Some(c0.atanh() + self.tail.gamma_norm * (t - self.tail.tau_start))
            }
            Terminal::Deactivates => None,
        }
    }

    /// Exact state at any `t ≥ 0`.
    pub fn state_at(&self, t: f64) -> OmegaState {
        for st in &self.stages {
            if t <= st.tau_exit {
                return st.segment.state_at(t.max(st.tau_entry));
            }
        }
        self.tail.state_at(t.max(self.tail.tau_start))
    }
}

fn segment(
    ds: &Dataset,
    sign: i8,
    tau: f64,
    dir: &[f64],
    norm_start: f64,
    active: &[usize],
) -> Segment {
    let gamma = ds.gamma(active);
    let g = norm(&gamma);
    let (gamma_hat, phi) = match normalized(&gamma) {
        Some(h) => {
            let c = dot(dir, &h).clamp(-1.0, 1.0);
            // atan2 keeps accuracy near 0 and π.
            let mut perp = dir.to_vec();
            axpy(-c, &h, &mut perp);
            (h, norm(&perp).atan2(c))
        }
        None => (vec![0.0; dir.len()], f64::NAN),
    };
    Segment {
        sign,
        tau_start: tau,
        dir_start: dir.to_vec(),
        norm_start,
        gamma_hat,
        gamma_norm: g,
        phi_start: phi,
    }
}

/// Closed-form crossing schedule of the yardstick started at `z` with sign `s`.
pub fn simulate_yardstick(
    ds: &Dataset,
    neuron: usize,
    z: &[f64],
    sign: i8,
) -> Result<YardstickTrace> {
    if z.len() != ds.dim() {
        return Err(Error::Precondition(
            "direction has the wrong dimension".into(),
        ));
    }
    if sign != 1 && sign != -1 {
        return Err(Error::Precondition("sign must be +1 or -1".into()));
    }
    let sets = ds.index_sets(z);
    if !sets.zero.is_empty() {
        return Err(Error::AssumptionViolation(format!(
            "neuron {neuron}: points {:?} lie on the initial boundary",
            sets.zero
        )));
    }
    if sets.plus.is_empty() {
        return Err(Error::Precondition(format!(
            "neuron {neuron} sees no training point and never moves"
        )));
    }
    let units: Vec<Vec<f64>> = ds.points().map(|x| normalized(x).unwrap()).collect();
    let s = f64::from(sign);

    let mut active = sets.plus.clone();
    let mut remaining = if sign > 0 {
        sets.minus.clone()
    } else {
        sets.plus.clone()
    };
    let mut dir = normalized(z).ok_or_else(|| Error::Precondition("zero direction".into()))?;
    let mut omega_norm = norm(z);
    let mut tau = 0.0;
    let mut stages = Vec::with_capacity(remaining.len());

    while !remaining.is_empty() {
        let seg = segment(ds, sign, tau, &dir, omega_norm, &active);
        let g = seg.gamma_norm;
        if g == 0.0 {
            return Err(Error::NumericalFailure(format!(
                "neuron {neuron}: governing vector vanished with points left"
            )));
        }
        let phi_plus = seg.phi_start;
        let (sin_p, cos_p) = phi_plus.sin_cos();
        if sin_p < SIN_FLOOR {
            return Err(Error::NumericalFailure(format!(
                "neuron {neuron}: direction aligned with gamma at stage {}",
                stages.len() + 1
            )));
        }

        // (key, point, ratio) with ratio = −ω̄ᵀx̄ / γ̄ᵀx̄ and key = s·ratio.
        let mut cands: Vec<(f64, usize, f64)> = remaining
            .iter()
            .filter_map(|&i| {
                let b = dot(&seg.gamma_hat, &units[i]);
                if b <= 0.0 {
                    return None;
                }
                let r = -dot(&dir, &units[i]) / b;
                Some((s * r, i, r))
            })
            .collect();
        if cands.is_empty() {
            return Err(Error::AssumptionViolation(format!(
                "neuron {neuron}: points {remaining:?} never reach the boundary"
            )));
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        if cands.len() > 1 && cands[1].0 - cands[0].0 <= TIE_TOL * cands[0].0.abs().max(1.0) {
            return Err(Error::AssumptionViolation(format!(
                "neuron {neuron}: points {} and {} cross simultaneously",
                cands[0].1, cands[1].1
            )));
        }
        let (_, i, r) = cands[0];

        let phi_minus = sin_p.atan2(r + cos_p);
        let moves_right = if sign > 0 {
            phi_minus < phi_plus
        } else {
            phi_minus > phi_plus
        };
        if !(phi_minus > 0.0 && phi_minus < std::f64::consts::PI) || !moves_right {
            return Err(Error::NumericalFailure(format!(
                "neuron {neuron}: exit angle {phi_minus} inconsistent with entry {phi_plus}"
            )));
        }
        let cos_m = phi_minus.cos();
        let dt = s * (cos_m.atanh() - cos_p.atanh()) / g;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "neuron {neuron}: non-positive stage length {dt}"
            )));
        }
        let tau_exit = tau + dt;
        let exit = seg.state_at(tau_exit);
        let dir_exit = normalized(&exit.dir).unwrap();

        let mut next_active = active.clone();
        if sign > 0 {
            next_active.push(i);
            next_active.sort_unstable();
        } else {
            next_active.retain(|&k| k != i);
        }
        let next_gamma = ds.gamma(&next_active);
        let residual = (g * cos_m - dot(&dir_exit, &next_gamma)).abs();

        // The bookkeeping sets must agree with the actual signs.
        for (k, xk) in units.iter().enumerate() {
            if k == i {
                continue;
            }
            let p = dot(&dir_exit, xk);
            let expect_pos = next_active.binary_search(&k).is_ok();
            if (p > 0.0) != expect_pos {
                return Err(Error::AssumptionViolation(format!(
                    "neuron {neuron}: point {k} changed side outside the schedule at stage {}",
                    stages.len() + 1
                )));
            }
        }

        stages.push(YardstickStage {
            index: stages.len() + 1,
            active: active.clone(),
            crossing: i,
            tau_entry: tau,
            tau_exit,
            phi_entry: phi_plus,
            phi_exit: phi_minus,
            norm_entry: omega_norm,
            norm_exit: exit.norm,
            continuity_residual: residual,
            segment: seg,
        });
        remaining.retain(|&k| k != i);
        active = next_active;
        dir = dir_exit;
        omega_norm = exit.norm;
        tau = tau_exit;
    }

    let terminal = if sign > 0 {
        Terminal::AlignsToGamma
    } else {
        Terminal::Deactivates
    };
    let tail = segment(ds, sign, tau, &dir, omega_norm, &active);
    Ok(YardstickTrace {
        neuron,
        sign,
        z: z.to_vec(),
        stages,
        terminal,
        tail,
    })
}

/// Traces for every neuron that initially sees a training point, in index order.
pub fn simulate_all(ds: &Dataset, init: &InitConfig) -> Result<Vec<YardstickTrace>> {
    let moving: Vec<usize> = (0..init.width())
        .filter(|&j| !ds.index_sets(&init.z[j]).plus.is_empty())
        .collect();
    moving
        .par_iter()
        .map(|&j| simulate_yardstick(ds, j, &init.z[j], init.signs[j]))
        .collect()
}

/// Crossing found by the fixed-step integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerCrossing {
    pub point: usize,
    pub time: f64,
    pub entering: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EulerTrace {
    pub crossings: Vec<EulerCrossing>,
    /// Number of crossings the schedule should contain, `|I_{−s}(z)|`.
    pub expected: usize,
    /// Horizon reached before `expected` crossings were seen.
    pub partial: bool,
    pub final_omega: Vec<f64>,
}

impl EulerTrace {
    pub fn times(&self) -> Vec<f64> {
        self.crossings.iter().map(|c| c.time).collect()
    }

    pub fn order(&self) -> Vec<usize> {
        self.crossings.iter().map(|c| c.point).collect()
    }
}

/// Deterministic random `d = 4`, `n = 6` instance whose neuron of the given
/// sign crosses at least `min_cross` points and simulates without a tie.
pub fn random_instance(seed: u64, sign: i8, min_cross: usize) -> (Dataset, Vec<f64>) {
    let mut k = 0;
    loop {
        let ds = crate::dataset::generate_uncentred(4, 6, seed * 1000 + k)
            .expect("uncentred generator does not fail for d = 4, n = 6");
        let mut rng = crate::rng::seeded(seed * 7919 + k);
        for _ in 0..50 {
            let z = crate::rng::standard_normal_vec(&mut rng, 4);
            let sets = ds.index_sets(&z);
            let n_j = if sign > 0 {
                sets.minus.len()
            } else {
                sets.plus.len()
            };
            if sets.plus.is_empty() || n_j < min_cross {
                continue;
            }
            if simulate_yardstick(&ds, 0, &z, sign).is_ok() {
                return (ds, z);
            }
        }
        k += 1;
    }
}

/// Explicit Euler integration of the yardstick ODE with crossing detection by
/// sign change and linear interpolation of the crossing time.
pub fn euler_oracle(
    ds: &Dataset,
    z: &[f64],
    sign: i8,
    dt: f64,
    horizon: f64,
) -> Result<EulerTrace> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Precondition(
            "dt must be positive, horizon non-negative".into(),
        ));
    }
    let n = ds.len();
    let s = f64::from(sign);
    let sets = ds.index_sets(z);
    let expected = if sign > 0 {
        sets.minus.len()
    } else {
        sets.plus.len()
    };

    let mut omega = z.to_vec();
    let mut proj: Vec<f64> = ds.points().map(|x| dot(&omega, x)).collect();
    let mut active: Vec<usize> = (0..n).filter(|&i| proj[i] > 0.0).collect();
    let mut gamma = ds.gamma(&active);
    let mut crossings = Vec::new();
    let steps = (horizon / dt).ceil() as u64;

    for step in 0..steps {
        let t = step as f64 * dt;
        let c = dt * s * norm(&omega);
        axpy(c, &gamma, &mut omega);
        let mut changed = false;
        for (i, x) in ds.points().enumerate() {
            let p = dot(&omega, x);
            let old = proj[i];
            if (old > 0.0) != (p > 0.0) {
                let frac = old / (old - p);
                crossings.push(EulerCrossing {
                    point: i,
                    time: t + frac * dt,
                    entering: p > 0.0,
                });
                changed = true;
            }
            proj[i] = p;
        }
        if changed {
            active = (0..n).filter(|&i| proj[i] > 0.0).collect();
            gamma = ds.gamma(&active);
        }
        if !omega.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("Euler iterate overflowed".into()));
        }
    }
    let partial = crossings.len() < expected;
    Ok(EulerTrace {
        crossings,
        expected,
        partial,
        final_omega: omega,
    })
}

/// δ and Δ with every contributing term.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub delta: f64,
    /// `(term name, value)`; δ is the minimum of these.
    pub delta_terms: Vec<(String, f64)>,
    pub big_delta: f64,
    pub big_delta_terms: Vec<(String, f64)>,
    /// `‖γ_[n]‖`, cached for the time formulas.
    pub gamma_norm: f64,
    pub dim: usize,
    pub samples_per_stage: usize,
    pub note: String,
}

impl Measurements {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.delta_terms
            .iter()
            .chain(&self.big_delta_terms)
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

fn min_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    values
        .into_iter()
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
}

/// Minimum of `|ω̄ᵀx̄_i|` sampled along one trace, excluding the points that
/// sit on the boundary at either end of each stage.
pub fn trajectory_cosine_infimum(
    trace: &YardstickTrace,
    units: &[Vec<f64>],
    samples: usize,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (l, st) in trace.stages.iter().enumerate() {
        let prev = if l > 0 {
            Some(trace.stages[l - 1].crossing)
        } else {
            None
        };
        for k in 0..=samples {
            let t = st.tau_entry + (st.tau_exit - st.tau_entry) * k as f64 / samples as f64;
            let dir = st.segment.state_at(t).dir;
            for (i, x) in units.iter().enumerate() {
                if i == st.crossing || Some(i) == prev {
                    continue;
                }
                let v = dot(&dir, x).abs();
                best = Some(best.map_or(v, |b| b.min(v)));
            }
        }
    }
    best
}

/// Evaluate every term of δ and Δ.
///
/// `traces` must cover exactly the neurons that see a training point at
/// initialisation; the trajectory infimum is sampled at `samples` + 1 points
/// per stage.
pub fn measurements(
    ds: &Dataset,
    init: &InitConfig,
    traces: &[YardstickTrace],
    samples: usize,
) -> Result<Measurements> {
    let d = ds.dim();
    let eig = ds.eigen_analysis()?;
    let units: Vec<Vec<f64>> = ds.points().map(|x| normalized(x).unwrap()).collect();
    let j_plus = init.j_plus(ds);
    let j_minus = init.j_minus(ds);
    let mut covered: Vec<usize> = traces.iter().map(|t| t.neuron).collect();
    covered.sort_unstable();
    let mut wanted: Vec<usize> = j_plus.iter().chain(&j_minus).cloned().collect();
    wanted.sort_unstable();
    if covered != wanted {
        return Err(Error::Precondition(
            "traces must cover exactly the neurons in J+ and J-".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::Precondition(
            "need at least one sample per stage".into(),
        ));
    }

    let mut terms: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            terms.push((name.to_string(), v));
        }
    };
    push("min_point_norm", min_of(ds.points().map(norm)));
    push(
        "min_pairwise_cosine",
        min_of(
            units
                .iter()
                .flat_map(|a| units.iter().map(move |b| dot(a, b))),
        ),
    );
    push(
        "eigen_gap",
        min_of(
            (0..d - 1).map(|k| (eig.alphas[k].sqrt() - eig.alphas[k + 1].sqrt()) * (d - 1) as f64),
        ),
    );
    push("sqrt_alpha_d", Some(eig.alpha_min().sqrt()));
    push(
        "min_nu_star_sqrt_d",
        min_of(eig.nu_star.iter().map(|v| v * (d as f64).sqrt())),
    );
    push("min_z_norm", min_of(init.z.iter().map(|z| norm(z))));

    let by_neuron = |j: usize| traces.iter().find(|t| t.neuron == j).unwrap();
    push(
        "min_cos_phi0_jplus",
        min_of(j_plus.iter().map(|&j| by_neuron(j).state_at(0.0).phi.cos())),
    );
    push(
        "min_sin_phi0_jminus",
        min_of(
            j_minus
                .iter()
                .map(|&j| by_neuron(j).state_at(0.0).phi.sin()),
        ),
    );
    push(
        "trajectory_abs_cosine",
        min_of(
            traces
                .iter()
                .filter_map(|t| trajectory_cosine_infimum(t, &units, samples)),
        ),
    );
    push(
        "jminus_first_crossing_cosine",
        min_of(j_minus.iter().filter_map(|&j| {
            let tr = by_neuron(j);
            tr.stages
                .first()
                .map(|st| dot(&normalized(&tr.z).unwrap(), &units[st.crossing]))
        })),
    );
    push(
        "min_stage_gap",
        min_of(
            traces
                .iter()
                .flat_map(|t| t.stages.iter().map(|s| s.tau_exit - s.tau_entry)),
        ),
    );

    if let Some((name, v)) = terms.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::AssumptionViolation(format!(
            "delta term {name} is not positive ({v})"
        )));
    }
    let delta = terms.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);

    let big_terms = vec![
        (
            "max_point_norm".to_string(),
            ds.points().map(norm).fold(0.0, f64::max),
        ),
        (
            "max_z_norm".to_string(),
            init.z.iter().map(|z| norm(z)).fold(0.0, f64::max),
        ),
        ("one".to_string(), 1.0),
    ];
    let big_delta = big_terms.iter().map(|(_, v)| *v).fold(0.0, f64::max);

    Ok(Measurements {
        delta,
        delta_terms: terms,
        big_delta,
        big_delta_terms: big_terms,
        gamma_norm: norm(&ds.gamma_all()),
        dim: d,
        samples_per_stage: samples,
        note: "trajectory terms are sampled minima over the yardstick traces".into(),
    })
}

/// Times and time bounds of the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalTimes {
    /// `max_j τ_j^{n_j} + 1`.
    pub t0: f64,
    /// `ε ln(1/λ) / ‖γ_[n]‖`.
    pub t1: f64,
    /// Upper bound on `T₂`: `T₁ + ln(1/λ)(4 + ε/2) d Δ²/δ⁶`.
    pub t2_bound: f64,
    /// Time after which the loss is below `ζ`.
    pub loss_time_bound: f64,
}

pub fn theoretical_times(
    meas: &Measurements,
    lambda: f64,
    eps: f64,
    zeta: f64,
    traces: &[YardstickTrace],
) -> Result<TheoreticalTimes> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Precondition(format!(
            "zeta must lie in (0, 1], got {zeta}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Precondition("lambda must be positive".into()));
    }
    let t0 = traces.iter().map(|t| t.last_tau()).fold(0.0, f64::max) + 1.0;
    let ln_inv = -lambda.ln();
    let t1 = eps * ln_inv / meas.gamma_norm;
    let d = meas.dim as f64;
    let (dl, bd) = (meas.delta, meas.big_delta);
    let t2_bound = t1 + ln_inv * (4.0 + eps / 2.0) * d * bd * bd / dl.powi(6);
    let loss_time_bound = ln_inv * 2.0 * (2.0 + eps) * d * bd * bd / dl.powi(6)
        + (-zeta.ln()) * 5.0 * bd * bd / (2.0 * dl.powi(4));
    Ok(TheoreticalTimes {
        t0,
        t1,
        t2_bound,
        loss_time_bound,
    })
}

pub const TRACE_CSV_HEADER: &str =
    "neuron,sign,stage,crossing_index,tau,phi_entry,phi_exit,omega_norm_exit";

/// One row per stage; neurons without stages produce no rows.
pub fn traces_to_csv(traces: &[YardstickTrace]) -> String {
    let mut s = String::from(TRACE_CSV_HEADER);
    s.push('\n');
    for t in traces {
        for st in &t.stages {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                t.neuron,
                t.sign,
                st.index,
                st.crossing,
                fmt_f64(st.tau_exit),
                fmt_f64(st.phi_entry),
                fmt_f64(st.phi_exit),
                fmt_f64(st.norm_exit)
            ));
        }
    }
    s
}

/// Parsed form of a trace CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub neuron: usize,
    pub sign: i8,
    pub stage: usize,
    pub crossing: usize,
    pub tau: f64,
    pub phi_entry: f64,
    pub phi_exit: f64,
    pub norm_exit: f64,
}

pub fn parse_traces_csv(text: &str, origin: &str) -> Result<Vec<ScheduleRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == TRACE_CSV_HEADER => {}
        _ => return Err(Error::parse(origin, "missing trace CSV header")),
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 8 {
                return Err(Error::parse(origin, format!("bad trace row {line:?}")));
            }
            let u = |k: usize| textio::parse_usize(f[k], origin);
            let x = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|_| Error::parse(origin, format!("bad number {:?}", f[k])))
            };
            let sign: i8 = f[1].parse().map_err(|_| Error::parse(origin, "bad sign"))?;
            Ok(ScheduleRow {
                neuron: u(0)?,
                sign,
                stage: u(2)?,
                crossing: u(3)?,
                tau: x(4)?,
                phi_entry: x(5)?,
                phi_exit: x(6)?,
                norm_exit: x(7)?,
            })
        })
        .collect()
}

pub fn write_traces(path: &Path, traces: &[YardstickTrace]) -> Result<()> {
    textio::write_file(path, &traces_to_csv(traces))
}

pub fn read_traces(path: &Path) -> Result<Vec<ScheduleRow>> {
    parse_traces_csv(&textio::read_file(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_uncentred, CorrelationMode, DatasetMeta, Scheme};
    use crate::rng::{seeded, standard_normal_vec};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn toy() -> Dataset {
        Dataset::from_points(vec![vec![1.0, 0.0], vec![0.8, 0.6]], vec![1.0, 0.0]).unwrap()
    }

    /// Random valid instance with a neuron of the requested sign and at
    /// least `min_cross` scheduled crossings.
    fn instance(seed: u64, sign: i8, min_cross: usize) -> (Dataset, Vec<f64>) {
        random_instance(seed, sign, min_cross)
    }

    #[test]
    fn fully_active_positive_neuron_has_no_stages() {
        let ds = toy();
        let z = [1.0, 0.2];
        let tr = simulate_yardstick(&ds, 0, &z, 1).unwrap();
        assert!(tr.stages.is_empty());
        assert_eq!(tr.terminal, Terminal::AlignsToGamma);
        let g = ds.gamma_all();
        let c0 = crate::linalg::cosine(&z, &g);
        for t in [0.0, 0.5, 2.0] {
            let st = tr.state_at(t);
            let expected = (c0.atanh() + norm(&g) * t).tanh();
            assert!((crate::linalg::cosine(&st.dir, &g) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn tanh_law_inversion() {
        let seg = Segment {
            sign: 1,
            tau_start: 0.0,
            dir_start: vec![0.6, 0.8],
            norm_start: 1.0,
            gamma_hat: vec![1.0, 0.0],
            gamma_norm: 1.0,
            phi_start: 0.6f64.acos(),
        };
        let t = 0.9f64.atanh() - 0.6f64.atanh();
        let st = seg.state_at(t);
        assert!((st.phi.cos() - 0.9).abs() < 1e-14);
        assert!((st.dir[0] - 0.9).abs() < 1e-12);
        assert!((norm(&st.dir) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_law_matches_ode_integration() {
        let (ds, z) = instance(3, 1, 1);
        let tr = simulate_yardstick(&ds, 0, &z, 1).unwrap();
        let t_end = tr.last_tau() * 0.999;
        // RK4 on the first stage's fixed-γ ODE, compared before any crossing.
        let st = &tr.stages[0];
        let gamma = scale(&st.segment.gamma_hat, st.segment.gamma_norm);
        let f = |w: &[f64]| scale(&gamma, norm(w));
        let t1 = st.tau_exit.min(t_end) * 0.5;
        let h = t1 / 2000.0;
        let mut w = z.clone();
        for _ in 0..2000 {
            let k1 = f(&w);
            let mut w2 = w.clone();
            axpy(h / 2.0, &k1, &mut w2);
            let k2 = f(&w2);
            let mut w3 = w.clone();
            axpy(h / 2.0, &k2, &mut w3);
            let k3 = f(&w3);
            let mut w4 = w.clone();
            axpy(h, &k3, &mut w4);
            let k4 = f(&w4);
            for c in 0..w.len() {
                w[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        let exact = tr.state_at(t1).omega();
        for c in 0..w.len() {
            assert!((w[c] - exact[c]).abs() < 1e-9 * norm(&w));
        }
    }

    #[test]
    fn schedule_matches_euler_oracle_both_signs() {
        for (seed, sign) in [(1, 1i8), (2, -1i8)] {
            let (ds, z) = instance(seed, sign, 2);
            let tr = simulate_yardstick(&ds, 0, &z, sign).unwrap();
            let eu = euler_oracle(&ds, &z, sign, 1e-5, tr.last_tau() * 1.05 + 0.1).unwrap();
            assert!(!eu.partial);
            assert_eq!(eu.order(), tr.crossing_order());
            for (a, b) in eu.times().iter().zip(tr.taus()) {
                assert!((a - b).abs() <= 1e-3 * b, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn euler_error_is_first_order() {
        let (ds, z) = instance(5, 1, 1);
        let tr = simulate_yardstick(&ds, 0, &z, 1).unwrap();
        let tau = tr.stages[0].tau_exit;
        let h = tau * 1.2 + 0.05;
        let e1 = (euler_oracle(&ds, &z, 1, 2e-3, h).unwrap().times()[0] - tau).abs();
        let e2 = (euler_oracle(&ds, &z, 1, 1e-3, h).unwrap().times()[0] - tau).abs();
        let ratio = e1 / e2;
        assert!(ratio > 1.6 && ratio < 2.4, "error ratio {ratio}");
    }

    #[test]
    fn euler_sees_no_crossing_without_schedule() {
        let ds = toy();
        let eu = euler_oracle(&ds, &[1.0, 0.2], 1, 1e-3, 5.0).unwrap();
        assert!(eu.crossings.is_empty());
        assert_eq!(eu.expected, 0);
        assert!(!eu.partial);
    }

    #[test]
    fn negative_neuron_ends_at_right_angle_and_freezes() {
        let (ds, z) = instance(4, -1, 2);
        let tr = simulate_yardstick(&ds, 0, &z, -1).unwrap();
        assert_eq!(tr.terminal, Terminal::Deactivates);
        let last = tr.stages.last().unwrap();
        assert!((last.phi_exit - FRAC_PI_2).abs() <= 1e-6);
        let a = tr.state_at(last.tau_exit + 1.0).omega();
        let b = tr.state_at(last.tau_exit + 10.0).omega();
        assert_eq!(a, b);
        assert!(ds.index_sets(&a).plus.is_empty() || ds.index_sets(&a).plus.len() <= 1);
    }

    #[test]
    fn negative_crossing_cosine_decreasing_and_concave() {
        let (ds, z) = instance(6, -1, 2);
        let tr = simulate_yardstick(&ds, 0, &z, -1).unwrap();
        for st in &tr.stages {
            let x = normalized(ds.point(st.crossing)).unwrap();
            let k = 400;
            let vals: Vec<f64> = (0..=k)
                .map(|q| {
                    let t = st.tau_entry + (st.tau_exit - st.tau_entry) * q as f64 / k as f64;
                    dot(&st.segment.state_at(t).dir, &x)
                })
                .collect();
            for w in vals.windows(2) {
                assert!(w[1] < w[0]);
            }
            for w in vals.windows(3) {
                assert!(w[2] - 2.0 * w[1] + w[0] < 1e-12);
            }
        }
    }

    #[test]
    fn positive_projections_increase() {
        let (ds, z) = instance(8, 1, 2);
        let tr = simulate_yardstick(&ds, 0, &z, 1).unwrap();
        let horizon = tr.last_tau() + 1.0;
        let grid: Vec<Vec<f64>> = (0..=2000)
            .map(|q| tr.state_at(horizon * q as f64 / 2000.0).omega())
            .collect();
        for x in ds.points() {
            for w in grid.windows(2) {
                assert!(dot(&w[1], x) > dot(&w[0], x));
            }
        }
    }

    #[test]
    fn ties_are_rejected() {
        // Two mirror-image points reach the boundary at the same moment.
        let ds = Dataset::new(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.3, 1.0, 0.5],
                vec![0.3, -1.0, 0.5],
            ],
            vec![1.0, 0.0, 0.0],
            DatasetMeta::new(Scheme::Custom, 0),
            CorrelationMode::Relaxed,
        )
        .unwrap();
        let z = [1.0, 0.0, -1.0];
        let r = simulate_yardstick(&ds, 0, &z, 1);
        assert!(matches!(r, Err(Error::AssumptionViolation(_))), "{r:?}");
    }

    #[test]
    fn inactive_neuron_is_a_precondition_error() {
        let ds = toy();
        let r = simulate_yardstick(&ds, 0, &[-1.0, -0.1], 1);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn times_formulas() {
        let meas = Measurements {
            delta: 0.5,
            delta_terms: vec![],
            big_delta: 1.0,
            big_delta_terms: vec![],
            gamma_norm: 0.73f64.sqrt(),
            dim: 2,
            samples_per_stage: 1000,
            note: String::new(),
        };
        let t = theoretical_times(&meas, 1e-4, 0.25, 1.0, &[]).unwrap();
        let expected_t1 = 0.25 * 1e4f64.ln() / 0.73f64.sqrt();
        assert!((t.t1 - expected_t1).abs() < 1e-12);
        assert!((t.t1 - 2.69497).abs() < 1e-4);
        assert_eq!(t.t0, 1.0);
        // ζ = 1 leaves only the λ summand.
        let first = 1e4f64.ln() * 2.0 * 2.25 * 2.0 / 0.5f64.powi(6);
        assert!((t.loss_time_bound - first).abs() < 1e-9 * first);
        let t_one = theoretical_times(&meas, 1.0, 0.25, 0.5, &[]).unwrap();
        assert_eq!(t_one.t1, 0.0);
        assert!(theoretical_times(&meas, 1.0, 0.25, 0.0, &[]).is_err());
    }

    #[test]
    fn measurement_terms() {
        let (ds, _) = instance(9, 1, 1);
        let init = InitConfig::gaussian(4, 12, 0.01, 0.25, 3).unwrap();
        let traces = simulate_all(&ds, &init).unwrap();
        let m = measurements(&ds, &init, &traces, 1000).unwrap();
        assert!(m.delta <= m.term("min_point_norm").unwrap());
        assert!(m.delta <= m.big_delta && m.big_delta >= 1.0);
        assert!(m.delta_terms.iter().all(|(_, v)| *v > 0.0));
        let dense = measurements(&ds, &init, &traces, 10_000).unwrap();
        assert!((dense.delta - m.delta).abs() <= 0.01 * m.delta);
    }

    #[test]
    fn unit_data_and_init_give_unit_big_delta() {
        let ds = toy();
        let init =
            InitConfig::new(vec![vec![0.5, 0.1], vec![0.2, 0.3]], vec![1, 1], 0.1, 0.25).unwrap();
        let traces = simulate_all(&ds, &init).unwrap();
        let m = measurements(&ds, &init, &traces, 100).unwrap();
        assert_eq!(m.big_delta, 1.0);
    }

    #[test]
    fn trace_csv_round_trip() {
        let (ds, z) = instance(2, -1, 2);
        let tr = simulate_yardstick(&ds, 3, &z, -1).unwrap();
        let rows = parse_traces_csv(&traces_to_csv(std::slice::from_ref(&tr)), "mem").unwrap();
        assert_eq!(rows.len(), tr.stages.len());
        for (r, st) in rows.iter().zip(&tr.stages) {
            assert_eq!(
                (r.neuron, r.sign, r.stage, r.crossing),
                (3, -1, st.index, st.crossing)
            );
            assert_eq!(r.tau, st.tau_exit);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn stage_invariants(seed in 0u64..10_000, positive in any::<bool>()) {
            let ds = generate_uncentred(4, 6, seed).unwrap();
            let mut rng = seeded(seed ^ 0xABCD);
            let z = standard_normal_vec(&mut rng, 4);
            let sign = if positive { 1 } else { -1 };
            let sets = ds.index_sets(&z);
            prop_assume!(!sets.plus.is_empty());
            let tr = match simulate_yardstick(&ds, 0, &z, sign) {
                Ok(t) => t,
                Err(Error::AssumptionViolation(_)) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let n_j = if positive { sets.minus.len() } else { sets.plus.len() };
            prop_assert_eq!(tr.stages.len(), n_j);
            let mut seen = tr.crossing_order();
            seen.sort_unstable();
            let mut want = if positive { sets.minus.clone() } else { sets.plus.clone() };
            want.sort_unstable();
            prop_assert_eq!(seen, want);
            for (l, st) in tr.stages.iter().enumerate() {
                prop_assert!(st.tau_entry < st.tau_exit);
                prop_assert!(st.continuity_residual <= 1e-9);
                prop_assert!(st.norm_exit > 0.0);
                if l + 1 < tr.stages.len() {
                    let next = &tr.stages[l + 1].active;
                    let mut expect = st.active.clone();
                    if positive { expect.push(st.crossing); expect.sort_unstable(); }
                    else { expect.retain(|&k| k != st.crossing); }
                    prop_assert_eq!(next, &expect);
                }
                let mid = tr.state_at(0.5 * (st.tau_entry + st.tau_exit));
                prop_assert!(mid.phi.cos() > -1.0 && mid.phi.cos() < 1.0);
                prop_assert!(mid.norm > 0.0);
            }
            if !positive {
                prop_assert!((tr.stages.last().unwrap().phi_exit - FRAC_PI_2).abs() <= 1e-6);
            }
        }
    }
}
