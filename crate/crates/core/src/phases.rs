//! Checks of the predicted training phases against a [`TrainLog`]:
//! the crossing schedule and alignment of the first phase, membership of the
//! bundle vector in the region `S`, the saddle-departure time `T₂`, the PL
//! inequality and the order in which eigencoordinates overshoot.
//!
//! Time and iterations are related by `t = iteration · lr`.

use crate::dataset::{Dataset, EigenAnalysis};
use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, norm, normalized, sub};
use crate::textio::KeyValueReport;
use crate::trainer::{pairwise_angles, MetricsRecord, NetworkParams, TrainLog};
use crate::yardstick::YardstickTrace;

/// Margins `≥ -MONITOR_TOL` count as holding when monitoring GD runs.
pub const MONITOR_TOL: f64 = 1e-6;
/// Records with loss at or below this are ignored by the PL check.
pub const PL_LOSS_FLOOR: f64 = 1e-12;

/// Signed constraint margins of one slice `S_ℓ`; positive means satisfied.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMargins {
    /// 1-based slice index.
    pub ell: usize,
    /// `(k, ρ_k − 1)` for `k < ℓ`.
    pub omega: Vec<(usize, f64)>,
    /// `ρ_ℓ − α_ℓ/(2α_{ℓ−1})`.
    pub phi_lower: f64,
    /// `1 − ρ_ℓ`; the only non-strict constraint.
    pub phi_upper: f64,
    /// `((k, k'), ρ_{k'} − (α_{k'}/(2α_k)) ρ_k)`.
    pub psi_down: Vec<((usize, usize), f64)>,
    /// `((k, k'), 1 − (1 − ρ_k)₊^{1/2 + α_{k'}/(2α_k)} − ρ_{k'})`.
    pub psi_up: Vec<((usize, usize), f64)>,
}

impl SliceMargins {
    fn strict(&self) -> impl Iterator<Item = f64> + '_ {
        self.omega
            .iter()
            .map(|m| m.1)
            .chain(std::iter::once(self.phi_lower))
            .chain(self.psi_down.iter().map(|m| m.1))
            .chain(self.psi_up.iter().map(|m| m.1))
    }

    /// Smallest margin of the slice (without `Ξ`).
    pub fn min_margin(&self) -> f64 {
        self.strict().fold(self.phi_upper, f64::min)
    }

    fn holds(&self, xi: f64, tol: f64) -> bool {
        if tol == 0.0 {
            self.strict().all(|m| m > 0.0) && self.phi_upper >= 0.0 && xi > 0.0
        } else {
            self.min_margin() >= -tol && xi >= -tol
        }
    }
}

/// Consequences of membership that are checked on every member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberAssertions {
    /// `vᵀ(v* − v) > 0`.
    pub ball: bool,
    /// Only for `S₁` members: Ξ cosine `> ½ (α_d ν*_d / ‖γ_[n]‖)²`.
    pub s1_bound: Option<bool>,
    /// `v̄ᵀx̄_i > 0` for every training point.
    pub positive_correlation: bool,
}

impl MemberAssertions {
    pub fn all_ok(&self) -> bool {
        self.ball && self.positive_correlation && self.s1_bound.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SSetReport {
    /// `ρ_k = ν_k / ν*_k`.
    pub rho: Vec<f64>,
    pub slices: Vec<SliceMargins>,
    /// `v̄ᵀ normalize(XXᵀ(v* − v)) − λ^{ε/3}`; `NaN` when degenerate.
    pub xi: f64,
    /// Cosine entering `Ξ` (without the `λ^{ε/3}` offset).
    pub xi_cosine: f64,
    /// `v = 0` or `v = v*`.
    pub degenerate: bool,
    /// First slice with all margins satisfied (strictly).
    pub member_slice: Option<usize>,
    /// Slice with the largest minimum margin, reported even for non-members.
    pub best_slice: Option<usize>,
    pub assertions: Option<MemberAssertions>,
}

impl SSetReport {
    pub fn is_member(&self) -> bool {
        self.member_slice.is_some()
    }

    /// Some slice holds within `tol`, ignoring `Ξ`.
    pub fn slices_hold_within(&self, tol: f64) -> bool {
        !self.degenerate && self.slices.iter().any(|s| s.min_margin() >= -tol)
    }

    /// Membership with margins allowed down to `-tol`.
    pub fn is_member_within(&self, tol: f64) -> bool {
        !self.degenerate && self.slices.iter().any(|s| s.holds(self.xi, tol))
    }
}

/// Evaluate every constraint of every slice at `v`.
pub fn s_membership(
    v: &[f64],
    eigen: &EigenAnalysis,
    ds: &Dataset,
    lambda: f64,
    eps: f64,
) -> SSetReport {
    let d = eigen.dim();
    let nu = eigen.coords(v);
    let rho: Vec<f64> = nu.iter().zip(&eigen.nu_star).map(|(a, b)| a / b).collect();
    let alpha = &eigen.alphas;

    let diff = sub(ds.teacher(), v);
    let pull = ds.apply_xxt(&diff);
    let degenerate = norm(v) == 0.0 || norm(&diff) == 0.0 || norm(&pull) == 0.0;
    let xi_cosine = if degenerate {
        f64::NAN
    } else {
        cosine(v, &pull)
    };
    let xi = xi_cosine - lambda.powf(eps / 3.0);

    let mut slices = Vec::with_capacity(d);
    for ell in 1..=d {
        let l = ell - 1;
        let omega = (0..l).map(|k| (k + 1, rho[k] - 1.0)).collect();
        let ratio = if l == 0 {
            0.0
        } else {
            alpha[l] / (2.0 * alpha[l - 1])
        };
        let mut psi_down = Vec::new();
        let mut psi_up = Vec::new();
        for k in l..d {
            for kp in k + 1..d {
                let r = alpha[kp] / (2.0 * alpha[k]);
                psi_down.push(((k + 1, kp + 1), rho[kp] - r * rho[k]));
                let base = (1.0 - rho[k]).max(0.0);
                psi_up.push(((k + 1, kp + 1), 1.0 - base.powf(0.5 + r) - rho[kp]));
            }
        }
        slices.push(SliceMargins {
            ell,
            omega,
            phi_lower: rho[l] - ratio,
            phi_upper: 1.0 - rho[l],
            psi_down,
            psi_up,
        });
    }

    let member_slice = if degenerate {
        None
    } else {
        slices.iter().find(|s| s.holds(xi, 0.0)).map(|s| s.ell)
    };
    let best_slice = slices
        .iter()
        .max_by(|a, b| a.min_margin().total_cmp(&b.min_margin()))
        .map(|s| s.ell);

    let assertions = (!degenerate && slices.iter().any(|s| s.holds(xi, MONITOR_TOL))).then(|| {
        let in_s1 = slices[0].holds(xi, MONITOR_TOL);
        let g = norm(&ds.gamma_all());
        let s1_threshold = 0.5 * (eigen.alpha_min() * eigen.nu_star[d - 1] / g).powi(2);
        MemberAssertions {
            ball: dot(v, &diff) > 0.0,
            s1_bound: in_s1.then_some(xi_cosine > s1_threshold),
            positive_correlation: ds.points().all(|x| dot(v, x) > 0.0),
        }
    });

    SSetReport {
        rho,
        slices,
        xi,
        xi_cosine,
        degenerate,
        member_slice,
        best_slice,
        assertions,
    }
}

/// Per-stage comparison of a scheduled and an observed crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct StageComparison {
    pub stage: usize,
    pub point: usize,
    pub tau: f64,
    pub observed: Option<f64>,
    /// `λ^{1 − (1 + (3ℓ−1)/(3 n_j)) ε}`.
    pub budget: f64,
}

impl StageComparison {
    pub fn gap(&self) -> Option<f64> {
        self.observed.map(|t| (t - self.tau).abs())
    }

    pub fn within_budget(&self) -> bool {
        self.gap().is_some_and(|g| g <= self.budget)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingComparison {
    pub neuron: usize,
    pub sign: i8,
    pub scheduled: Vec<usize>,
    /// Points in order of their first crossing in the scheduled direction.
    pub observed: Vec<usize>,
    pub order_match: bool,
    pub stages: Vec<StageComparison>,
    /// Crossings in the opposite direction or repeated crossings.
    pub extra_events: usize,
}

/// Match observed activation crossings of each traced neuron to its schedule.
pub fn compare_crossings(
    log: &TrainLog,
    traces: &[YardstickTrace],
    lambda: f64,
    eps: f64,
) -> Vec<CrossingComparison> {
    let lr = log.options.lr;
    traces
        .iter()
        .map(|tr| {
            let entering = tr.sign > 0;
            let mut observed: Vec<usize> = Vec::new();
            let mut first_time: Vec<(usize, f64)> = Vec::new();
            let mut extra = 0;
            for ev in log.crossings.iter().filter(|e| e.neuron == tr.neuron) {
                if ev.entering == entering && !observed.contains(&ev.point) {
                    observed.push(ev.point);
                    first_time.push((ev.point, ev.iteration * lr));
                } else {
                    extra += 1;
                }
            }
            let scheduled = tr.crossing_order();
            let nj = scheduled.len() as f64;
            let stages = tr
                .stages
                .iter()
                .map(|st| {
                    let l = st.index as f64;
                    StageComparison {
                        stage: st.index,
                        point: st.crossing,
                        tau: st.tau_exit,
                        observed: first_time
                            .iter()
                            .find(|(p, _)| *p == st.crossing)
                            .map(|(_, t)| *t),
                        budget: lambda.powf(1.0 - (1.0 + (3.0 * l - 1.0) / (3.0 * nj)) * eps),
                    }
                })
                .collect();
            CrossingComparison {
                neuron: tr.neuron,
                sign: tr.sign,
                order_match: observed == scheduled,
                scheduled,
                observed,
                stages,
                extra_events: extra,
            }
        })
        .collect()
}

/// First logged iteration at or after `not_before` with `ν₁/ν*₁ ≥ 1/2`.
pub fn detect_t2(records: &[MetricsRecord], eigen: &EigenAnalysis, not_before: u64) -> Option<u64> {
    records
        .iter()
        .filter(|r| r.iteration >= not_before)
        .find(|r| {
            r.nu.as_ref()
                .is_some_and(|nu| nu[0] / eigen.nu_star[0] >= 0.5)
        })
        .map(|r| r.iteration)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlCheck {
    /// Minimum `‖∇L‖²/L` over eligible records; `None` if there are none.
    pub min_ratio: Option<f64>,
    /// `2 α_d ‖γ_[n]‖ / (5 α_1)`.
    pub bound: f64,
    pub eligible: usize,
}

impl PlCheck {
    /// `None` when vacuous.
    pub fn holds(&self) -> Option<bool> {
        self.min_ratio.map(|r| r >= self.bound)
    }
}

pub fn pl_bound(eigen: &EigenAnalysis, gamma_norm: f64) -> f64 {
    2.0 * eigen.alpha_min() * gamma_norm / (5.0 * eigen.alpha_max())
}

/// PL ratio over records from iteration `from` on with `L > 1e-12`.
pub fn pl_check(
    records: &[MetricsRecord],
    eigen: &EigenAnalysis,
    gamma_norm: f64,
    from: u64,
) -> PlCheck {
    let ratios: Vec<f64> = records
        .iter()
        .filter(|r| r.iteration >= from && r.loss > PL_LOSS_FLOOR)
        .map(|r| r.grad_sq / r.loss)
        .collect();
    PlCheck {
        min_ratio: ratios.iter().cloned().reduce(f64::min),
        bound: pl_bound(eigen, gamma_norm),
        eligible: ratios.len(),
    }
}

/// Minimum of `‖v‖` after `from`, to compare with `‖γ_[n]‖/(4α₁)`.
pub fn min_bundle_norm(records: &[MetricsRecord], from: u64, until_loss: f64) -> Option<f64> {
    records
        .iter()
        .filter(|r| r.iteration >= from)
        .take_while(|r| r.loss >= until_loss)
        .filter_map(|r| r.nu.as_ref().map(|nu| norm(nu)))
        .reduce(f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenCrossing {
    /// `(k, interpolated iteration)` sorted by time; `k` is 1-based.
    pub crossings: Vec<(usize, f64)>,
    /// Coordinates whose gap to the teacher never changed sign.
    pub never: Vec<usize>,
}

impl EigenCrossing {
    pub fn order(&self) -> Vec<usize> {
        self.crossings.iter().map(|c| c.0).collect()
    }

    /// Crossed coordinates appear in increasing index order.
    pub fn increasing(&self) -> bool {
        self.order().windows(2).all(|w| w[0] < w[1])
    }

    /// Every coordinate crossed, in the order `1, 2, …, d`.
    pub fn is_identity(&self, d: usize) -> bool {
        self.never.is_empty() && self.order() == (1..=d).collect::<Vec<_>>()
    }
}

/// First sign change of `ν*_k − ν_k` per coordinate, located by linear
/// interpolation between consecutive records.
pub fn eigencrossing_order(records: &[MetricsRecord], eigen: &EigenAnalysis) -> EigenCrossing {
    let d = eigen.dim();
    let rows: Vec<(u64, &Vec<f64>)> = records
        .iter()
        .filter_map(|r| r.nu.as_ref().map(|nu| (r.iteration, nu)))
        .collect();
    let mut crossings = Vec::new();
    let mut never = Vec::new();
    for k in 0..d {
        let gap = |nu: &Vec<f64>| eigen.nu_star[k] - nu[k];
        let hit = rows.windows(2).find_map(|w| {
            let (g0, g1) = (gap(w[0].1), gap(w[1].1));
            if g0 != 0.0 && (g0 > 0.0) != (g1 > 0.0) {
                let frac = g0 / (g0 - g1);
                Some(w[0].0 as f64 + frac * (w[1].0 - w[0].0) as f64)
            } else {
                None
            }
        });
        match hit {
            Some(t) => crossings.push((k + 1, t)),
            None => never.push(k + 1),
        }
    }
    crossings.sort_by(|a, b| a.1.total_cmp(&b.1));
    EigenCrossing { crossings, never }
}

/// Per-neuron outcome of the first-phase checks.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronPhase {
    pub neuron: usize,
    pub sign: i8,
    pub class: NeuronClass,
    /// `J−`: no active point and `‖w_j‖ ≤ λ‖z_j‖(1+1e−6)` at `T₀` and at the end.
    pub deactivated: Option<bool>,
    /// `J+`: `cos(w_j, γ_[n])` at the iterate nearest `T₁`.
    pub alignment_cos: Option<f64>,
    /// `J+`: largest `‖w_j‖ / (2‖z_j‖λ^{1−ε})` up to `T₁`.
    pub norm_cap_ratio: Option<f64>,
    /// `J+`: `|ln‖ω_j‖ − ln(‖w_j‖/λ)|` at the iterate nearest `T₁`.
    pub log_length_gap: Option<f64>,
    /// Neurons outside `J+ ∪ J−`: parameters never changed.
    pub frozen: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronClass {
    JPlus,
    JMinus,
    Inactive,
}

impl NeuronClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NeuronClass::JPlus => "j_plus",
            NeuronClass::JMinus => "j_minus",
            NeuronClass::Inactive => "inactive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstPhase {
    pub t0: f64,
    pub t1: f64,
    pub t0_iteration: u64,
    pub t1_iteration: u64,
    /// `1 − λ^ε`.
    pub alignment_threshold: f64,
    /// `λ^{1−3ε}`.
    pub log_length_budget: f64,
    pub neurons: Vec<NeuronPhase>,
}

impl FirstPhase {
    pub fn deactivation_ok(&self) -> bool {
        self.neurons.iter().all(|n| n.deactivated.unwrap_or(true))
    }

    pub fn alignment_ok(&self) -> bool {
        self.neurons.iter().all(|n| {
            n.alignment_cos
                .is_none_or(|c| c >= self.alignment_threshold)
        })
    }

    pub fn norm_cap_ok(&self) -> bool {
        self.neurons
            .iter()
            .all(|n| n.norm_cap_ratio.is_none_or(|r| r < 1.0))
    }

    pub fn log_length_ok(&self) -> bool {
        self.neurons
            .iter()
            .all(|n| n.log_length_gap.is_none_or(|g| g <= self.log_length_budget))
    }

    pub fn frozen_ok(&self) -> bool {
        self.neurons.iter().all(|n| n.frozen.unwrap_or(true))
    }
}

fn nearest_snapshot(log: &TrainLog, iteration: u64) -> Option<(usize, u64)> {
    log.records
        .iter()
        .enumerate()
        .take(log.snapshots.len())
        .min_by_key(|(_, r)| r.iteration.abs_diff(iteration))
        .map(|(k, r)| (k, r.iteration))
}

/// First-phase checks; requires parameter snapshots in the log.
pub fn first_phase_report(
    log: &TrainLog,
    ds: &Dataset,
    traces: &[YardstickTrace],
    lambda: f64,
    eps: f64,
) -> Result<FirstPhase> {
    if log.snapshots.is_empty() {
        return Err(Error::Precondition(
            "first-phase checks need parameter snapshots in the log".into(),
        ));
    }
    let init = log.initial.provenance.as_ref().ok_or_else(|| {
        Error::Precondition("first-phase checks need the initialisation (z, s)".into())
    })?;
    let lr = log.options.lr;
    let gamma = ds.gamma_all();
    let t0 = traces.iter().map(|t| t.last_tau()).fold(0.0, f64::max) + 1.0;
    let t1 = eps * (-lambda.ln()) / norm(&gamma);
    let (k0, it0) = nearest_snapshot(log, (t0 / lr).round() as u64).unwrap();
    let (k1, it1) = nearest_snapshot(log, (t1 / lr).round() as u64).unwrap();
    let (w_t0, w_t1) = (&log.snapshots[k0], &log.snapshots[k1]);
    let last = log.snapshots.last().unwrap();
    let j_plus = init.j_plus(ds);
    let j_minus = init.j_minus(ds);

    let deactivated = |p: &NetworkParams, j: usize| {
        let w = p.neuron(j);
        ds.index_sets(w).plus.is_empty() && norm(w) <= lambda * norm(&init.z[j]) * (1.0 + 1e-6)
    };

    let neurons = (0..init.width())
        .map(|j| {
            let class = if j_plus.contains(&j) {
                NeuronClass::JPlus
            } else if j_minus.contains(&j) {
                NeuronClass::JMinus
            } else {
                NeuronClass::Inactive
            };
            let mut np = NeuronPhase {
                neuron: j,
                sign: init.signs[j],
                class,
                deactivated: None,
                alignment_cos: None,
                norm_cap_ratio: None,
                log_length_gap: None,
                frozen: None,
            };
            match class {
                NeuronClass::JMinus => {
                    np.deactivated = Some(deactivated(w_t0, j) && deactivated(last, j));
                }
                NeuronClass::JPlus => {
                    np.alignment_cos = Some(cosine(w_t1.neuron(j), &gamma));
                    let cap = 2.0 * norm(&init.z[j]) * lambda.powf(1.0 - eps);
                    np.norm_cap_ratio = log
                        .records
                        .iter()
                        .take_while(|r| r.iteration <= it1)
                        .filter_map(|r| r.neuron_norms.get(j))
                        .map(|n| n / cap)
                        .reduce(f64::max);
                    let tr = traces.iter().find(|t| t.neuron == j);
                    np.log_length_gap = tr.map(|tr| {
                        let omega = tr.state_at(it1 as f64 * lr).norm;
                        (omega.ln() - (norm(w_t1.neuron(j)) / lambda).ln()).abs()
                    });
                }
                NeuronClass::Inactive => {
                    let w0 = log.initial.neuron(j);
                    np.frozen = Some(
                        log.snapshots
                            .iter()
                            .all(|p| p.neuron(j) == w0 && p.a[j] == log.initial.a[j]),
                    );
                }
            }
            np
        })
        .collect();

    Ok(FirstPhase {
        t0,
        t1,
        t0_iteration: it0,
        t1_iteration: it1,
        alignment_threshold: 1.0 - lambda.powf(eps),
        log_length_budget: lambda.powf(1.0 - 3.0 * eps),
        neurons,
    })
}

/// Fraction of logged iterates in `S` between alignment and a loss threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SMonitor {
    /// First snapshot iteration where all `J+` pairwise cosines exceed `1 − 4λ^ε`.
    pub aligned_at: Option<u64>,
    /// First record with loss below the end threshold.
    pub end_at: Option<u64>,
    pub total: usize,
    pub members: usize,
    /// Iterates where some slice holds within tolerance when `Ξ` is ignored.
    pub slice_members: usize,
    pub member_slices: Vec<usize>,
    pub assertion_failures: usize,
}

impl SMonitor {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.members as f64 / self.total as f64
        }
    }
}

/// Monitor `S` membership of the bundle vector along a run with snapshots.
pub fn s_monitor(
    log: &TrainLog,
    ds: &Dataset,
    eigen: &EigenAnalysis,
    lambda: f64,
    eps: f64,
    end_loss: f64,
) -> SMonitor {
    let threshold = 1.0 - 4.0 * lambda.powf(eps);
    let aligned_at = log
        .snapshots
        .iter()
        .zip(&log.records)
        .find(|(p, _)| {
            
            pairwise_angles(p, &log.j_plus)
                .is_none_or(|(max_deg, _)| max_deg.to_radians().cos() > threshold)
        })
        .map(|(_, r)| r.iteration);
    let end_at = log
        .records
        .iter()
        .find(|r| r.loss < end_loss)
        .map(|r| r.iteration);
    let mut mon = SMonitor {
        aligned_at,
        end_at,
        total: 0,
        members: 0,
        slice_members: 0,
        member_slices: Vec::new(),
        assertion_failures: 0,
    };
    let Some(start) = aligned_at else {
        return mon;
    };
    let stop = end_at.unwrap_or(u64::MAX);
    for r in log
        .records
        .iter()
        .filter(|r| r.iteration >= start && r.iteration < stop)
    {
        let v = if r.bundle.is_empty() {
            match &r.nu {
                Some(nu) => eigen.from_coords(nu),
                None => continue,
            }
        } else {
            r.bundle.clone()
        };
        let rep = s_membership(&v, eigen, ds, lambda, eps);
        mon.total += 1;
        if rep.slices_hold_within(MONITOR_TOL) {
            mon.slice_members += 1;
        }
        if rep.is_member_within(MONITOR_TOL) {
            mon.members += 1;
            if let Some(l) = rep.member_slice.or(rep.best_slice) {
                mon.member_slices.push(l);
            }
            if !rep.assertions.is_some_and(|a| a.all_ok()) {
                mon.assertion_failures += 1;
            }
        }
    }
    mon
}

/// Everything the analyzer can say about one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub lambda: f64,
    pub eps: f64,
    pub crossings: Vec<CrossingComparison>,
    pub first_phase: Option<FirstPhase>,
    pub t2: Option<u64>,
    pub pl: Option<PlCheck>,
    /// `(min ‖v‖ after T₂, ‖γ_[n]‖/(4α₁))`.
    pub bundle_norm: Option<(f64, f64)>,
    pub eigen_crossing: Option<EigenCrossing>,
    pub s_monitor: Option<SMonitor>,
}

/// Run every analysis that the log supports.
pub fn analyze(
    log: &TrainLog,
    ds: &Dataset,
    traces: &[YardstickTrace],
    lambda: f64,
    eps: f64,
) -> Result<PhaseReport> {
    let eigen = ds.eigen_analysis()?;
    let g = norm(&ds.gamma_all());
    let first_phase = if log.snapshots.is_empty() || log.initial.provenance.is_none() {
        None
    } else {
        Some(first_phase_report(log, ds, traces, lambda, eps)?)
    };
    let tracked = log.records.iter().any(|r| r.nu.is_some());
    let t1_iter = ((eps * (-lambda.ln()) / g) / log.options.lr).floor() as u64;
    let t2 = tracked
        .then(|| detect_t2(&log.records, &eigen, t1_iter))
        .flatten();
    let pl = t2.map(|t| pl_check(&log.records, &eigen, g, t));
    let bundle_norm = t2
        .and_then(|t| min_bundle_norm(&log.records, t, 0.0))
        .map(|v| (v, g / (4.0 * eigen.alpha_max())));
    let eigen_crossing = tracked.then(|| eigencrossing_order(&log.records, &eigen));
    let s_monitor =
        (!log.snapshots.is_empty()).then(|| s_monitor(log, ds, &eigen, lambda, eps, 1e-6));
    Ok(PhaseReport {
        lambda,
        eps,
        crossings: compare_crossings(log, traces, lambda, eps),
        first_phase,
        t2,
        pl,
        bundle_norm,
        eigen_crossing,
        s_monitor,
    })
}

impl PhaseReport {
    pub fn crossing_order_ok(&self) -> bool {
        self.crossings.iter().all(|c| c.order_match)
    }

    pub fn to_kv(&self) -> KeyValueReport {
        let mut kv = KeyValueReport::default();
        kv.push("lambda", self.lambda);
        kv.push("eps", self.eps);
        kv.push("traced_neurons", self.crossings.len());
        kv.push(
            "crossing_order_mismatches",
            self.crossings.iter().filter(|c| !c.order_match).count(),
        );
        let stages: Vec<&StageComparison> = self.crossings.iter().flat_map(|c| &c.stages).collect();
        kv.push("scheduled_crossings", stages.len());
        kv.push(
            "crossings_within_budget",
            stages.iter().filter(|s| s.within_budget()).count(),
        );
        match &self.first_phase {
            Some(fp) => {
                kv.push("first_phase", "available");
                kv.push("t0", fp.t0);
                kv.push("t1", fp.t1);
                kv.push("t0_iteration", fp.t0_iteration);
                kv.push("t1_iteration", fp.t1_iteration);
                kv.push("alignment_threshold", fp.alignment_threshold);
                let min_cos = fp
                    .neurons
                    .iter()
                    .filter_map(|n| n.alignment_cos)
                    .reduce(f64::min);
                kv.push(
                    "min_alignment_cos",
                    min_cos.map_or("none".into(), |c| c.to_string()),
                );
                kv.push("deactivation_ok", fp.deactivation_ok());
                kv.push("alignment_ok", fp.alignment_ok());
                kv.push("norm_cap_ok", fp.norm_cap_ok());
                kv.push("log_length_ok", fp.log_length_ok());
                kv.push("frozen_ok", fp.frozen_ok());
            }
            None => kv.push("first_phase", "unavailable (no parameter snapshots)"),
        }
        kv.push(
            "t2_iteration",
            self.t2.map_or("none".into(), |t| t.to_string()),
        );
        if let Some(pl) = &self.pl {
            kv.push("pl_bound", pl.bound);
            kv.push(
                "pl_min_ratio",
                pl.min_ratio.map_or("none".into(), |r| r.to_string()),
            );
            kv.push(
                "pl_verdict",
                pl.holds().map_or("vacuous".into(), |h| h.to_string()),
            );
        }
        if let Some((v, b)) = self.bundle_norm {
            kv.push("min_bundle_norm_after_t2", v);
            kv.push("bundle_norm_bound", b);
        }
        if let Some(ec) = &self.eigen_crossing {
            let order: Vec<String> = ec.order().iter().map(|k| k.to_string()).collect();
            kv.push("eigen_crossing_order", order.join(" "));
            let never: Vec<String> = ec.never.iter().map(|k| k.to_string()).collect();
            kv.push("eigen_never_crossed", never.join(" "));
            kv.push("eigen_crossing_increasing", ec.increasing());
        }
        if let Some(sm) = &self.s_monitor {
            kv.push("s_records", sm.total);
            kv.push("s_members", sm.members);
            kv.push("s_fraction", sm.fraction());
            kv.push("s_slice_members_ignoring_xi", sm.slice_members);
            kv.push("s_assertion_failures", sm.assertion_failures);
        }
        kv
    }

    /// One row per traced stage.
    pub fn neurons_csv(&self) -> String {
        let mut s =
            String::from("neuron,sign,stage,point,tau,observed_time,gap,budget,order_match\n");
        for c in &self.crossings {
            for st in &c.stages {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    c.neuron,
                    c.sign,
                    st.stage,
                    st.point,
                    st.tau,
                    st.observed.map_or(String::new(), |t| t.to_string()),
                    st.gap().map_or(String::new(), |g| g.to_string()),
                    st.budget,
                    c.order_match
                ));
            }
        }
        s
    }
}

/// Unit vector helper used by callers that only hold eigencoordinates.
pub fn bundle_from_nu(eigen: &EigenAnalysis, nu: &[f64]) -> Option<Vec<f64>> {
    normalized(&eigen.from_coords(nu))
}
