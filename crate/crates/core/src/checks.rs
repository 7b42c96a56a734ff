//! Acceptance suite shared by the `acceptance` test target and `verify`.
//!
//! Every criterion returns a [`CriterionResult`] whose [`line`] is a single
//! `PASS`/`FAIL` row. Tolerances and workload sizes are the constants below.
//!
//! [`line`]: CriterionResult::line

use std::time::Instant;

use rand::Rng as _;
use rand_distr::Exp1;

use crate::dataset::{
    generate, generate_uncentred, validate_assumptions, Dataset, EigenAnalysis, InitConfig, Scheme,
};
use crate::error::Result;
use crate::interpolator::{
    build_counterexample, build_rank1, compute_m, dual_basis, example_family_mneg,
    example_family_mpos, grid_oracle, Verdict, COUNTER_LOSS_TOL, COUNTER_NORM_TOL, GRID_STEP,
    RANK1_LOSS_TOL, RANK1_NORM_TOL,
};
use crate::linalg::{dot, norm};
use crate::phases::{
    compare_crossings, detect_t2, eigencrossing_order, first_phase_report, min_bundle_norm,
    pl_check, s_monitor, CrossingComparison, EigenCrossing, FirstPhase, PlCheck, SMonitor,
};
use crate::rng::{derive_seed, seeded, standard_normal_vec};
use crate::sweep::{medians_by_lambda, run_sweep, strictly_decreasing, SweepConfig, SweepRow};
use crate::trainer::{
    gradient, init_balanced, loss, train, Cadence, NetworkParams, TrainLog, TrainOptions,
};
use crate::yardstick::{
    euler_oracle, random_instance, simulate_all, simulate_yardstick, YardstickTrace,
};

/// Base seed of every randomised criterion.
pub const SUITE_SEED: u64 = 20_240_601;

pub const C1_DATASETS: usize = 20;
pub const C2_M_FLOOR: f64 = 5.0 / 6.0 - 0.818_535_277_187_245 - 1e-6;
pub const C2_XI_TARGET: f64 = 0.02177;
pub const C2_XI_TOL: f64 = 1e-4;
pub const C3_M_TARGET: f64 = -1.49443;
pub const C3_M_TOL: f64 = 1e-5;
pub const C4_INSTANCES: u64 = 10;
pub const C4_DT: f64 = 1e-5;
pub const C4_REL_TOL: f64 = 1e-3;
pub const C4_CONTINUITY_TOL: f64 = 1e-9;
pub const C5_POINTS: usize = 100;
pub const C5_H: f64 = 1e-6;
pub const C5_REL_TOL: f64 = 1e-5;
/// Minimum `|w_jᵀx_i|` for a parameter point to count as off-boundary.
pub const C5_BOUNDARY_GAP: f64 = 1e-3;
/// Desk-scale run shared by criteria 6, 7 and 10.
pub const DESK_LAMBDA_EXP: i32 = -10;
pub const DESK_D: usize = 4;
pub const DESK_M: usize = 16;
pub const DESK_LR: f64 = 1e-3;
pub const DESK_EPS: f64 = 0.25;
pub const DESK_MAX_ITERS: u64 = 5_000_000;
pub const DESK_DATASET_SEED: u64 = 0;
pub const DESK_INIT_SEED: u64 = 0;
pub const C8_TARGET_DEG: f64 = 0.479_271_472_598_234;
pub const C8_FACTOR: f64 = 5.0;
/// Iteration cap of the reduced sweep cells.
pub const C8_MAX_ITERS: u64 = 200_000;
/// Sweep base seed; trials are numbered 0..trials under it.
pub const C8_BASE_SEED: u64 = 0;
pub const C9_LR: f64 = 1e-3;
pub const C9_ITERS: u64 = 10_000;
pub const C9_TOL: f64 = 1e-4;
pub const C10_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: String,
    pub name: &'static str,
    pub passed: bool,
    /// Reported without failing the suite.
    pub soft: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let verdict = match (self.passed, self.soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (soft)",
        };
        format!(
            "{verdict} criterion {} {}: {} [{:.2}s, budget {}s]",
            self.id, self.name, self.detail, self.seconds, self.budget_seconds
        )
    }

    /// Counts towards the exit status.
    pub fn hard_failure(&self) -> bool {
        !self.passed && !self.soft
    }
}

fn timed(
    id: &str,
    name: &'static str,
    budget_seconds: f64,
    f: impl FnOnce() -> Result<(bool, String)>,
) -> CriterionResult {
    let start = Instant::now();
    let outcome = f();
    let seconds = start.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        id: id.into(),
        name,
        passed: ok && seconds < budget_seconds,
        soft: false,
        detail,
        seconds,
        budget_seconds,
    }
}

fn random_split(rng: &mut crate::rng::Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = e.iter().sum();
    let mut split: Vec<f64> = e.iter().map(|x| x / s).collect();
    // Renormalise the last entry so the weights sum to one to rounding.
    let head: f64 = split[..m - 1].iter().sum();
    split[m - 1] = (1.0 - head).max(0.0);
    split
}

pub fn criterion_1() -> CriterionResult {
    timed("1", "rank-1 certificate", 5.0, || {
        let mut worst_loss = 0.0f64;
        let mut worst_norm = 0.0f64;
        for k in 0..C1_DATASETS as u64 {
            let d = 2 + (k % 5) as usize;
            let ds = generate(Scheme::Uncentred, d, d, derive_seed(&[SUITE_SEED, 1, k]))?;
            let mut rng = seeded(derive_seed(&[SUITE_SEED, 11, k]));
            let m = rng.random_range(1..=6usize);
            let p = build_rank1(&ds, &random_split(&mut rng, m))?;
            worst_loss = worst_loss.max(loss(&p, &ds));
            worst_norm = worst_norm.max((p.sq_norm() - 2.0).abs());
        }
        Ok((
            worst_loss <= RANK1_LOSS_TOL && worst_norm <= RANK1_NORM_TOL,
            format!("max loss {worst_loss:.2e}, max |‖θ‖²−2| {worst_norm:.2e} over {C1_DATASETS} datasets"),
        ))
    })
}

pub fn criterion_2() -> CriterionResult {
    timed("2", "dichotomy (M > 0)", 5.0, || {
        let ds = example_family_mpos(3, 11.0)?;
        let basis = dual_basis(&ds)?;
        let w = compute_m(&ds, &basis, 16, SUITE_SEED)?;
        let ce = build_counterexample(&ds, &basis, &w, 2)?;
        let ok = w.value >= C2_M_FLOOR
            && (ce.xi - C2_XI_TARGET).abs() <= C2_XI_TOL
            && ce.loss <= COUNTER_LOSS_TOL
            && ce.sq_norm <= 2.0 - ce.xi * ce.xi + COUNTER_NORM_TOL;
        Ok((
            ok,
            format!(
                "M {:.6} (floor {:.6}), ξ {:.6} (target {C2_XI_TARGET} ± {C2_XI_TOL}), loss {:.2e}, ‖θ‖² {:.6}",
                w.value, C2_M_FLOOR, ce.xi, ce.loss, ce.sq_norm
            ),
        ))
    })
}

pub fn criterion_3() -> CriterionResult {
    timed("3", "dichotomy (M < 0)", 5.0, || {
        let ds = example_family_mneg(2, 0.5)?;
        let basis = dual_basis(&ds)?;
        let w = compute_m(&ds, &basis, 16, SUITE_SEED)?;
        let closed = -0.6 - 0.8f64.sqrt();
        let grid = grid_oracle(&ds, &basis, GRID_STEP)?;
        let ok = (w.value - C3_M_TARGET).abs() <= C3_M_TOL
            && (w.value - closed).abs() <= C3_M_TOL
            && (grid - closed).abs() <= C3_M_TOL
            && Verdict::from_m(w.value) == Verdict::RankOneOptimal;
        Ok((
            ok,
            format!("M {:.6}, closed form {closed:.6}, grid {grid:.6}", w.value),
        ))
    })
}

pub fn criterion_4() -> CriterionResult {
    timed("4", "yardstick vs Euler", 120.0, || {
        let mut worst_rel = 0.0f64;
        let mut worst_cont = 0.0f64;
        let mut problems = Vec::new();
        let mut compared = 0;
        for k in 0..C4_INSTANCES {
            let sign = if k % 2 == 0 { 1 } else { -1 };
            let (ds, z) = random_instance(derive_seed(&[SUITE_SEED, 4, k]) % 100_000, sign, 1);
            let tr = simulate_yardstick(&ds, 0, &z, sign)?;
            let eu = euler_oracle(&ds, &z, sign, C4_DT, tr.last_tau() * 1.05 + 0.1)?;
            if eu.partial || eu.order() != tr.crossing_order() {
                problems.push(format!(
                    "instance {k} order {:?} vs {:?}",
                    eu.order(),
                    tr.crossing_order()
                ));
                continue;
            }
            for (a, b) in eu.times().iter().zip(tr.taus()) {
                worst_rel = worst_rel.max((a - b).abs() / b);
                compared += 1;
            }
            for st in &tr.stages {
                worst_cont = worst_cont.max(st.continuity_residual);
            }
        }
        let ok = problems.is_empty() && worst_rel <= C4_REL_TOL && worst_cont <= C4_CONTINUITY_TOL;
        let mut detail = format!(
            "{compared} crossings, max relative gap {worst_rel:.2e}, max continuity residual {worst_cont:.2e}"
        );
        if !problems.is_empty() {
            detail.push_str(&format!("; {}", problems.join("; ")));
        }
        Ok((ok, detail))
    })
}

fn finite_difference(params: &NetworkParams, ds: &Dataset, h: f64) -> NetworkParams {
    let mut fd = NetworkParams::zeros(params.width(), params.dim());
    let mut p = params.clone();
    for j in 0..params.a.len() {
        let orig = p.a[j];
        p.a[j] = orig + h;
        let up = loss(&p, ds);
        p.a[j] = orig - h;
        let down = loss(&p, ds);
        p.a[j] = orig;
        fd.a[j] = (up - down) / (2.0 * h);
    }
    for c in 0..params.w.len() {
        let orig = p.w[c];
        p.w[c] = orig + h;
        let up = loss(&p, ds);
        p.w[c] = orig - h;
        let down = loss(&p, ds);
        p.w[c] = orig;
        fd.w[c] = (up - down) / (2.0 * h);
    }
    fd
}

pub fn criterion_5() -> CriterionResult {
    timed("5", "gradient vs finite differences", 10.0, || {
        let ds = generate_uncentred(4, 6, derive_seed(&[SUITE_SEED, 5]))?;
        let mut rng = seeded(derive_seed(&[SUITE_SEED, 55]));
        let (m, d) = (8, 4);
        let mut worst = 0.0f64;
        let mut tested = 0;
        while tested < C5_POINTS {
            let a = standard_normal_vec(&mut rng, m);
            let w: Vec<Vec<f64>> = (0..m).map(|_| standard_normal_vec(&mut rng, d)).collect();
            let near = w
                .iter()
                .any(|wj| ds.points().any(|x| dot(wj, x).abs() < C5_BOUNDARY_GAP));
            if near {
                continue;
            }
            let p = NetworkParams::new(a, w)?;
            let g = gradient(&p, &ds);
            let fd = finite_difference(&p, &ds, C5_H);
            let scale =
                g.a.iter()
                    .chain(&g.w)
                    .fold(0.0f64, |acc, v| acc.max(v.abs()));
            let err =
                g.a.iter()
                    .chain(&g.w)
                    .zip(fd.a.iter().chain(&fd.w))
                    .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
            if scale > 0.0 {
                worst = worst.max(err / scale);
            }
            tested += 1;
        }
        Ok((
            worst <= C5_REL_TOL,
            format!("max error relative to ‖∇L‖∞ {worst:.2e} over {C5_POINTS} points"),
        ))
    })
}

/// Everything computed from the shared desk-scale run.
#[derive(Debug, Clone)]
pub struct DeskRun {
    pub ds: Dataset,
    pub eigen: EigenAnalysis,
    pub init: InitConfig,
    pub traces: Vec<YardstickTrace>,
    pub log: TrainLog,
    pub lambda: f64,
    pub first: FirstPhase,
    pub crossings: Vec<CrossingComparison>,
    pub t2: Option<u64>,
    pub pl: Option<PlCheck>,
    pub bundle_norm: Option<f64>,
    pub bundle_bound: f64,
    pub eigen_crossing: EigenCrossing,
    pub monitor: SMonitor,
    pub seconds: f64,
}

pub fn desk_run_with(dataset_seed: u64, init_seed: u64) -> Result<DeskRun> {
    let start = Instant::now();
    let lambda = 4f64.powi(DESK_LAMBDA_EXP);
    let ds = generate_uncentred(DESK_D, DESK_D, dataset_seed)?;
    let eigen = ds.eigen_analysis()?;
    let init = InitConfig::gaussian(DESK_D, DESK_M, lambda, DESK_EPS, init_seed)?;
    let report = validate_assumptions(&ds, &init);
    if !report.all_passed() {
        return Err(crate::error::Error::AssumptionViolation(
            report.violations.join("; "),
        ));
    }
    let traces = simulate_all(&ds, &init)?;
    let g = norm(&ds.gamma_all());
    let t0 = traces.iter().map(|t| t.last_tau()).fold(0.0, f64::max) + 1.0;
    let t1 = DESK_EPS * (-lambda.ln()) / g;
    let opts = TrainOptions {
        lr: DESK_LR,
        max_iters: DESK_MAX_ITERS,
        cadence: Cadence::Geometric,
        force_log: vec![(t0 / DESK_LR).round() as u64, (t1 / DESK_LR).round() as u64],
        track_eigen: true,
        keep_snapshots: true,
        ..TrainOptions::default()
    };
    let log = train(&init_balanced(&init), &ds, &opts)?;
    let first = first_phase_report(&log, &ds, &traces, lambda, DESK_EPS)?;
    let crossings = compare_crossings(&log, &traces, lambda, DESK_EPS);
    let t2 = detect_t2(&log.records, &eigen, first.t1_iteration);
    let pl = t2.map(|t| pl_check(&log.records, &eigen, g, t));
    let bundle_norm = t2.and_then(|t| min_bundle_norm(&log.records, t, log.options.loss_tol));
    let eigen_crossing = eigencrossing_order(&log.records, &eigen);
    let monitor = s_monitor(&log, &ds, &eigen, lambda, DESK_EPS, 1e-6);
    Ok(DeskRun {
        bundle_bound: g / (4.0 * eigen.alpha_max()),
        ds,
        eigen,
        init,
        traces,
        log,
        lambda,
        first,
        crossings,
        t2,
        pl,
        bundle_norm,
        eigen_crossing,
        monitor,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn desk_run() -> Result<DeskRun> {
    desk_run_with(DESK_DATASET_SEED, DESK_INIT_SEED)
}

fn from_desk(
    id: &str,
    name: &'static str,
    budget: f64,
    run: &Result<DeskRun>,
    f: impl FnOnce(&DeskRun) -> (bool, String),
) -> CriterionResult {
    match run {
        Ok(r) => {
            let (ok, detail) = f(r);
            CriterionResult {
                id: id.into(),
                name,
                passed: ok && r.seconds < budget,
                soft: false,
                detail,
                seconds: r.seconds,
                budget_seconds: budget,
            }
        }
        Err(e) => CriterionResult {
            id: id.into(),
            name,
            passed: false,
            soft: false,
            detail: format!("desk run failed: {e}"),
            seconds: 0.0,
            budget_seconds: budget,
        },
    }
}

pub fn criterion_6(run: &Result<DeskRun>) -> CriterionResult {
    from_desk("6", "first-phase structure", 300.0, run, |r| {
        let order_ok = r.crossings.iter().all(|c| c.order_match);
        let min_cos = r
            .first
            .neurons
            .iter()
            .filter_map(|n| n.alignment_cos)
            .fold(f64::INFINITY, f64::min);
        let j_minus = r
            .first
            .neurons
            .iter()
            .filter(|n| n.deactivated.is_some())
            .count();
        let ok = r.first.deactivation_ok() && order_ok && r.first.alignment_ok();
        (
            ok,
            format!(
                "(a) {j_minus} J− neurons deactivated: {}; (b) order agrees for {}/{} traced neurons; (c) min alignment cos {:.12} vs {:.12}; {} iterations",
                r.first.deactivation_ok(),
                r.crossings.iter().filter(|c| c.order_match).count(),
                r.crossings.len(),
                min_cos,
                r.first.alignment_threshold,
                r.log.iterations
            ),
        )
    })
}

pub fn criterion_7(run: &Result<DeskRun>) -> CriterionResult {
    from_desk("7", "second-phase structure", 300.0, run, |r| {
        let pl_ok = r.pl.and_then(|p| p.holds()).unwrap_or(false);
        let bundle_ok = r.bundle_norm.is_some_and(|v| v > r.bundle_bound);
        let order_ok = r.eigen_crossing.increasing() && !r.eigen_crossing.crossings.is_empty();
        let ok = r.t2.is_some() && pl_ok && bundle_ok && order_ok;
        let pl = r.pl.map_or("none".to_string(), |p| {
            format!(
                "{:.4e} vs bound {:.4e}",
                p.min_ratio.unwrap_or(f64::NAN),
                p.bound
            )
        });
        (
            ok,
            format!(
                "T₂ iteration {:?}; min PL ratio {pl}; min ‖v‖ {:.4e} vs {:.4e}; eigen-crossing order {:?} (never crossed {:?}); final loss {:.3e} after {} iterations",
                r.t2,
                r.bundle_norm.unwrap_or(f64::NAN),
                r.bundle_bound,
                r.eigen_crossing.order(),
                r.eigen_crossing.never,
                r.log.final_record().loss,
                r.log.iterations
            ),
        )
    })
}

pub fn criterion_10(run: &Result<DeskRun>) -> CriterionResult {
    let mut res = from_desk("10", "S-membership monitoring", 300.0, run, |r| {
        let m = &r.monitor;
        let ok = m.total > 0 && m.fraction() >= C10_FRACTION && m.assertion_failures == 0;
        (
            ok,
            format!(
                "{}/{} logged iterates in S (fraction {:.4}, need {C10_FRACTION}); {} satisfy the slice constraints when Ξ is ignored; {} assertion failures; alignment at {:?}, loss < 1e-6 at {:?}",
                m.members,
                m.total,
                m.fraction(),
                m.slice_members,
                m.assertion_failures,
                m.aligned_at,
                m.end_at
            ),
        )
    });
    res.soft = true;
    res
}

/// Reduced sweep configuration of criterion 8.
pub fn c8_config(fast: bool) -> SweepConfig {
    SweepConfig {
        scheme: Scheme::Uncentred,
        dims: vec![16],
        widths: vec![if fast { 50 } else { 200 }],
        lambda_exps: if fast {
            vec![-2, -5, -8]
        } else {
            vec![-2, -4, -6, -8]
        },
        trials: if fast { 3 } else { 5 },
        max_iters: C8_MAX_ITERS,
        seed: C8_BASE_SEED,
        ..SweepConfig::default()
    }
}

fn fmt_medians(m: &[(i32, f64)]) -> String {
    m.iter()
        .map(|(e, v)| format!("4^{e}: {v:.4}°"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Monotone trend of median max angles.
pub fn criterion_8_trend(fast: bool) -> (CriterionResult, Vec<SweepRow>) {
    let cfg = c8_config(fast);
    let mut rows = Vec::new();
    let res = timed(
        if fast { "8-trend-fast" } else { "8-trend" },
        "max-angle medians decrease with λ",
        if fast { 600.0 } else { 3600.0 },
        || {
            rows = run_sweep(&cfg)?;
            let med = medians_by_lambda(&rows, 16, cfg.widths[0]);
            Ok((strictly_decreasing(&med), fmt_medians(&med)))
        },
    );
    (res, rows)
}

/// Proximity of the `λ = 4⁻⁸` median to the reference value, from the
/// full-scale trend rows.
pub fn criterion_8_proximity(rows: &[SweepRow], seconds: f64) -> CriterionResult {
    let med = medians_by_lambda(rows, 16, 200);
    let at = med.iter().find(|(e, _)| *e == -8).map(|x| x.1);
    let (lo, hi) = (C8_TARGET_DEG / C8_FACTOR, C8_TARGET_DEG * C8_FACTOR);
    let ok = at.is_some_and(|v| v >= lo && v <= hi);
    CriterionResult {
        id: "8-proximity".into(),
        name: "median max angle near reference at λ = 4⁻⁸",
        passed: ok,
        soft: false,
        detail: format!(
            "median {:.4}° vs window [{lo:.4}°, {hi:.4}°] around {C8_TARGET_DEG:.4}°",
            at.unwrap_or(f64::NAN)
        ),
        seconds,
        budget_seconds: 3600.0,
    }
}

pub fn criterion_9() -> CriterionResult {
    timed("9", "balance conservation", 30.0, || {
        let ds = generate_uncentred(4, 4, derive_seed(&[SUITE_SEED, 9]))?;
        let init = InitConfig::gaussian(4, 8, 1.0, 0.25, derive_seed(&[SUITE_SEED, 99]))?;
        let opts = TrainOptions {
            lr: C9_LR,
            max_iters: C9_ITERS,
            loss_tol: 0.0,
            cadence: Cadence::Every(1),
            keep_snapshots: true,
            track_crossings: false,
            ..TrainOptions::default()
        };
        let p0 = init_balanced(&init);
        let log = train(&p0, &ds, &opts)?;
        let drift = log
            .records
            .iter()
            .map(|r| r.max_balance())
            .fold(0.0, f64::max);
        let flips = log
            .snapshots
            .iter()
            .map(|p| {
                p.a.iter()
                    .zip(&p0.a)
                    .filter(|(a, a0)| a.signum() != a0.signum())
                    .count()
            })
            .max()
            .unwrap_or(0);
        Ok((
            drift <= C9_TOL && flips == 0 && log.iterations == C9_ITERS,
            format!(
                "max |a_j² − ‖w_j‖²| {drift:.3e} over {} iterations; sign flips {flips}; final loss {:.3e}",
                log.iterations,
                log.final_record().loss
            ),
        ))
    })
}

/// Run the suite. `fast` swaps the full criterion-8 sweep for its reduced
/// variant and drops the proximity check, which needs the full sweep.
pub fn run_all(fast: bool, mut sink: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let mut out = Vec::new();
    let mut emit = |r: CriterionResult, out: &mut Vec<CriterionResult>| {
        sink(&r);
        out.push(r);
    };
    emit(criterion_1(), &mut out);
    emit(criterion_2(), &mut out);
    emit(criterion_3(), &mut out);
    emit(criterion_4(), &mut out);
    emit(criterion_5(), &mut out);
    let run = desk_run();
    emit(criterion_6(&run), &mut out);
    emit(criterion_7(&run), &mut out);
    let (trend_fast, _) = criterion_8_trend(true);
    emit(trend_fast, &mut out);
    if !fast {
        let (trend, rows) = criterion_8_trend(false);
        let secs = trend.seconds;
        emit(trend, &mut out);
        emit(criterion_8_proximity(&rows, secs), &mut out);
    }
    emit(criterion_9(), &mut out);
    emit(criterion_10(&run), &mut out);
    out
}
