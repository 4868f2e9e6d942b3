mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cosine, gaussian_vec, norm, Brightness, Halfspace};
use physadv::baseline::{boundary_distance, boundary_search, opt_attack, threshold_schedule_run, OptConfig, ScheduleConfig, ScheduleStatus};
use physadv::boost::{rgf_gradient, BoostConfig};
use physadv::fixture::DeskFixture;
use physadv::imaging::{build_patch_grid, BinaryGrid, Image, Mask, PatchGrid, Perturbation};
use physadv::maskgen::{coarse_reduce, fine_reduce, generate_mask_for, heatmap, objective_j, suffix_mask, MaskGenConfig};
use physadv::oracle::{ConstantOracle, HardLabelOracle, Label, OracleSession, Phase, QueryLedger};
use physadv::pipeline::{run_attack, AttackReport, RunArtifacts, RunConfig, RunHooks};
use physadv::survivability::{chernoff_bound, chernoff_bound_derived, LipschitzTrace, SurvivabilityEstimator};
use physadv::transforms::{TransformDistribution, TransformParams};

const IDENTITY_TOL: f64 = 1e-6;
const IDENTITY_LIMIT: Duration = Duration::from_secs(1);
const ESTIMATOR_LIMIT: Duration = Duration::from_secs(5);
const QUERY_BOUND_LIMIT: Duration = Duration::from_secs(30);
const INSTANCES: usize = 100;
const RGF_SEEDS: u64 = 200;
const RGF_MIN_COSINE: f64 = 0.2;
const DESK_MIN_SURVIVABILITY: f64 = 0.80;
const DESK_MAX_RATIO: f64 = 0.30;
const DESK_LIMIT: Duration = Duration::from_secs(300);
const HALFSPACE_REL_TOL: f64 = 0.05;
const PLANTED_TOL: f64 = 1e-3;
const CHERNOFF_REL_TOL: f64 = 1e-12;
const DESK_SEED: u64 = 0;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn c1_transform_identity() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dist = TransformDistribution::identity();
    let mut worst: f64 = 0.0;
    for &(w, h, c) in &[(16, 16, 1), (33, 20, 3), (64, 64, 3), (7, 31, 1)] {
        let img = random_image(&mut rng, w, h, c);
        let object = BinaryGrid::from_fn(w, h, |x, y| x > 0 && y > 0 && x + 1 < w && y + 1 < h);
        let mut params: Vec<TransformParams> = (0..8).map(|i| dist.draw(5, i, 0)).collect();
        params.push(TransformParams::identity());
        for p in params {
            let out = physadv::transforms::apply(&p, &img, &object).map_err(|e| e.to_string())?;
            for (a, b) in out.data().iter().zip(img.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let el = t0.elapsed();
    check(
        worst <= IDENTITY_TOL && el < IDENTITY_LIMIT,
        format!("max deviation {worst:.1e} in {el:.2?}"),
        format!("max deviation {worst:.1e} (tol {IDENTITY_TOL:.0e}), {el:.2?} (limit {IDENTITY_LIMIT:?})"),
    )
}

fn c2_estimator_matches_loop() -> Outcome {
    let t0 = Instant::now();
    let f = DeskFixture::default();
    let s = f.scenario().map_err(|e| e.to_string())?;
    let classifier: Arc<dyn HardLabelOracle> = Arc::new(s.classifier.clone());
    let est = SurvivabilityEstimator::new(s.victim.clone(), s.object.clone(), s.target_label, TransformDistribution::gtsrb())
        .map_err(|e| e.to_string())?;
    let mask = Mask::new(BinaryGrid::from_fn(32, 32, |x, y| y < 16 && s.object.get(x, y)), s.object.clone()).unwrap();
    let delta = s.target_example.difference(&s.victim).unwrap().resize_area(32, 32).unwrap();
    let composed = est.compose(&mask, &delta).unwrap();
    let mut details = Vec::new();
    for n in [1usize, 50, 100] {
        let session = OracleSession::unlimited(classifier.clone());
        let e = est.estimate(&mask, &delta, n, 77, &session, Phase::Direct).map_err(|e| e.to_string())?;
        let dist = TransformDistribution::gtsrb();
        let mut hits = 0usize;
        for i in 0..n {
            let t = dist.prepare_index(77, i as u64, 64, 64, &s.object).unwrap();
            if s.classifier.classify(&t.apply(&composed).unwrap()).unwrap() == s.target_label {
                hits += 1;
            }
        }
        let plain = hits as f64 / n as f64;
        if e.value != plain || e.queries_spent != n as u64 || session.ledger().total() != n as u64 {
            return Err(format!("n={n}: estimator {} vs loop {plain}, {} queries", e.value, e.queries_spent));
        }
        details.push(format!("n={n}: {plain:.2}"));
    }
    let el = t0.elapsed();
    check(el < ESTIMATOR_LIMIT, format!("{} in {el:.2?}", details.join(", ")), format!("took {el:.2?}"))
}

fn c3_query_bounds() -> Outcome {
    let t0 = Instant::now();
    let n = 10usize;
    let mut details = Vec::new();
    for side in [12usize, 32, 60] {
        let object = BinaryGrid::full(side, side);
        let grid = build_patch_grid(&object, 4, 4).unwrap();
        let k = grid.len();
        let scene = Image::filled(side, side, 1, 0.0).unwrap();
        let oracle = Arc::new(Brightness { region: (0..side * side).collect(), level: 0.45, reference: None, target: Label(1) });
        let est = SurvivabilityEstimator::new(scene, object.clone(), Label(1), TransformDistribution::gtsrb()).unwrap();
        let session = OracleSession::new(oracle, Arc::new(QueryLedger::new(None)));
        let delta = Perturbation::new(side, side, 1, vec![1.0; side * side]).unwrap();
        let cfg = MaskGenConfig { patch_size: 4, stride: 4, n, ..Default::default() };
        generate_mask_for(&est, &delta, &cfg, &session, 3).map_err(|e| e.to_string())?;
        let l = session.ledger().snapshot();
        let (h, c, f) = (l.phase(Phase::Heatmap), l.phase(Phase::Coarse), l.phase(Phase::Fine));
        let log2 = (k as f64).log2().ceil() as u64;
        let (kk, nn) = (k as u64, n as u64);
        if h != nn * (kk + 1) || c > nn * (log2 + 1) || f > nn * kk {
            return Err(format!("|P|={k}: heatmap {h}, coarse {c}, fine {f}"));
        }
        details.push(format!("|P|={k}: {h}/{c}/{f}"));
    }
    let el = t0.elapsed();
    check(el < QUERY_BOUND_LIMIT, format!("{} in {el:.2?}", details.join(", ")), format!("took {el:.2?}"))
}

/// A random monotone scorer: weighted coverage, scaled and clipped to 1.
fn monotone_scorer(rng: &mut ChaCha8Rng, pixels: usize) -> impl FnMut(&Mask, Phase) -> physadv::Result<f64> + Clone {
    let w: Vec<f64> = (0..pixels).map(|_| rng.random::<f64>().powi(3)).collect();
    let total: f64 = w.iter().sum();
    let scale = rng.random_range(1.0..3.0);
    move |m: &Mask, _| {
        let cov: f64 = m.bits().bits().iter().zip(&w).filter(|(b, _)| **b).map(|(_, x)| x).sum();
        Ok((cov / total * scale).min(1.0))
    }
}

fn random_grid(rng: &mut ChaCha8Rng) -> (BinaryGrid, PatchGrid) {
    let side = rng.random_range(6..20);
    let object = BinaryGrid::from_fn(side, side, |x, y| {
        let c = side as f64 / 2.0;
        ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt() <= c
    });
    let patch = rng.random_range(2..5);
    let stride = rng.random_range(1..=patch);
    let grid = build_patch_grid(&object, patch, stride).unwrap();
    (object, grid)
}

fn c4_coarse_is_linear_scan() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree = 0;
    for _ in 0..INSTANCES {
        let (object, grid) = random_grid(&mut rng);
        let mut scorer = monotone_scorer(&mut rng, object.width() * object.height());
        let threshold = rng.random_range(0.3..0.95);
        let hm = heatmap(&grid, &object, &mut scorer).unwrap();
        let c = coarse_reduce(&hm, &grid, &object, threshold, &mut scorer).unwrap();
        let order = hm.sorted_order();
        let mut scan = 1;
        for p in 1..=order.len() {
            if scorer(&suffix_mask(&grid, &order, p, &object), Phase::Coarse).unwrap() >= threshold {
                scan = p;
            }
        }
        if c.pivot == scan {
            agree += 1;
        }
    }
    check(agree == INSTANCES, format!("{agree}/{INSTANCES} pivots agree"), format!("only {agree}/{INSTANCES} pivots agree"))
}

fn c5_fine_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for i in 0..INSTANCES {
        let (object, grid) = random_grid(&mut rng);
        let mut base = monotone_scorer(&mut rng, object.width() * object.height());
        let jitter_seed: u64 = rng.random();
        // Non-monotone on purpose: a deterministic per-mask wobble.
        let mut scorer = move |m: &Mask, p: Phase| {
            let h = m.bits().bits().iter().enumerate().fold(jitter_seed, |a, (j, b)| if *b { a.rotate_left(5) ^ j as u64 } else { a });
            Ok((base(m, p)? + ((h % 1000) as f64 / 1000.0 - 0.5) * 0.1).clamp(0.0, 1.0))
        };
        let cfg = MaskGenConfig { lambda1: rng.random_range(0.05..1.0), ..Default::default() };
        let hm = heatmap(&grid, &object, &mut scorer).unwrap();
        let m0 = Mask::full(object.clone());
        let s0 = hm.baseline;
        let f = fine_reduce(&m0, s0, &hm, &grid, &cfg, &mut scorer).unwrap();
        if f.j_trace.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Less)) {
            return Err(format!("instance {i}: objective not strictly decreasing: {:?}", f.j_trace));
        }
        let j_final = cfg.lambda1 * f.mask.size() as f64 / object.count() as f64 + (1.0 - f.survivability);
        if s0 >= cfg.s_lo {
            checked += 1;
            if f.survivability < cfg.s_lo || (j_final - f.j_trace.last().unwrap()).abs() > 1e-12 {
                return Err(format!("instance {i}: final S {} below {} or J mismatch", f.survivability, cfg.s_lo));
            }
            if objective_j(&f.mask, f.survivability, &cfg) != *f.j_trace.last().unwrap() {
                return Err(format!("instance {i}: objective disagrees"));
            }
        }
    }
    check(checked > 0, format!("{INSTANCES} instances, {checked} started above s_lo"), "no instance started above s_lo".into())
}

fn c6_rgf_direction() -> Outcome {
    let side = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut w: Vec<f64> = gaussian_vec(&mut rng, side * side).into_iter().map(|v| v + 0.3).collect();
    if w.iter().sum::<f64>() < 0.0 {
        w.iter_mut().for_each(|v| *v = -*v);
    }
    let c = 0.5 * w.iter().sum::<f64>();
    let oracle: Arc<dyn HardLabelOracle> = Arc::new(Halfspace { w: w.clone(), c, target: Label(1), other: Label(0) });
    let dist = TransformDistribution { gamma_max: 3.5, ..TransformDistribution::identity() };
    let object = BinaryGrid::full(side, side);
    let est = SurvivabilityEstimator::new(Image::filled(side, side, 1, 0.5).unwrap(), object.clone(), Label(1), dist).unwrap();
    let mask = Mask::full(object);
    let cfg = BoostConfig { q: 10, n: 100, beta: 1.0, ..Default::default() };
    let zero = Perturbation::zeros(side, side, 1);
    let session = OracleSession::unlimited(oracle);
    let mut total = 0.0;
    for s in 0..RGF_SEEDS {
        let g = rgf_gradient(&est, &mask, &zero, &cfg, s, &session, &mut LipschitzTrace::default()).map_err(|e| e.to_string())?;
        total += if g.g_hat.is_zero() { 0.0 } else { cosine(g.g_hat.data(), &w) };
    }
    let mean = total / RGF_SEEDS as f64;
    for label in [Label(1), Label(0)] {
        let constant = OracleSession::unlimited(Arc::new(ConstantOracle(label)));
        let g = rgf_gradient(&est, &mask, &zero, &cfg, 1, &constant, &mut LipschitzTrace::default()).unwrap();
        if g.g_hat.data().iter().any(|v| *v != 0.0) {
            return Err(format!("constant oracle {label:?} gave a nonzero estimate"));
        }
    }
    check(
        mean > RGF_MIN_COSINE,
        format!("mean cosine {mean:.3} over {RGF_SEEDS} seeds; constant oracles give exactly 0"),
        format!("mean cosine {mean:.3} <= {RGF_MIN_COSINE}"),
    )
}

fn desk_run() -> physadv::Result<(RunArtifacts, Duration)> {
    let cfg = RunConfig { run: physadv::pipeline::config::RunSection { seed: DESK_SEED, ..Default::default() }, ..Default::default() };
    let base = std::path::Path::new(".");
    let t0 = Instant::now();
    let a = run_attack(&cfg.instance(base)?, &cfg, cfg.oracle(base)?, &RunHooks::default())?;
    Ok((a, t0.elapsed()))
}

fn c7_desk(run: &physadv::Result<(RunArtifacts, Duration)>) -> Outcome {
    let (a, el) = run.as_ref().map_err(|e| e.to_string())?;
    let r = &a.report;
    let s = r.survivability.final_holdout;
    check(
        s >= DESK_MIN_SURVIVABILITY && r.mask_ratio <= DESK_MAX_RATIO && *el < DESK_LIMIT,
        format!("held-out S {s:.3} (n={}), mask ratio {:.3}, {} queries, {el:.1?}", r.survivability.holdout_n, r.mask_ratio, r.ledger.total),
        format!("held-out S {s:.3} (min {DESK_MIN_SURVIVABILITY}), ratio {:.3} (max {DESK_MAX_RATIO}), {el:.1?}", r.mask_ratio),
    )
}

fn c8_halfspace() -> Outcome {
    let side = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = gaussian_vec(&mut rng, side * side);
    let x = Image::filled(side, side, 1, 0.5).unwrap();
    let dist_true = 0.4;
    let wn = norm(&w);
    let c = w.iter().sum::<f64>() * 0.5 + dist_true * wn;
    let oracle: Arc<dyn HardLabelOracle> = Arc::new(Halfspace { w: w.clone(), c, target: Label(1), other: Label(0) });
    let noise = gaussian_vec(&mut rng, side * side);
    let nn = norm(&noise);
    let dir: Vec<f64> = w.iter().zip(&noise).map(|(a, b)| a / wn + 1.5 * b / nn).collect();
    let dn = norm(&dir);
    let x_tar = Image::new(side, side, 1, dir.iter().map(|d| 0.5 + 0.3 * d / dn).collect()).unwrap();
    let mask = Mask::full(BinaryGrid::full(side, side));
    let session = OracleSession::unlimited(oracle.clone());
    let cfg = OptConfig { max_epochs: 400, seed: 8, ..Default::default() };
    let (_, out) = opt_attack(&x, &x_tar, &mask, Label(1), &session, &cfg).map_err(|e| e.to_string())?;
    let g0 = out.g_trace[0];
    let rel = (out.state.g_val - dist_true).abs() / dist_true;

    let planted = [0.37, 3.3, 17.1, 0.0042];
    let mut worst: f64 = 0.0;
    for t in planted {
        let b = boundary_search(|l| Ok(l >= t), 1.0, PLANTED_TOL).map_err(|e| e.to_string())?;
        if b.hi < t {
            return Err(format!("bracket upper end {} below planted {t}", b.hi));
        }
        worst = worst.max((b.hi - t).abs());
    }
    let along = Perturbation::new(side, side, 1, w.clone()).unwrap();
    let d = boundary_distance(&x, &along, Label(1), &OracleSession::unlimited(oracle), PLANTED_TOL).map_err(|e| e.to_string())?;
    worst = worst.max((d - dist_true).abs());
    check(
        rel <= HALFSPACE_REL_TOL && worst <= PLANTED_TOL,
        format!("distance {:.4} vs analytic {dist_true} (from {g0:.3}, rel err {rel:.3}); planted error {worst:.1e}", out.state.g_val),
        format!("distance {:.4} vs {dist_true} (rel {rel:.3}, tol {HALFSPACE_REL_TOL}); planted error {worst:.1e} (tol {PLANTED_TOL:.0e})", out.state.g_val),
    )
}

/// A dark masked region that the target content brightens, under gamma-only transforms.
fn schedule_setup(reference: bool) -> (SurvivabilityEstimator, Image, Mask, Arc<dyn HardLabelOracle>) {
    let side = 8;
    let object = BinaryGrid::full(side, side);
    let region = BinaryGrid::from_fn(side, side, |x, y| x < 4 && y < 4);
    let scene = Image::from_fn(side, side, 1, |x, y, _| if x == 7 && y == 7 { 0.5 } else { 0.2 }).unwrap();
    let x_tar = Image::from_fn(side, side, 1, |x, y, _| if region.get(x, y) { 1.0 } else { scene.get(x, y, 0) }).unwrap();
    let dist = TransformDistribution { gamma_max: 3.5, ..TransformDistribution::identity() };
    let reference = reference.then_some((7 * side + 7, 0.5f64.powf(1.25)));
    let oracle: Arc<dyn HardLabelOracle> = Arc::new(Brightness {
        region: (0..side * side).filter(|i| region.bits()[*i]).collect(),
        level: 0.6,
        reference,
        target: Label(1),
    });
    let est = SurvivabilityEstimator::new(scene, object.clone(), Label(1), dist).unwrap();
    (est, x_tar, Mask::new(region, object).unwrap(), oracle)
}

fn c9_schedule() -> Outcome {
    let cfg = ScheduleConfig {
        opt: OptConfig { max_epochs: 0, ..Default::default() },
        wrapper_n: 40,
        wrapper_seed: 9,
        epochs_per_step: 2,
        step_pct: 5,
        holdout_n: 200,
        holdout_seed: 10,
    };
    let (est, x_tar, mask, oracle) = schedule_setup(false);
    let inner = OracleSession::unlimited(oracle);
    let rep = threshold_schedule_run(&est, &x_tar, &mask, 70, &cfg, &inner).map_err(|e| e.to_string())?;
    let pcts: Vec<u32> = rep.trace.iter().map(|s| s.threshold_pct).collect();
    let want: Vec<u32> = (70..=100).step_by(5).collect();
    let epochs_ok = rep.trace.iter().enumerate().all(|(i, s)| s.epoch == i * cfg.epochs_per_step);
    let inner_sum: u64 = rep.per_threshold.iter().map(|t| t.inner).sum();
    let outer_sum: u64 = rep.per_threshold.iter().map(|t| t.outer).sum();
    let wrapper_exact = rep.inner.phase(Phase::WrapperInner) == rep.outer.total * cfg.wrapper_n as u64;
    if rep.status != ScheduleStatus::Completed
        || pcts != want
        || !epochs_ok
        || inner_sum != rep.inner.phase(Phase::WrapperInner)
        || outer_sum != rep.outer.total
        || !wrapper_exact
        || rep.inner.phase(Phase::Holdout) != 0
        || rep.final_robustness.is_none()
    {
        return Err(format!("schedule structure broken: status {:?}, thresholds {pcts:?}", rep.status));
    }

    // Capped oracle: the reference pixel survives only gamma < 1.25.
    let (est, x_tar, mask, oracle) = schedule_setup(true);
    let capped_cfg = ScheduleConfig { wrapper_n: 200, ..cfg.clone() };
    let ts = est.distribution().prepare_set(capped_cfg.wrapper_seed, capped_cfg.wrapper_n, 8, 8, est.object()).unwrap();
    let ceiling = ts.iter().filter(|t| t.params().gamma < 1.25).count();
    let expected = (40..=100).step_by(5).find(|p| (*p as usize) * capped_cfg.wrapper_n > ceiling * 100).unwrap();
    let inner = OracleSession::unlimited(oracle);
    let rep = threshold_schedule_run(&est, &x_tar, &mask, 40, &capped_cfg, &inner).map_err(|e| e.to_string())?;
    check(
        rep.status == (ScheduleStatus::ThresholdUnreachable { threshold_pct: expected as u32 }),
        format!(
            "thresholds {pcts:?} every {} epochs, wrapper cost exact; capped oracle (ceiling {ceiling}/{}) stops at {expected}%",
            cfg.epochs_per_step, capped_cfg.wrapper_n
        ),
        format!("capped oracle: status {:?}, expected unreachable at {expected}%", rep.status),
    )
}

fn c10_chernoff() -> Outcome {
    let mut worst: f64 = 0.0;
    for &n in &[1usize, 10, 100, 1000] {
        for &q in &[0.1, 0.5, 0.9, 1.0] {
            for &eps in &[0.01, 0.05, 0.1, 0.3] {
                let direct = (2.0 * f64::exp(-(n as f64) * q * q * q / (3.0 * eps * eps))).min(1.0);
                let derived = (2.0 * f64::exp(-(n as f64) * eps * eps / (3.0 * q))).min(1.0);
                for (got, want) in [(chernoff_bound(n, q, eps).unwrap(), direct), (chernoff_bound_derived(n, q, eps).unwrap(), derived)] {
                    let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
                    worst = worst.max(rel);
                }
            }
        }
    }
    let mut monotone = true;
    for &(q, eps) in &[(0.5, 0.1), (0.9, 0.05), (0.2, 0.3)] {
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for n in 1..2000 {
            let cur = (chernoff_bound(n, q, eps).unwrap(), chernoff_bound_derived(n, q, eps).unwrap());
            monotone &= cur.0 <= prev.0 && cur.1 <= prev.1;
            prev = cur;
        }
    }
    check(
        worst <= CHERNOFF_REL_TOL && monotone,
        format!("max relative error {worst:.1e}, non-increasing in n"),
        format!("max relative error {worst:.1e} (tol {CHERNOFF_REL_TOL:.0e}), monotone {monotone}"),
    )
}

fn c11_lipschitz(run: &physadv::Result<(RunArtifacts, Duration)>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut trace = LipschitzTrace::default();
    let mut brute: f64 = 0.0;
    for _ in 0..500 {
        let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
        let step = gaussian_vec(&mut rng, 12);
        trace.record(a, b, &step).unwrap();
        brute = brute.max((a - b).abs() / norm(&step));
    }
    if trace.max != brute {
        return Err(format!("tracked max {} vs brute force {brute}", trace.max));
    }
    let (a, _) = run.as_ref().map_err(|e| e.to_string())?;
    let r = &a.report;
    let m = r.lipschitz_max.ok_or("no Lipschitz samples in the desk run")?;
    let scan = r.lipschitz.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let expected = r.boost_iterations as usize * BoostConfig::default().q;
    check(
        m.is_finite() && m == scan && r.lipschitz.samples.len() == expected,
        format!("synthetic max matches brute force; desk run max {m:.4} over {} samples", r.lipschitz.samples.len()),
        format!("desk run max {m} vs scan {scan}, {} samples (expected {expected})", r.lipschitz.samples.len()),
    )
}

fn c12_deterministic(first: &physadv::Result<(RunArtifacts, Duration)>) -> Outcome {
    let (a, _) = first.as_ref().map_err(|e| e.to_string())?;
    let (b, _) = desk_run().map_err(|e| e.to_string())?;
    let ja = a.report.canonical_json().map_err(|e| e.to_string())?;
    let jb = b.report.canonical_json().map_err(|e| e.to_string())?;
    let back: AttackReport = serde_json::from_slice(&ja).map_err(|e| e.to_string())?;
    check(
        ja == jb && a.adversarial == b.adversarial && back.canonical_json().unwrap() == ja,
        format!("{} report bytes identical across runs", ja.len()),
        "reports differ between identical runs".into(),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, r: Outcome| {
        match &r {
            Ok(msg) => println!("PASS  criterion {id:>2}  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {id:>2}  {name}: {msg}");
            }
        }
    };
    report(1, "transform identity", c1_transform_identity());
    report(2, "estimator equals plain loop", c2_estimator_matches_loop());
    report(3, "mask generation query bounds", c3_query_bounds());
    report(4, "coarse pivot equals linear scan", c4_coarse_is_linear_scan());
    report(5, "fine reduction monotone objective", c5_fine_monotone());
    report(6, "gradient estimate direction", c6_rgf_direction());
    let desk = desk_run();
    report(7, "desk end-to-end", c7_desk(&desk));
    report(8, "halfspace boundary distance", c8_halfspace());
    report(9, "threshold schedule", c9_schedule());
    report(10, "Chernoff bound", c10_chernoff());
    report(11, "Lipschitz tracking", c11_lipschitz(&desk));
    report(12, "deterministic reports", c12_deterministic(&desk));
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
