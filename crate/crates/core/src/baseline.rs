//! Boundary-distance baseline, the survivability-wrapped oracle and the threshold schedule.
//!
//! The baseline searches for a direction `phi` (unit norm, supported on
//! the mask) that minimizes `g(phi)`, the smallest scale at which
//! `x + g * phi` is classified as the target. `g` is found by bracketing
//! and bisection; `phi` is updated with a randomized gradient-free
//! estimate and a backtracking line search. One such update is an epoch.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boost::random_direction;
use crate::error::{Error, Result};
use crate::imaging::{apply_perturbation, BinaryGrid, Image, Mask, Perturbation};
use crate::oracle::{Concurrency, HardLabelOracle, Label, LedgerSnapshot, OracleSession, Phase, QueryLedger};
use crate::seed::{self, stream};
use crate::survivability::SurvivabilityEstimator;
use crate::transforms::{PreparedTransform, TransformDistribution};

/// Expansion cap for the initial bracket, as a power of two of the initial guess.
pub const EXPANSION_DOUBLINGS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    /// Non-adversarial scale.
    pub lo: f64,
    /// Adversarial scale; this is the reported distance.
    pub hi: f64,
    pub probes: u64,
}

/// Brackets and bisects the adversarial scale along a ray.
///
/// `adv(lambda)` answers whether the point at scale `lambda` is adversarial.
/// Scale zero is probed first. The upper end doubles from `initial` at most
/// [`EXPANSION_DOUBLINGS`] times.
pub fn boundary_search(mut adv: impl FnMut(f64) -> Result<bool>, initial: f64, tol: f64) -> Result<Bracket> {
    if !(initial > 0.0 && tol > 0.0) {
        return Err(Error::invalid("initial scale and tolerance must be positive"));
    }
    let mut probes = 1;
    if adv(0.0)? {
        return Ok(Bracket { lo: 0.0, hi: 0.0, probes });
    }
    let (mut lo, mut hi) = (0.0, initial);
    loop {
        probes += 1;
        if adv(hi)? {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > initial * 2f64.powi(EXPANSION_DOUBLINGS as i32) {
            return Err(Error::InitializationFailure(format!(
                "no adversarial scale up to {}",
                initial * 2f64.powi(EXPANSION_DOUBLINGS as i32)
            )));
        }
    }
    bisect(&mut adv, lo, hi, tol, probes)
}

fn bisect(adv: &mut impl FnMut(f64) -> Result<bool>, mut lo: f64, mut hi: f64, tol: f64, mut probes: u64) -> Result<Bracket> {
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        if adv(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Bracket { lo, hi, probes })
}

/// Bracket search started from a guess, shrinking or growing it by 10% steps.
/// Fails when no adversarial scale is found below `cap`.
pub fn local_boundary_search(mut adv: impl FnMut(f64) -> Result<bool>, guess: f64, tol: f64, cap: f64) -> Result<Bracket> {
    if !(guess > 0.0) {
        return boundary_search(adv, tol.max(1e-3), tol);
    }
    let mut probes = 1;
    let (lo, hi) = if adv(guess)? {
        let (mut lo, mut hi) = (guess * 0.9, guess);
        loop {
            if lo < tol {
                break (0.0, hi);
            }
            probes += 1;
            if !adv(lo)? {
                break (lo, hi);
            }
            hi = lo;
            lo *= 0.9;
        }
    } else {
        let (mut lo, mut hi) = (guess, guess * 1.1);
        loop {
            if hi > cap {
                return Err(Error::InitializationFailure(format!("no adversarial scale below {cap}")));
            }
            probes += 1;
            if adv(hi)? {
                break (lo, hi);
            }
            lo = hi;
            hi *= 1.1;
        }
    };
    bisect(&mut adv, lo, hi, tol, probes)
}

/// Is `x + M * lambda * phi` classified as the target?
struct Ray<'a> {
    x: &'a Image,
    mask: &'a Mask,
    target: Label,
    session: &'a OracleSession,
}

impl Ray<'_> {
    fn point(&self, phi: &Perturbation, lambda: f64) -> Result<Image> {
        apply_perturbation(self.x, self.mask, &Perturbation::zeros(phi.width(), phi.height(), phi.channels()).add_scaled(phi, lambda))
    }

    fn adv(&self, phi: &Perturbation, lambda: f64) -> Result<bool> {
        Ok(self.session.query(&self.point(phi, lambda)?, Phase::Baseline)? == self.target)
    }
}

fn unit(phi: &Perturbation, mask: &Mask) -> Result<Perturbation> {
    let g = phi.gated(mask);
    let n = g.norm();
    if n == 0.0 {
        return Err(Error::InitializationFailure("direction has no support on the mask".into()));
    }
    Ok(g.add_scaled(&g, 1.0 / n - 1.0))
}

/// Boundary distance along `phi` from `x` with full support.
pub fn boundary_distance(x: &Image, phi: &Perturbation, y_adv: Label, session: &OracleSession, tol: f64) -> Result<f64> {
    let mask = Mask::full(BinaryGrid::full(phi.width(), phi.height()));
    let phi = unit(phi, &mask)?;
    let ray = Ray { x, mask: &mask, target: y_adv, session };
    Ok(boundary_search(|l| ray.adv(&phi, l), 1.0, tol)?.hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    /// Probe radius on the unit direction.
    pub beta: f64,
    pub eta: f64,
    pub q: usize,
    pub k_max: u32,
    /// Boundary search tolerance. Must stay well below the change in `g`
    /// a `beta` probe causes, or the finite differences are noise.
    pub tol: f64,
    pub initial_scale: f64,
    pub max_epochs: usize,
    /// Outer queries available after initialization; `None` is unlimited.
    pub query_budget: Option<u64>,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            eta: 0.5,
            q: 10,
            k_max: 8,
            tol: 1e-5,
            initial_scale: 1.0,
            max_epochs: 100,
            query_budget: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionState {
    /// Unit norm, supported on the mask.
    pub phi: Perturbation,
    pub g_val: f64,
    pub queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptOutcome {
    pub state: DirectionState,
    /// `g` after initialization and after every accepted epoch.
    pub g_trace: Vec<f64>,
    pub epochs: usize,
}

/// A boundary-distance optimizer over one ray family `x + M * lambda * phi`.
pub struct OptAttack<'a> {
    ray: Ray<'a>,
    cfg: OptConfig,
}

impl<'a> OptAttack<'a> {
    pub fn new(x: &'a Image, mask: &'a Mask, target: Label, session: &'a OracleSession, cfg: OptConfig) -> Self {
        Self { ray: Ray { x, mask, target, session }, cfg }
    }

    fn spent(&self) -> u64 {
        self.ray.session.ledger().phase(Phase::Baseline)
    }

    /// Full bracket search along `phi`.
    pub fn init(&self, phi: &Perturbation) -> Result<DirectionState> {
        let phi = unit(phi, self.ray.mask)?;
        let b = boundary_search(|l| self.ray.adv(&phi, l), self.cfg.initial_scale, self.cfg.tol)?;
        Ok(DirectionState { phi, g_val: b.hi, queries: b.probes })
    }

    fn g_local(&self, phi: &Perturbation, guess: f64) -> Result<(f64, u64)> {
        let cap = self.cfg.initial_scale * 2f64.powi(EXPANSION_DOUBLINGS as i32);
        let b = local_boundary_search(|l| self.ray.adv(phi, l), guess, self.cfg.tol, cap)?;
        Ok((b.hi, b.probes))
    }

    /// One gradient estimate plus backtracking line search. Only strict
    /// improvements of `g` are accepted. Returns whether `state` changed.
    pub fn epoch(&self, state: &mut DirectionState, epoch_seed: u64) -> Result<bool> {
        let mask = self.ray.mask;
        let mut grad = Perturbation::zeros(state.phi.width(), state.phi.height(), state.phi.channels());
        let mut used = 0usize;
        for i in 0..self.cfg.q {
            let u = random_direction(mask, state.phi.channels(), seed::derive2(epoch_seed, stream::DIRECTIONS, i as u64));
            let Ok(probe) = unit(&state.phi.add_scaled(&u, self.cfg.beta), mask) else { continue };
            match self.g_local(&probe, state.g_val) {
                Ok((g, probes)) => {
                    state.queries += probes;
                    grad = grad.add_scaled(&u, (g - state.g_val) / self.cfg.beta);
                    used += 1;
                }
                Err(Error::InitializationFailure(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if used == 0 || grad.is_zero() {
            return Ok(false);
        }
        let grad = grad.add_scaled(&grad, 1.0 / used as f64 - 1.0);
        let mut step = self.cfg.eta;
        for _ in 0..=self.cfg.k_max {
            if let Ok(cand) = unit(&state.phi.add_scaled(&grad, -step), mask) {
                match self.g_local(&cand, state.g_val) {
                    Ok((g, probes)) => {
                        state.queries += probes;
                        if g < state.g_val {
                            state.phi = cand;
                            state.g_val = g;
                            return Ok(true);
                        }
                    }
                    Err(Error::InitializationFailure(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            step /= 2.0;
        }
        Ok(false)
    }

    /// Runs epochs from `state` until the epoch or query allowance runs out.
    pub fn run(&self, mut state: DirectionState) -> Result<OptOutcome> {
        let start = self.spent();
        let mut g_trace = vec![state.g_val];
        let mut epochs = 0;
        while epochs < self.cfg.max_epochs {
            if self.cfg.query_budget.is_some_and(|b| self.spent() - start >= b) {
                break;
            }
            if self.epoch(&mut state, seed::derive2(self.cfg.seed, stream::BASELINE, epochs as u64))? {
                g_trace.push(state.g_val);
            }
            epochs += 1;
        }
        Ok(OptOutcome { state, g_trace, epochs })
    }

    pub fn boundary_point(&self, state: &DirectionState) -> Result<Image> {
        self.ray.point(&state.phi, state.g_val)
    }
}

/// Boundary-distance attack initialized from the target example direction.
pub fn opt_attack(
    x: &Image,
    x_tar: &Image,
    mask: &Mask,
    y_adv: Label,
    session: &OracleSession,
    cfg: &OptConfig,
) -> Result<(Image, OptOutcome)> {
    let phi0 = x_tar.difference(x)?.resize_area(mask.width(), mask.height())?;
    let opt = OptAttack::new(x, mask, y_adv, session, cfg.clone());
    let out = opt.run(opt.init(&phi0)?)?;
    Ok((opt.boundary_point(&out.state)?, out))
}

/// Answers the modal label over `n` fixed transforms when its frequency
/// reaches the threshold, and [`Label::REJECT`] otherwise.
///
/// Every outer query costs exactly `n` inner queries, charged to the inner
/// session's ledger under [`Phase::WrapperInner`].
pub struct WrappedOracle {
    inner: OracleSession,
    transforms: Arc<Vec<PreparedTransform>>,
    threshold_pct: u32,
}

impl WrappedOracle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        inner: OracleSession,
        dist: &TransformDistribution,
        n: usize,
        threshold_pct: u32,
        seed: u64,
        width: usize,
        height: usize,
        object: &BinaryGrid,
    ) -> Result<Self> {
        if n == 0 || threshold_pct > 100 {
            return Err(Error::invalid("wrapper needs n >= 1 and a threshold in 0..=100"));
        }
        let transforms = Arc::new(dist.prepare_set(seed, n, width, height, object)?);
        Ok(Self { inner, transforms, threshold_pct })
    }

    /// Same inner session and transforms, new threshold.
    pub fn rewrap(&self, threshold_pct: u32) -> Self {
        Self { inner: self.inner.clone(), transforms: self.transforms.clone(), threshold_pct }
    }

    pub fn threshold_pct(&self) -> u32 {
        self.threshold_pct
    }

    pub fn inner(&self) -> &OracleSession {
        &self.inner
    }

    /// Modal label and its count over the fixed transforms.
    pub fn modal(&self, img: &Image) -> Result<(Label, usize)> {
        let n = self.transforms.len();
        let batch = self.inner.query_batch(n, |i| self.transforms[i].apply(img), Phase::WrapperInner)?;
        if batch.exhausted {
            return Err(self.inner.ledger().exceeded());
        }
        let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
        for l in batch.labels {
            *counts.entry(l).or_default() += 1;
        }
        Ok(counts.into_iter().fold((Label::REJECT, 0), |best, (l, c)| if c > best.1 { (l, c) } else { best }))
    }
}

impl HardLabelOracle for WrappedOracle {
    fn classify(&self, img: &Image) -> Result<Label> {
        let (label, count) = self.modal(img)?;
        let n = self.transforms.len();
        Ok(if count * 100 >= self.threshold_pct as usize * n { label } else { Label::REJECT })
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub opt: OptConfig,
    /// Transforms per wrapped query.
    pub wrapper_n: usize,
    pub wrapper_seed: u64,
    pub epochs_per_step: usize,
    pub step_pct: u32,
    /// Held-out transforms for the final robustness figure.
    pub holdout_n: usize,
    pub holdout_seed: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            opt: OptConfig::default(),
            wrapper_n: 100,
            wrapper_seed: 0,
            epochs_per_step: 5,
            step_pct: 5,
            holdout_n: 1000,
            holdout_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum ScheduleStatus {
    Completed,
    ThresholdUnreachable { threshold_pct: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub epoch: usize,
    pub threshold_pct: u32,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQueries {
    pub threshold_pct: u32,
    pub outer: u64,
    pub inner: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub start_pct: u32,
    pub status: ScheduleStatus,
    /// One entry per epoch boundary at which a threshold took effect.
    pub trace: Vec<ScheduleStep>,
    pub per_threshold: Vec<ThresholdQueries>,
    pub final_g: Option<f64>,
    /// Held-out survivability of the final boundary point, measured on a separate ledger.
    pub final_robustness: Option<f64>,
    pub outer: LedgerSnapshot,
    pub inner: LedgerSnapshot,
}

impl ScheduleReport {
    pub fn total_queries(&self) -> u64 {
        self.inner.phase(Phase::WrapperInner)
    }
}

/// The boundary-distance attack against the wrapped oracle with a rising threshold.
///
/// The threshold starts at `start_pct` and rises by `step_pct` after every
/// `epochs_per_step` epochs, until a block at 100% has run. At each raise
/// the boundary is searched again; if none exists the run stops with
/// [`ScheduleStatus::ThresholdUnreachable`].
pub fn threshold_schedule_run(
    estimator: &SurvivabilityEstimator,
    x_tar: &Image,
    mask: &Mask,
    start_pct: u32,
    cfg: &ScheduleConfig,
    inner: &OracleSession,
) -> Result<ScheduleReport> {
    if start_pct > 100 || cfg.step_pct == 0 || cfg.epochs_per_step == 0 {
        return Err(Error::invalid("bad threshold schedule"));
    }
    let x = estimator.scene();
    let outer_ledger = Arc::new(QueryLedger::new(None));
    let base = WrappedOracle::new(
        inner.clone(),
        estimator.distribution(),
        cfg.wrapper_n,
        start_pct,
        cfg.wrapper_seed,
        x.width(),
        x.height(),
        estimator.object(),
    )?;
    let phi0 = x_tar.difference(x)?.resize_area(mask.width(), mask.height())?;
    let target = estimator.target();

    let mut pct = start_pct;
    let mut trace = Vec::new();
    let mut per_threshold = Vec::new();
    let mut state: Option<DirectionState> = None;
    let mut phi = phi0;
    let mut epoch = 0usize;
    let mut status = ScheduleStatus::Completed;
    loop {
        let (outer0, inner0) = (outer_ledger.total(), inner.ledger().phase(Phase::WrapperInner));
        let session = OracleSession::new(Arc::new(base.rewrap(pct)), outer_ledger.clone());
        let opt_cfg = OptConfig { max_epochs: cfg.epochs_per_step, seed: seed::derive(cfg.opt.seed, pct as u64), ..cfg.opt.clone() };
        let opt = OptAttack::new(x, mask, target, &session, opt_cfg);
        let init = match opt.init(&phi) {
            Ok(s) => s,
            Err(Error::InitializationFailure(_)) => {
                per_threshold.push(ThresholdQueries {
                    threshold_pct: pct,
                    outer: outer_ledger.total() - outer0,
                    inner: inner.ledger().phase(Phase::WrapperInner) - inner0,
                });
                status = ScheduleStatus::ThresholdUnreachable { threshold_pct: pct };
                break;
            }
            Err(e) => return Err(e),
        };
        trace.push(ScheduleStep { epoch, threshold_pct: pct, g: init.g_val });
        let out = opt.run(init)?;
        epoch += out.epochs;
        phi = out.state.phi.clone();
        state = Some(out.state);
        per_threshold.push(ThresholdQueries {
            threshold_pct: pct,
            outer: outer_ledger.total() - outer0,
            inner: inner.ledger().phase(Phase::WrapperInner) - inner0,
        });
        if pct >= 100 {
            break;
        }
        pct = (pct + cfg.step_pct).min(100);
    }

    let (final_g, final_robustness) = match &state {
        Some(s) => {
            let point = apply_perturbation(x, mask, &Perturbation::zeros(s.phi.width(), s.phi.height(), s.phi.channels()).add_scaled(&s.phi, s.g_val))?;
            let holdout = inner.with_ledger(Arc::new(QueryLedger::new(None)));
            let est = estimator.estimate_image(&point, cfg.holdout_n, cfg.holdout_seed, &holdout, Phase::Holdout)?;
            (Some(s.g_val), Some(est.value))
        }
        None => (None, None),
    };
    Ok(ScheduleReport {
        start_pct,
        status,
        trace,
        per_threshold,
        final_g,
        final_robustness,
        outer: outer_ledger.snapshot(),
        inner: inner.ledger().snapshot(),
    })
}

/// One row of the efficiency comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub algorithm: String,
    pub initial_threshold: Option<u32>,
    pub final_robustness: Option<f64>,
    pub queries: u64,
}
