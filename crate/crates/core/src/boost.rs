//! Survivability ascent inside a fixed mask with a randomized gradient-free estimator.
//!
//! Each iteration draws a fresh transform seed. The base estimate, the `q`
//! probe estimates and any line-search trials of that iteration all share
//! it, so their differences are paired.

use std::path::{Path, PathBuf};
use std::sync::mpsc::Sender;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Partial, Result};
use crate::imaging::{Image, Mask, Perturbation};
use crate::oracle::{LedgerSnapshot, OracleSession, Phase};
use crate::seed::{self, stream};
use crate::survivability::{LipschitzTrace, SurvivabilityEstimate, SurvivabilityEstimator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    /// Probe radius.
    pub beta: f64,
    /// Step size.
    pub eta: f64,
    /// Directions per gradient estimate.
    pub q: usize,
    /// Transforms per survivability estimate.
    pub n: usize,
    /// Queries this stage may spend.
    pub budget: u64,
    pub line_search: bool,
    /// Maximum number of step halvings in the line search.
    pub k_max: u32,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self { beta: 1.0, eta: 500.0, q: 10, n: 100, budget: 20_000, line_search: false, k_max: 8, seed: 0 }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta must be positive"));
        }
        if self.q == 0 || self.n == 0 {
            return Err(Error::invalid("q and n must be >= 1"));
        }
        Ok(())
    }

    /// Queries one gradient estimate costs.
    pub fn iteration_cost(&self) -> u64 {
        ((self.q + 1) * self.n) as u64
    }
}

/// Unit-norm Gaussian direction supported on the mask.
pub fn random_direction(mask: &Mask, channels: usize, seed: u64) -> Perturbation {
    let mut rng = seed::rng(seed);
    let mut d = Perturbation::zeros(mask.width(), mask.height(), channels);
    let bits = mask.bits().bits();
    for (i, chunk) in d.data_mut().chunks_mut(channels).enumerate() {
        if bits[i] {
            for v in chunk {
                *v = StandardNormal.sample(&mut rng);
            }
        }
    }
    let norm = d.norm();
    if norm > 0.0 {
        d.data_mut().iter_mut().for_each(|v| *v /= norm);
    }
    d
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub g_hat: Perturbation,
    pub base: SurvivabilityEstimate,
    pub probes: Vec<f64>,
    pub queries: u64,
}

/// `g = (1/q) sum_i (S(d + beta u_i) - S(d)) / beta * u_i`.
///
/// With an empty mask only the base estimate is spent and `g = 0`.
#[allow(clippy::too_many_arguments)]
pub fn rgf_gradient(
    estimator: &SurvivabilityEstimator,
    mask: &Mask,
    delta: &Perturbation,
    cfg: &BoostConfig,
    iter_seed: u64,
    session: &OracleSession,
    trace: &mut LipschitzTrace,
) -> Result<GradientEstimate> {
    let base = estimator.estimate(mask, delta, cfg.n, iter_seed, session, Phase::Boost)?;
    let mut g = Perturbation::zeros(delta.width(), delta.height(), delta.channels());
    if mask.size() == 0 {
        return Ok(GradientEstimate { g_hat: g, queries: base.queries_spent, base, probes: Vec::new() });
    }
    let mut probes = Vec::with_capacity(cfg.q);
    for i in 0..cfg.q {
        let u = random_direction(mask, delta.channels(), seed::derive2(iter_seed, stream::DIRECTIONS, i as u64));
        let s = estimator.estimate(mask, &delta.add_scaled(&u, cfg.beta), cfg.n, iter_seed, session, Phase::Boost)?;
        trace.record_norm(s.value, base.value, cfg.beta)?;
        let coef = (s.value - base.value) / cfg.beta / cfg.q as f64;
        if coef != 0.0 {
            g = g.add_scaled(&u, coef);
        }
        probes.push(s.value);
    }
    let queries = base.queries_spent * (cfg.q as u64 + 1);
    Ok(GradientEstimate { g_hat: g, base, probes, queries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchOutcome {
    pub step: f64,
    /// Survivability of the accepted point, when it was evaluated.
    pub survivability: Option<f64>,
    pub trials: u32,
}

/// Backtracking from `eta`: accept the first halving whose paired estimate is
/// at least `s_base`, else the smallest step tried. Stops early when fewer
/// than `n` queries of `allowance` remain.
#[allow(clippy::too_many_arguments)]
pub fn line_search_step(
    estimator: &SurvivabilityEstimator,
    mask: &Mask,
    delta: &Perturbation,
    direction: &Perturbation,
    s_base: f64,
    x_plane: &Image,
    cfg: &BoostConfig,
    iter_seed: u64,
    session: &OracleSession,
    allowance: u64,
) -> Result<LineSearchOutcome> {
    let mut last = LineSearchOutcome { step: cfg.eta, survivability: None, trials: 0 };
    for k in 0..=cfg.k_max {
        if (last.trials as u64 + 1) * cfg.n as u64 > allowance {
            break;
        }
        let step = cfg.eta / 2f64.powi(k as i32);
        let cand = delta.add_scaled(direction, step).clamp_feasible(x_plane, mask);
        let s = estimator.estimate(mask, &cand, cfg.n, iter_seed, session, Phase::LineSearch)?.value;
        last = LineSearchOutcome { step, survivability: Some(s), trials: last.trials + 1 };
        if s >= s_base {
            break;
        }
    }
    Ok(last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: u64,
    pub seed: u64,
    pub s_base: f64,
    pub step: f64,
    pub grad_norm: f64,
    pub best: f64,
    pub spent: u64,
}

/// Progress message sent after each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostProgress {
    pub iter: u64,
    pub spent: u64,
    pub budget: u64,
    pub s_base: f64,
    pub best: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostCheckpoint {
    pub config: BoostConfig,
    /// Next iteration to run. Iteration seeds derive from `(config.seed, iter)`.
    pub next_iter: u64,
    pub delta: Perturbation,
    pub best_delta: Perturbation,
    pub best: Option<SurvivabilityEstimate>,
    pub initial: Option<SurvivabilityEstimate>,
    pub spent: u64,
    pub history: Vec<IterationRecord>,
    pub lipschitz: LipschitzTrace,
    pub ledger: LedgerSnapshot,
}

impl BoostCheckpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tmp = path.as_ref().with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostOutcome {
    /// Highest observed survivability; ties keep the earliest.
    pub best_delta: Perturbation,
    pub best: Option<SurvivabilityEstimate>,
    pub initial: Option<SurvivabilityEstimate>,
    pub final_delta: Perturbation,
    pub history: Vec<IterationRecord>,
    pub lipschitz: LipschitzTrace,
    pub spent: u64,
    pub iterations: u64,
    /// The starting point had zero survivability, so the hard-label signal may be absent.
    pub cold_start: bool,
}

impl BoostOutcome {
    /// The checkpoint this outcome stopped at, for continuing under `config`.
    pub fn checkpoint(&self, config: BoostConfig, ledger: LedgerSnapshot) -> BoostCheckpoint {
        BoostCheckpoint {
            config,
            next_iter: self.iterations,
            delta: self.final_delta.clone(),
            best_delta: self.best_delta.clone(),
            best: self.best.clone(),
            initial: self.initial.clone(),
            spent: self.spent,
            history: self.history.clone(),
            lipschitz: self.lipschitz.clone(),
            ledger,
        }
    }
}

/// Optional side channels for a boosting run.
#[derive(Debug, Default, Clone)]
pub struct BoostHooks {
    /// Directory receiving `boost.json` after each iteration.
    pub checkpoint_dir: Option<PathBuf>,
    pub progress: Option<Sender<BoostProgress>>,
}

/// Projects `d` onto the mask and the pixel box of `x_plane`.
pub fn feasible(d: &Perturbation, x_plane: &Image, mask: &Mask) -> Perturbation {
    d.clamp_feasible(x_plane, mask)
}

/// The scene resampled to the perturbation plane, used for feasibility clipping.
pub fn plane_image(estimator: &SurvivabilityEstimator, mask: &Mask) -> Result<Image> {
    estimator.scene().resize_area(mask.width(), mask.height())
}

pub fn boost(
    estimator: &SurvivabilityEstimator,
    mask: &Mask,
    d0: &Perturbation,
    cfg: &BoostConfig,
    session: &OracleSession,
) -> Result<BoostOutcome> {
    boost_with(estimator, mask, d0, cfg, session, &BoostHooks::default())
}

pub fn boost_with(
    estimator: &SurvivabilityEstimator,
    mask: &Mask,
    d0: &Perturbation,
    cfg: &BoostConfig,
    session: &OracleSession,
    hooks: &BoostHooks,
) -> Result<BoostOutcome> {
    cfg.validate()?;
    let x_plane = plane_image(estimator, mask)?;
    let start = feasible(d0, &x_plane, mask);
    let cp = BoostCheckpoint {
        config: cfg.clone(),
        next_iter: 0,
        delta: start.clone(),
        best_delta: start,
        best: None,
        initial: None,
        spent: 0,
        history: Vec::new(),
        lipschitz: LipschitzTrace::default(),
        ledger: session.ledger().snapshot(),
    };
    resume(estimator, mask, cp, session, hooks)
}

/// Continues from a checkpoint. A fresh run is a checkpoint at iteration zero.
pub fn resume(
    estimator: &SurvivabilityEstimator,
    mask: &Mask,
    mut cp: BoostCheckpoint,
    session: &OracleSession,
    hooks: &BoostHooks,
) -> Result<BoostOutcome> {
    let cfg = cp.config.clone();
    cfg.validate()?;
    let x_plane = plane_image(estimator, mask)?;
    let per_iter = if mask.size() == 0 { cfg.n as u64 } else { cfg.iteration_cost() };
    if let Some(dir) = &hooks.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let fail = |e: Error, cp: &BoostCheckpoint| {
        let s = cp.best.as_ref().map_or(0.0, |b| b.value);
        e.with_partial(Partial::Perturbation { delta: cp.best_delta.clone(), survivability: s })
    };

    // Too little budget for one gradient step: report the starting point.
    if cp.next_iter == 0 && cfg.budget < per_iter {
        if cfg.budget >= cfg.n as u64 {
            let s = seed::derive2(cfg.seed, stream::BOOST, 0);
            let est = estimator.estimate(mask, &cp.delta, cfg.n, s, session, Phase::Boost).map_err(|e| fail(e, &cp))?;
            cp.spent += est.queries_spent;
            cp.initial = Some(est.clone());
            cp.best = Some(est);
        }
        return Ok(outcome(cp));
    }

    while cp.spent + per_iter <= cfg.budget {
        let iter = cp.next_iter;
        let iter_seed = seed::derive2(cfg.seed, stream::BOOST, iter);
        let mut lip = LipschitzTrace::default();
        let g = rgf_gradient(estimator, mask, &cp.delta, &cfg, iter_seed, session, &mut lip).map_err(|e| fail(e, &cp))?;
        cp.spent += g.queries;
        cp.lipschitz.merge(&lip);
        if cp.initial.is_none() {
            cp.initial = Some(g.base.clone());
        }
        if cp.best.as_ref().is_none_or(|b| g.base.value > b.value) {
            cp.best = Some(g.base.clone());
            cp.best_delta = cp.delta.clone();
        }
        let grad_norm = g.g_hat.norm();
        let mut step = cfg.eta;
        if grad_norm > 0.0 {
            let next_delta = if cfg.line_search {
                let ls = line_search_step(
                    estimator, mask, &cp.delta, &g.g_hat, g.base.value, &x_plane, &cfg, iter_seed, session,
                    cfg.budget - cp.spent,
                )
                .map_err(|e| fail(e, &cp))?;
                cp.spent += ls.trials as u64 * cfg.n as u64;
                step = ls.step;
                let cand = feasible(&cp.delta.add_scaled(&g.g_hat, step), &x_plane, mask);
                if let Some(s) = ls.survivability {
                    if cp.best.as_ref().is_none_or(|b| s > b.value) {
                        cp.best = Some(SurvivabilityEstimate {
                            value: s,
                            n: cfg.n,
                            seed: iter_seed,
                            queries_spent: cfg.n as u64,
                            hits: (s * cfg.n as f64).round() as usize,
                        });
                        cp.best_delta = cand.clone();
                    }
                }
                cand
            } else {
                feasible(&cp.delta.add_scaled(&g.g_hat, step), &x_plane, mask)
            };
            cp.delta = next_delta;
        }
        let best = cp.best.as_ref().map_or(0.0, |b| b.value);
        cp.history.push(IterationRecord { iter, seed: iter_seed, s_base: g.base.value, step, grad_norm, best, spent: cp.spent });
        cp.next_iter += 1;
        cp.ledger = session.ledger().snapshot();
        if let Some(dir) = &hooks.checkpoint_dir {
            cp.save(dir.join("boost.json"))?;
        }
        if let Some(tx) = &hooks.progress {
            let _ = tx.send(BoostProgress { iter, spent: cp.spent, budget: cfg.budget, s_base: g.base.value, best });
        }
    }
    Ok(outcome(cp))
}

fn outcome(cp: BoostCheckpoint) -> BoostOutcome {
    let cold_start = cp.initial.as_ref().is_some_and(|e| e.value == 0.0);
    BoostOutcome {
        best_delta: cp.best_delta,
        best: cp.best,
        initial: cp.initial,
        final_delta: cp.delta,
        iterations: cp.next_iter,
        history: cp.history,
        lipschitz: cp.lipschitz,
        spent: cp.spent,
        cold_start,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BinaryGrid;
    use crate::oracle::{ConstantOracle, Label};
    use crate::transforms::TransformDistribution;
    use std::sync::Arc;

    fn identity_estimator(n: usize) -> SurvivabilityEstimator {
        let scene = Image::filled(n, n, 1, 0.5).unwrap();
        SurvivabilityEstimator::new(scene, BinaryGrid::full(n, n), Label(1), TransformDistribution::identity()).unwrap()
    }

    fn small_cfg() -> BoostConfig {
        BoostConfig { n: 5, q: 3, budget: 200, eta: 0.5, beta: 0.1, ..Default::default() }
    }

    #[test]
    fn direction_is_unit_and_gated() {
        let obj = BinaryGrid::full(6, 6);
        let m = Mask::new(BinaryGrid::from_fn(6, 6, |x, _| x < 2), obj).unwrap();
        let u = random_direction(&m, 3, 4);
        assert!((u.norm() - 1.0).abs() < 1e-12);
        assert_eq!(u.gated(&m), u);
    }

    #[test]
    fn constant_oracle_gives_zero_gradient() {
        let e = identity_estimator(6);
        let m = Mask::full(BinaryGrid::full(6, 6));
        let s = OracleSession::unlimited(Arc::new(ConstantOracle(Label(1))));
        let mut lip = LipschitzTrace::default();
        let g = rgf_gradient(&e, &m, &Perturbation::zeros(6, 6, 1), &small_cfg(), 1, &s, &mut lip).unwrap();
        assert!(g.g_hat.is_zero());
        assert_eq!(g.queries, 20);
        assert_eq!(s.ledger().total(), 20);
        assert_eq!(lip.max, 0.0);
    }

    #[test]
    fn empty_mask_spends_base_only() {
        let e = identity_estimator(6);
        let m = Mask::empty(BinaryGrid::full(6, 6));
        let s = OracleSession::unlimited(Arc::new(ConstantOracle(Label(1))));
        let out = boost(&e, &m, &Perturbation::zeros(6, 6, 1), &BoostConfig { budget: 12, ..small_cfg() }, &s).unwrap();
        assert_eq!((out.spent, out.iterations), (10, 2));
        assert!(out.best_delta.is_zero());
    }

    #[test]
    fn tiny_budget_reports_start() {
        let e = identity_estimator(6);
        let m = Mask::full(BinaryGrid::full(6, 6));
        let s = OracleSession::unlimited(Arc::new(ConstantOracle(Label(0))));
        let d0 = Perturbation::new(6, 6, 1, vec![0.1; 36]).unwrap();
        let out = boost(&e, &m, &d0, &BoostConfig { budget: 7, ..small_cfg() }, &s).unwrap();
        assert_eq!(out.best_delta, d0);
        assert_eq!(out.best.unwrap().value, 0.0);
        assert!(out.cold_start);
        assert_eq!(s.ledger().total(), 5);
    }

    #[test]
    fn budget_accounting_is_exact() {
        let e = identity_estimator(6);
        let m = Mask::full(BinaryGrid::full(6, 6));
        let oracle = Arc::new(|img: &Image| Label((img.data()[0] > 0.55) as i64));
        let s = OracleSession::unlimited(oracle);
        let cfg = small_cfg();
        let out = boost(&e, &m, &Perturbation::zeros(6, 6, 1), &cfg, &s).unwrap();
        assert_eq!(out.iterations, 10);
        assert_eq!(out.spent, 200);
        assert_eq!(s.ledger().total(), 200);
        let best: Vec<f64> = out.history.iter().map(|h| h.best).collect();
        assert!(best.windows(2).all(|w| w[0] <= w[1]));
    }
}
