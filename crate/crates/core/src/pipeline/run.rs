use std::path::{Path, PathBuf};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boost::{boost_with, plane_image, BoostConfig, BoostHooks, BoostOutcome, BoostProgress, IterationRecord};
use crate::error::{Error, Partial, Result};
use crate::imaging::{apply_perturbation, read_mask_png, BinaryGrid, Image, Mask, PatchGrid, Perturbation};
use crate::maskgen::{generate_mask_for, target_delta, HeatmapResult, MaskGenConfig};
use crate::oracle::{HardLabelOracle, Label, LedgerSnapshot, OracleSession, Phase, QueryLedger};
use crate::seed::{self, stream};
use crate::survivability::{SurvivabilityEstimate, SurvivabilityEstimator};
use crate::transforms::TransformParams;

use super::config::RunConfig;
use super::report::{AttackReport, HeatmapExport, RoundSummary, RunStatus, Seeds, SurvivabilitySummary};

pub const FLAG_NO_BOOST_GAIN: &str = "no-boost-gain";
pub const FLAG_COLD_START: &str = "cold-start";

/// Victim scene, target content and the attackable object region.
#[derive(Debug, Clone)]
pub struct AttackInstance {
    pub victim: Image,
    pub target_example: Image,
    pub target: Label,
    /// Object region on the perturbation plane.
    pub object: BinaryGrid,
}

impl AttackInstance {
    pub fn new(victim: Image, target_example: Image, target: Label, object: BinaryGrid) -> Result<Self> {
        if !victim.same_shape(&target_example) {
            return Err(Error::invalid("victim and target example differ in shape"));
        }
        if object.is_empty() {
            return Err(Error::invalid("empty object region"));
        }
        Ok(Self { victim, target_example, target, object })
    }

    pub fn estimator(&self, cfg: &RunConfig) -> Result<SurvivabilityEstimator> {
        SurvivabilityEstimator::new(self.victim.clone(), self.object.clone(), self.target, cfg.transforms.resolve()?)
    }

    /// `x_tar - x` on the perturbation plane.
    pub fn target_delta(&self) -> Result<Perturbation> {
        target_delta(&self.victim, &self.target_example, self.object.width(), self.object.height())
    }
}

/// How the mask of one round is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoundPolicy {
    /// Run mask generation with this patch geometry.
    Generate { patch_size: usize, stride: usize },
    /// Pin the mask to the object pixels within `width` of the object edge.
    Border { width: usize },
    /// Pin the mask to a region read from a PNG, intersected with the object.
    Region { path: PathBuf },
}

/// Object pixels with a non-object pixel (or the plane edge) within
/// Chebyshev distance `width`.
pub fn border_region(object: &BinaryGrid, width: usize) -> BinaryGrid {
    let (w, h) = (object.width() as isize, object.height() as isize);
    let r = width as isize;
    BinaryGrid::from_fn(object.width(), object.height(), |x, y| {
        if !object.get(x, y) {
            return false;
        }
        let (x, y) = (x as isize, y as isize);
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (u, v) = (x + dx, y + dy);
                u < 0 || v < 0 || u >= w || v >= h || !object.get(u as usize, v as usize)
            })
        })
    })
}

/// Side channels of a run.
#[derive(Debug, Default, Clone)]
pub struct RunHooks {
    /// Where boost checkpoints go. Nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
    pub progress: Option<Sender<BoostProgress>>,
    /// Base directory for relative paths in round policies.
    pub base_dir: PathBuf,
}

/// A finished (or budget-truncated) run: the report plus the images it describes.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: AttackReport,
    pub adversarial: Image,
    pub post_mask: Image,
    pub heatmap: Option<(HeatmapResult, PatchGrid)>,
    pub trace: Vec<TransformParams>,
}

pub(crate) fn sessions(cfg: &RunConfig, oracle: Arc<dyn HardLabelOracle>) -> (OracleSession, OracleSession) {
    let mut s = OracleSession::new(oracle, Arc::new(QueryLedger::new(cfg.run.max_queries)));
    if cfg.oracle.cache {
        s = s.with_cache();
    }
    let holdout = s.with_ledger(Arc::new(QueryLedger::new(None)));
    (s, holdout)
}

pub(crate) fn seeds(master: u64) -> Seeds {
    Seeds {
        master,
        maskgen: seed::derive(master, stream::MASKGEN),
        boost: seed::derive(master, stream::BOOST),
        holdout: seed::derive(master, stream::HOLDOUT),
    }
}

/// The single-round attack: mask generation, then boosting inside the mask.
pub fn run_attack(
    instance: &AttackInstance,
    cfg: &RunConfig,
    oracle: Arc<dyn HardLabelOracle>,
    hooks: &RunHooks,
) -> Result<RunArtifacts> {
    let rounds = [RoundPolicy::Generate { patch_size: cfg.maskgen.patch_size, stride: cfg.maskgen.stride }];
    run_rounds(instance, cfg, oracle, &rounds, hooks)
}

/// Runs `cfg.iterative.rounds`.
pub fn run_iterative(
    instance: &AttackInstance,
    cfg: &RunConfig,
    oracle: Arc<dyn HardLabelOracle>,
    hooks: &RunHooks,
) -> Result<RunArtifacts> {
    run_rounds(instance, cfg, oracle, &cfg.iterative.rounds, hooks)
}

struct RoundState {
    mask: Mask,
    post_mask_delta: Perturbation,
    delta: Perturbation,
    post_mask_attack: f64,
    boost: Option<BoostOutcome>,
    heatmap: Option<(HeatmapResult, PatchGrid)>,
}

/// Rounds of mask selection and boosting. Each round after the first
/// takes the previous round's boosted content `M_prev * delta_prev` as
/// its target content.
pub fn run_rounds(
    instance: &AttackInstance,
    cfg: &RunConfig,
    oracle: Arc<dyn HardLabelOracle>,
    rounds: &[RoundPolicy],
    hooks: &RunHooks,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if rounds.is_empty() {
        return Err(Error::Config("at least one round is required".into()));
    }
    let started = Instant::now();
    let estimator = instance.estimator(cfg)?;
    let (session, holdout) = sessions(cfg, oracle);
    let seeds = seeds(cfg.run.seed);
    let object = instance.object.clone();
    let x_plane = plane_image(&estimator, &Mask::full(object.clone()))?;

    let mut content = instance.target_delta()?;
    let mut summaries = Vec::new();
    let mut state: Option<RoundState> = None;
    let mut failure: Option<Error> = None;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut lipschitz = crate::survivability::LipschitzTrace::default();
    let mut trace_sets: Vec<(usize, u64)> = Vec::new();

    for (r, policy) in rounds.iter().enumerate() {
        let r64 = r as u64;
        let before = session.ledger().snapshot();
        let mut heatmap = None;
        let (mask, post_mask_attack) = match policy {
            RoundPolicy::Generate { patch_size, stride } => {
                let mg = MaskGenConfig { patch_size: *patch_size, stride: *stride, ..cfg.maskgen.clone() };
                let mg_seed = seed::derive2(seeds.maskgen, stream::MASKGEN, r64);
                trace_sets.push((mg.n, mg_seed));
                match generate_mask_for(&estimator, &content, &mg, &session, mg_seed) {
                    Ok((res, grid)) => {
                        heatmap = Some((res.heatmap.clone(), grid));
                        (res.mask, res.survivability)
                    }
                    Err(e) => {
                        let (mask, s) = match &e {
                            Error::BudgetExceeded { partial: Some(p), .. } => match p.as_ref() {
                                Partial::Mask { mask, survivability } => (mask.clone(), *survivability),
                                _ => (fallback_mask(&state, &object), 0.0),
                            },
                            _ if e.is_budget_exceeded() => (fallback_mask(&state, &object), 0.0),
                            _ => return Err(e),
                        };
                        failure = Some(e);
                        (mask, s)
                    }
                }
            }
            RoundPolicy::Border { width } => (Mask::new(border_region(&object, *width), object.clone())?, f64::NAN),
            RoundPolicy::Region { path } => {
                let g = read_mask_png(hooks.base_dir.join(path))?;
                let g = if g.same_shape(&object) { g } else { g.resample_nearest(object.width(), object.height()) };
                (Mask::clipped(&g, object.clone())?, f64::NAN)
            }
        };
        let maskgen_queries = session.ledger().total() - before.total;
        let d0 = content.gated(&mask).clamp_feasible(&x_plane, &mask);

        let mut boost_out = None;
        let mut delta = d0.clone();
        if failure.is_none() {
            let bcfg = BoostConfig { seed: seed::derive2(seeds.boost, stream::BOOST, r64), ..cfg.boost.clone() };
            let bhooks = BoostHooks {
                checkpoint_dir: hooks.checkpoint_dir.as_ref().map(|d| d.join(format!("round-{r}"))),
                progress: hooks.progress.clone(),
            };
            match boost_with(&estimator, &mask, &d0, &bcfg, &session, &bhooks) {
                Ok(out) => {
                    delta = out.best_delta.clone();
                    trace_sets.extend(out.history.iter().map(|h| (bcfg.n, h.seed)));
                    history.extend(out.history.iter().cloned());
                    lipschitz.merge(&out.lipschitz);
                    boost_out = Some(out);
                }
                Err(e) if e.is_budget_exceeded() => {
                    if let Error::BudgetExceeded { partial: Some(p), .. } = &e {
                        if let Partial::Perturbation { delta: d, .. } = p.as_ref() {
                            delta = d.clone();
                        }
                    }
                    failure = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        let spent = session.ledger().snapshot().since(&before);
        summaries.push(RoundSummary {
            policy: policy.clone(),
            mask_pixels: mask.size(),
            mask_ratio: mask.object_ratio(),
            maskgen_queries,
            boost_queries: spent.total - maskgen_queries,
            post_mask_survivability: finite(post_mask_attack),
            boost_best: boost_out.as_ref().and_then(|b| b.best.as_ref().map(|e| e.value)),
        });
        content = delta.gated(&mask);
        state = Some(RoundState { mask, post_mask_delta: d0, delta, post_mask_attack, boost: boost_out, heatmap });
        if failure.is_some() {
            break;
        }
    }

    let st = state.expect("at least one round ran");
    let mut flags = Vec::new();
    let n_hold = cfg.run.holdout_n;
    trace_sets.push((n_hold, seeds.holdout));
    let post = estimator.estimate(&st.mask, &st.post_mask_delta, n_hold, seeds.holdout, &holdout, Phase::Holdout)?;
    let (delta, fin) = if st.delta == st.post_mask_delta {
        flags.push(FLAG_NO_BOOST_GAIN.to_string());
        (st.post_mask_delta.clone(), post.clone())
    } else {
        let fin = estimator.estimate(&st.mask, &st.delta, n_hold, seeds.holdout, &holdout, Phase::Holdout)?;
        if fin.value <= post.value {
            flags.push(FLAG_NO_BOOST_GAIN.to_string());
            (st.post_mask_delta.clone(), post.clone())
        } else {
            (st.delta.clone(), fin)
        }
    };
    if st.boost.as_ref().is_some_and(|b| b.cold_start) {
        flags.push(FLAG_COLD_START.to_string());
    }

    let adversarial = estimator.compose(&st.mask, &delta)?;
    let post_mask = estimator.compose(&st.mask, &st.post_mask_delta)?;
    let trace = trace_params(&estimator, &trace_sets)?;
    let (status, error) = match &failure {
        Some(e) => (RunStatus::BudgetExceeded, Some(e.to_string())),
        None => (RunStatus::Complete, None),
    };
    let boost_ref = st.boost.as_ref();
    let report = AttackReport {
        status,
        error,
        flags,
        target_label: instance.target.0,
        object_pixels: object.count(),
        mask_pixels: st.mask.size(),
        mask_ratio: st.mask.object_ratio(),
        object,
        mask: st.mask.bits().clone(),
        perturbation: delta,
        survivability: SurvivabilitySummary {
            post_mask_attack: finite(st.post_mask_attack),
            boost_initial: boost_ref.and_then(|b| b.initial.as_ref().map(|e| e.value)),
            boost_best: boost_ref.and_then(|b| b.best.as_ref().map(|e| e.value)),
            post_mask_holdout: post.value,
            final_holdout: fin.value,
            holdout_n: n_hold,
        },
        ledger: session.ledger().snapshot(),
        holdout_ledger: holdout.ledger().snapshot(),
        boost_iterations: history.len() as u64,
        boost_history: history,
        lipschitz_max: (!lipschitz.samples.is_empty()).then_some(lipschitz.max),
        lipschitz,
        heatmap: st.heatmap.as_ref().map(|(h, g)| HeatmapExport::new(h, g)),
        rounds: summaries,
        config_hash: cfg.hash(),
        seeds,
        wall_clock_secs: Some(started.elapsed().as_secs_f64()),
    };
    Ok(RunArtifacts { report, adversarial, post_mask, heatmap: st.heatmap, trace })
}

fn fallback_mask(state: &Option<RoundState>, object: &BinaryGrid) -> Mask {
    state.as_ref().map_or_else(|| Mask::full(object.clone()), |s| s.mask.clone())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Transform parameters of every `(n, seed)` set, in order.
pub(crate) fn trace_params(estimator: &SurvivabilityEstimator, sets: &[(usize, u64)]) -> Result<Vec<TransformParams>> {
    let mut out = Vec::new();
    for &(n, s) in sets {
        out.extend(estimator.transforms(n, s)?.into_iter().map(|t| t.params().clone()));
    }
    Ok(out)
}

/// Held-out survivability of `x + M delta` on a fresh unlimited ledger.
pub fn holdout_estimate(
    estimator: &SurvivabilityEstimator,
    mask: &Mask,
    delta: &Perturbation,
    n: usize,
    seed: u64,
    oracle: Arc<dyn HardLabelOracle>,
) -> Result<(SurvivabilityEstimate, LedgerSnapshot)> {
    let s = OracleSession::new(oracle, Arc::new(QueryLedger::new(None)));
    let est = estimator.estimate(mask, delta, n, seed, &s, Phase::Holdout)?;
    Ok((est, s.ledger().snapshot()))
}

/// Heatmap only.
pub fn run_heatmap(
    instance: &AttackInstance,
    cfg: &RunConfig,
    oracle: Arc<dyn HardLabelOracle>,
) -> Result<(HeatmapResult, PatchGrid, LedgerSnapshot)> {
    cfg.validate()?;
    let estimator = instance.estimator(cfg)?;
    let (session, _) = sessions(cfg, oracle);
    let grid = crate::imaging::build_patch_grid(&instance.object, cfg.maskgen.patch_size, cfg.maskgen.stride)?;
    let delta = instance.target_delta()?;
    let mg_seed = seed::derive2(seeds(cfg.run.seed).maskgen, stream::MASKGEN, 0);
    let mut scorer = crate::maskgen::EstimatorScorer { estimator: &estimator, delta_tar: &delta, n: cfg.maskgen.n, seed: mg_seed, session: &session };
    let hm = crate::maskgen::heatmap(&grid, &instance.object, &mut scorer)?;
    Ok((hm, grid, session.ledger().snapshot()))
}

/// Composite `x + M delta` for a persisted mask and perturbation.
pub fn recompose(victim: &Image, mask: &BinaryGrid, object: &BinaryGrid, delta: &Perturbation) -> Result<Image> {
    apply_perturbation(victim, &Mask::new(mask.clone(), object.clone())?, delta)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn border_of_a_square() {
        let obj = BinaryGrid::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        let b = border_region(&obj, 1);
        assert_eq!(b.count(), 12);
        assert!(b.is_subset_of(&obj));
        assert!(!b.get(3, 3) && b.get(2, 3));
        assert_eq!(border_region(&obj, 2).count(), 16);
        assert_eq!(border_region(&BinaryGrid::full(4, 4), 1).count(), 12);
    }
}
