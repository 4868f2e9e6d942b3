//! Mask generation: heatmap, coarse binary-search reduction, fine greedy reduction.
//!
//! Every survivability evaluation in one generation run uses the same
//! transform seed, so all masks are compared on identical transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Partial, Result};
use crate::imaging::{build_patch_grid, mask_union, BinaryGrid, Image, Mask, PatchGrid, Perturbation};
use crate::oracle::{OracleSession, Phase};
use crate::survivability::SurvivabilityEstimator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionMode {
    #[default]
    Full,
    CoarseOnly,
    FineOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskGenConfig {
    pub s_lo: f64,
    pub s_hi: f64,
    /// Weight of the mask size, measured as a fraction of the object.
    pub lambda1: f64,
    pub patch_size: usize,
    pub stride: usize,
    pub n: usize,
    pub mode: ReductionMode,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        Self { s_lo: 0.7, s_hi: 0.9, lambda1: 0.25, patch_size: 4, stride: 2, n: 100, mode: ReductionMode::Full }
    }
}

impl MaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s_lo && self.s_lo <= self.s_hi && self.s_hi <= 1.0) {
            return Err(Error::invalid("need 0 <= s_lo <= s_hi <= 1"));
        }
        if !(self.lambda1 >= 0.0) {
            return Err(Error::invalid("lambda1 must be non-negative"));
        }
        if self.patch_size == 0 || self.stride == 0 || self.n == 0 {
            return Err(Error::invalid("patch_size, stride and n must be >= 1"));
        }
        Ok(())
    }
}

/// Survivability of removing each patch from the full mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult {
    /// `(patch index, s_rho)` in patch order.
    pub per_patch: Vec<(usize, f64)>,
    /// Full-mask survivability.
    pub baseline: f64,
}

impl HeatmapResult {
    pub fn impact(&self, i: usize) -> f64 {
        self.baseline - self.per_patch[i].1
    }

    /// Patch indices from least to most impactful (highest `s_rho` first).
    /// Ties keep patch order.
    pub fn sorted_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.per_patch.iter().map(|(i, _)| *i).collect();
        idx.sort_by(|a, b| self.per_patch[*b].1.total_cmp(&self.per_patch[*a].1));
        idx
    }

    /// Impact per pixel of the grid, normalized to `[0, 1]`; overlapping patches average.
    pub fn impact_image(&self, grid: &PatchGrid) -> Vec<f64> {
        let mut sum = vec![0.0; grid.width * grid.height];
        let mut cnt = vec![0u32; grid.width * grid.height];
        for (p, (_, s)) in grid.patches.iter().zip(&self.per_patch) {
            for &px in &p.pixels {
                sum[px] += (self.baseline - s).max(0.0);
                cnt[px] += 1;
            }
        }
        let vals: Vec<f64> = sum.iter().zip(&cnt).map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 }).collect();
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        if hi > 0.0 {
            vals.iter().map(|v| v / hi).collect()
        } else {
            vals
        }
    }
}

/// Survivability of a candidate mask paired with the fixed target content.
pub trait MaskScorer {
    fn score(&mut self, mask: &Mask, phase: Phase) -> Result<f64>;
}

impl<F: FnMut(&Mask, Phase) -> Result<f64>> MaskScorer for F {
    fn score(&mut self, mask: &Mask, phase: Phase) -> Result<f64> {
        self(mask, phase)
    }
}

/// Scores masks by Monte-Carlo survivability of `x + M * delta_tar` under one seed.
pub struct EstimatorScorer<'a> {
    pub estimator: &'a SurvivabilityEstimator,
    pub delta_tar: &'a Perturbation,
    pub n: usize,
    pub seed: u64,
    pub session: &'a OracleSession,
}

impl MaskScorer for EstimatorScorer<'_> {
    fn score(&mut self, mask: &Mask, phase: Phase) -> Result<f64> {
        Ok(self.estimator.estimate(mask, self.delta_tar, self.n, self.seed, self.session, phase)?.value)
    }
}

/// Full-mask survivability plus one estimate per patch with that patch removed.
pub fn heatmap(grid: &PatchGrid, object: &BinaryGrid, scorer: &mut dyn MaskScorer) -> Result<HeatmapResult> {
    let full = Mask::full(object.clone());
    let baseline = scorer.score(&full, Phase::Heatmap)?;
    let mut per_patch = Vec::with_capacity(grid.len());
    for p in &grid.patches {
        match scorer.score(&full.minus(p), Phase::Heatmap) {
            Ok(s) => per_patch.push((p.index, s)),
            Err(e) => return Err(e.with_partial(Partial::Heatmap(HeatmapResult { per_patch, baseline }))),
        }
    }
    Ok(HeatmapResult { per_patch, baseline })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseResult {
    pub mask: Mask,
    /// Survivability of `mask` as measured during the search.
    pub survivability: f64,
    /// 1-based position in the sorted order where the kept suffix starts; 1 keeps every patch.
    pub pivot: usize,
    pub evaluations: usize,
}

/// Union of sorted patches `pivot..=K` (1-based).
pub fn suffix_mask(grid: &PatchGrid, order: &[usize], pivot: usize, object: &BinaryGrid) -> Mask {
    mask_union(
        &order[pivot - 1..].iter().map(|&i| grid.patches[i].clone()).collect::<Vec<_>>(),
        object,
    )
}

/// Binary search for the largest pivot whose suffix union still reaches `threshold`.
///
/// If even the union of every patch falls short, that full union is returned.
pub fn coarse_reduce(
    heatmap: &HeatmapResult,
    grid: &PatchGrid,
    object: &BinaryGrid,
    threshold: f64,
    scorer: &mut dyn MaskScorer,
) -> Result<CoarseResult> {
    let order = heatmap.sorted_order();
    let k = order.len();
    if k == 0 {
        return Err(Error::invalid("empty patch grid"));
    }
    // pred(p) = S(suffix(p)) >= threshold. Sentinels: pred(0) true, pred(K+1) false.
    let (mut lo, mut hi) = (0usize, k + 1);
    let mut seen: Vec<(usize, Mask, f64)> = Vec::new();
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let m = suffix_mask(grid, &order, mid, object);
        let s = match scorer.score(&m, Phase::Coarse) {
            Ok(s) => s,
            Err(e) => {
                let partial = seen.iter().find(|(p, ..)| *p == lo);
                return Err(match partial {
                    Some((_, mask, s)) => e.with_partial(Partial::Mask { mask: mask.clone(), survivability: *s }),
                    None => e,
                });
            }
        };
        seen.push((mid, m, s));
        if s >= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let evaluations = seen.len();
    let pivot = lo.max(1);
    let (_, mask, s) = seen.into_iter().find(|(p, ..)| *p == pivot).expect("pivot was evaluated");
    Ok(CoarseResult { mask, survivability: s, pivot, evaluations })
}

/// `lambda1 * |M| / |object| + (1 - s)`, or infinity when `s < s_lo`.
pub fn objective_j(m: &Mask, s: f64, cfg: &MaskGenConfig) -> f64 {
    if s < cfg.s_lo {
        f64::INFINITY
    } else {
        cfg.lambda1 * m.object_ratio() + (1.0 - s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineResult {
    pub mask: Mask,
    pub survivability: f64,
    /// Objective before the pass, then after each accepted removal.
    pub j_trace: Vec<f64>,
    pub removed: Vec<usize>,
    pub evaluations: usize,
}

/// One greedy pass from least to most impactful patch; a removal is kept
/// only when it strictly lowers the objective.
pub fn fine_reduce(
    m0: &Mask,
    s0: f64,
    heatmap: &HeatmapResult,
    grid: &PatchGrid,
    cfg: &MaskGenConfig,
    scorer: &mut dyn MaskScorer,
) -> Result<FineResult> {
    let mut mask = m0.clone();
    let mut s = s0;
    let mut j = objective_j(&mask, s, cfg);
    let mut out = FineResult { mask: mask.clone(), survivability: s, j_trace: vec![j], removed: Vec::new(), evaluations: 0 };
    for i in heatmap.sorted_order() {
        let p = &grid.patches[i];
        if !p.pixels.iter().any(|&px| mask.bits().bits()[px]) {
            continue;
        }
        let cand = mask.minus(p);
        out.evaluations += 1;
        let sc = match scorer.score(&cand, Phase::Fine) {
            Ok(v) => v,
            Err(e) => return Err(e.with_partial(Partial::Mask { mask, survivability: s })),
        };
        let jc = objective_j(&cand, sc, cfg);
        if jc < j {
            mask = cand;
            s = sc;
            j = jc;
            out.j_trace.push(j);
            out.removed.push(i);
        }
    }
    out.mask = mask;
    out.survivability = s;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGenResult {
    pub mask: Mask,
    /// Attack-time survivability of `mask` with the target content.
    pub survivability: f64,
    pub heatmap: HeatmapResult,
    pub coarse: Option<CoarseResult>,
    pub fine: Option<FineResult>,
}

/// Heatmap, then the reductions selected by `cfg.mode`.
pub fn generate_with(
    grid: &PatchGrid,
    object: &BinaryGrid,
    cfg: &MaskGenConfig,
    scorer: &mut dyn MaskScorer,
) -> Result<MaskGenResult> {
    cfg.validate()?;
    let hm = heatmap(grid, object, scorer)?;
    let (coarse, m0, s0) = match cfg.mode {
        ReductionMode::FineOnly => (None, Mask::full(object.clone()), hm.baseline),
        ReductionMode::Full => {
            let c = coarse_reduce(&hm, grid, object, cfg.s_hi, scorer)?;
            let (m, s) = (c.mask.clone(), c.survivability);
            (Some(c), m, s)
        }
        ReductionMode::CoarseOnly => {
            let c = coarse_reduce(&hm, grid, object, cfg.s_lo, scorer)?;
            let (m, s) = (c.mask.clone(), c.survivability);
            (Some(c), m, s)
        }
    };
    let fine = match cfg.mode {
        ReductionMode::CoarseOnly => None,
        _ => Some(fine_reduce(&m0, s0, &hm, grid, cfg, scorer)?),
    };
    let (mask, survivability) = match &fine {
        Some(f) => (f.mask.clone(), f.survivability),
        None => (m0, s0),
    };
    Ok(MaskGenResult { mask, survivability, heatmap: hm, coarse, fine })
}

/// `x_tar - x`, resampled onto a `w x h` plane.
pub fn target_delta(x: &Image, x_tar: &Image, w: usize, h: usize) -> Result<Perturbation> {
    x_tar.difference(x)?.resize_area(w, h)
}

/// Mask generation against a real estimator, with `x_tar - x` as the target content.
pub fn generate_mask(
    estimator: &SurvivabilityEstimator,
    x_tar: &Image,
    cfg: &MaskGenConfig,
    session: &OracleSession,
    seed: u64,
) -> Result<(MaskGenResult, PatchGrid)> {
    let object = estimator.object();
    let delta_tar = target_delta(estimator.scene(), x_tar, object.width(), object.height())?;
    generate_mask_for(estimator, &delta_tar, cfg, session, seed)
}

/// Mask generation for an arbitrary plane-resolution target content.
pub fn generate_mask_for(
    estimator: &SurvivabilityEstimator,
    delta_tar: &Perturbation,
    cfg: &MaskGenConfig,
    session: &OracleSession,
    seed: u64,
) -> Result<(MaskGenResult, PatchGrid)> {
    let object = estimator.object();
    let grid = build_patch_grid(object, cfg.patch_size, cfg.stride)?;
    let mut scorer = EstimatorScorer { estimator, delta_tar, n: cfg.n, seed, session };
    Ok((generate_with(&grid, object, cfg, &mut scorer)?, grid))
}
