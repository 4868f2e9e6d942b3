use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boost::IterationRecord;
use crate::error::Result;
use crate::imaging::{write_gray_png, write_mask_png, write_png, BinaryGrid, PatchGrid, Perturbation};
use crate::maskgen::HeatmapResult;
use crate::oracle::LedgerSnapshot;
use crate::survivability::LipschitzTrace;
use crate::transforms::write_trace;

use super::run::{ensure_dir, RoundPolicy, RunArtifacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// The global query cap was hit; the report holds the best state reached.
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub maskgen: u64,
    pub boost: u64,
    pub holdout: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivabilitySummary {
    /// Attack-time survivability of the mask with the target content.
    pub post_mask_attack: Option<f64>,
    pub boost_initial: Option<f64>,
    pub boost_best: Option<f64>,
    pub post_mask_holdout: f64,
    pub final_holdout: f64,
    pub holdout_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub policy: RoundPolicy,
    pub mask_pixels: usize,
    pub mask_ratio: f64,
    pub maskgen_queries: u64,
    pub boost_queries: u64,
    pub post_mask_survivability: Option<f64>,
    pub boost_best: Option<f64>,
}

/// Heatmap with the geometry needed to redraw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapExport {
    pub patch_size: usize,
    pub stride: usize,
    pub width: usize,
    pub height: usize,
    pub baseline: f64,
    /// `(patch index, anchor, s_rho)`.
    pub patches: Vec<(usize, (usize, usize), f64)>,
}

impl HeatmapExport {
    pub fn new(hm: &HeatmapResult, grid: &PatchGrid) -> Self {
        Self {
            patch_size: grid.patch_size,
            stride: grid.stride,
            width: grid.width,
            height: grid.height,
            baseline: hm.baseline,
            patches: grid.patches.iter().zip(&hm.per_patch).map(|(p, (i, s))| (*i, p.anchor, *s)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub status: RunStatus,
    pub error: Option<String>,
    pub flags: Vec<String>,
    pub target_label: i64,
    pub object: BinaryGrid,
    pub mask: BinaryGrid,
    pub perturbation: Perturbation,
    pub object_pixels: usize,
    pub mask_pixels: usize,
    pub mask_ratio: f64,
    pub survivability: SurvivabilitySummary,
    /// Attack queries. Held-out evaluation is counted separately.
    pub ledger: LedgerSnapshot,
    pub holdout_ledger: LedgerSnapshot,
    pub boost_iterations: u64,
    pub boost_history: Vec<IterationRecord>,
    pub lipschitz_max: Option<f64>,
    pub lipschitz: LipschitzTrace,
    pub heatmap: Option<HeatmapExport>,
    pub rounds: Vec<RoundSummary>,
    pub config_hash: String,
    pub seeds: Seeds,
    /// Excluded from [`AttackReport::canonical_json`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl AttackReport {
    /// Pretty JSON without the wall-clock field. Equal runs give equal bytes.
    pub fn canonical_json(&self) -> Result<Vec<u8>> {
        let r = AttackReport { wall_clock_secs: None, ..self.clone() };
        Ok(serde_json::to_vec_pretty(&r)?)
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Magnifies a heatmap for viewing.
const HEATMAP_SCALE: usize = 8;

impl RunArtifacts {
    /// Writes `report.json` (canonical), `timing.json`, `adversarial.png`,
    /// `post_mask.png`, `mask.png`, `object.png`, `trace.ndjson` and, when
    /// present, `heatmap.png` and `heatmap.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        std::fs::write(dir.join("report.json"), self.report.canonical_json()?)?;
        if let Some(secs) = self.report.wall_clock_secs {
            std::fs::write(dir.join("timing.json"), serde_json::to_vec_pretty(&serde_json::json!({ "wall_clock_secs": secs }))?)?;
        }
        write_png(&self.adversarial, dir.join("adversarial.png"))?;
        write_png(&self.post_mask, dir.join("post_mask.png"))?;
        write_mask_png(&self.report.mask, dir.join("mask.png"))?;
        write_mask_png(&self.report.object, dir.join("object.png"))?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("trace.ndjson"))?);
        write_trace(&self.trace, f)?;
        if let Some((hm, grid)) = &self.heatmap {
            write_heatmap(hm, grid, dir)?;
        }
        Ok(())
    }
}

pub fn write_heatmap(hm: &HeatmapResult, grid: &PatchGrid, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let img = hm.impact_image(grid);
    let (w, h) = (grid.width * HEATMAP_SCALE, grid.height * HEATMAP_SCALE);
    let big: Vec<f64> = (0..w * h).map(|i| img[(i / w / HEATMAP_SCALE) * grid.width + (i % w) / HEATMAP_SCALE]).collect();
    write_gray_png(w, h, &big, dir.join("heatmap.png"))?;
    std::fs::write(dir.join("heatmap.json"), serde_json::to_vec_pretty(&HeatmapExport::new(hm, grid))?)?;
    Ok(())
}
