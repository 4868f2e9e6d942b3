//! Budget sweeps, reduction-mode ablations and the efficiency comparison.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{threshold_schedule_run, EfficiencyRow, ScheduleReport};
use crate::boost::{boost_with, plane_image, resume, BoostConfig, BoostHooks, BoostOutcome};
use crate::error::Result;
use crate::imaging::{write_png, BinaryGrid, Mask};
use crate::maskgen::{generate_mask_for, MaskGenConfig, ReductionMode};
use crate::oracle::{HardLabelOracle, OracleSession, Phase, QueryLedger};
use crate::seed::{self, stream};

use super::config::RunConfig;
use super::plot::line_chart;
use super::report::Seeds;
use super::run::{ensure_dir, run_attack, seeds, sessions, AttackInstance, RunArtifacts, RunHooks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: u64,
    pub boost_queries: u64,
    pub iterations: u64,
    pub attack_best: Option<f64>,
    pub holdout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mask: BinaryGrid,
    pub mask_pixels: usize,
    pub maskgen_queries: u64,
    pub post_mask_holdout: f64,
    pub holdout_n: usize,
    pub rows: Vec<SweepRow>,
    pub config_hash: String,
    pub seeds: Seeds,
}

/// Final survivability against boost budget.
///
/// The mask is generated once with the same seed a single attack would
/// use. Budgets run in ascending order, each continuing from the previous
/// budget's checkpoint, which reproduces an independent run at that
/// budget exactly. With the line search on, the last iteration depends on
/// the remaining allowance, so each budget is run from scratch instead.
pub fn run_budget_sweep(
    instance: &AttackInstance,
    cfg: &RunConfig,
    oracle: Arc<dyn HardLabelOracle>,
    budgets: &[u64],
) -> Result<SweepReport> {
    cfg.validate()?;
    let estimator = instance.estimator(cfg)?;
    let (session, holdout) = sessions(cfg, oracle);
    let seeds = seeds(cfg.run.seed);
    let mg_seed = seed::derive2(seeds.maskgen, stream::MASKGEN, 0);
    let (mg, _) = generate_mask_for(&estimator, &instance.target_delta()?, &cfg.maskgen, &session, mg_seed)?;
    let maskgen_queries = session.ledger().total();
    let mask = mg.mask;
    let x_plane = plane_image(&estimator, &mask)?;
    let d0 = instance.target_delta()?.gated(&mask).clamp_feasible(&x_plane, &mask);
    let n_hold = cfg.run.holdout_n;
    let post = estimator.estimate(&mask, &d0, n_hold, seeds.holdout, &holdout, Phase::Holdout)?;

    let mut budgets = budgets.to_vec();
    budgets.sort_unstable();
    budgets.dedup();
    let base = BoostConfig { seed: seed::derive2(seeds.boost, stream::BOOST, 0), ..cfg.boost.clone() };
    let hooks = BoostHooks::default();
    let mut prev: Option<BoostOutcome> = None;
    let mut rows = Vec::new();
    for b in budgets {
        let bcfg = BoostConfig { budget: b, ..base.clone() };
        let out = match prev.take() {
            Some(p) if p.iterations > 0 && !bcfg.line_search => {
                resume(&estimator, &mask, p.checkpoint(bcfg, session.ledger().snapshot()), &session, &hooks)?
            }
            _ => boost_with(&estimator, &mask, &d0, &bcfg, &session, &hooks)?,
        };
        let fin = if out.best_delta == d0 {
            post.clone()
        } else {
            estimator.estimate(&mask, &out.best_delta, n_hold, seeds.holdout, &holdout, Phase::Holdout)?
        };
        rows.push(SweepRow {
            budget: b,
            boost_queries: out.spent,
            iterations: out.iterations,
            attack_best: out.best.as_ref().map(|e| e.value),
            holdout: fin.value,
        });
        prev = Some(out);
    }
    Ok(SweepReport {
        mask_pixels: mask.size(),
        mask: mask.bits().clone(),
        maskgen_queries,
        post_mask_holdout: post.value,
        holdout_n: n_hold,
        rows,
        config_hash: cfg.hash(),
        seeds,
    })
}

impl SweepReport {
    /// `sweep.json`, `sweep.csv` and `sweep.png`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        std::fs::write(dir.join("sweep.json"), serde_json::to_vec_pretty(self)?)?;
        write_csv(&self.rows, &dir.join("sweep.csv"))?;
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.budget as f64, r.holdout)).collect();
        if !pts.is_empty() {
            write_png(&line_chart(&pts, 320, 240)?, dir.join("sweep.png"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: ReductionMode,
    /// Attack-time survivability of the final mask.
    pub survivability: f64,
    pub holdout: f64,
    pub mask_pixels: usize,
    pub queries: u64,
    pub runtime_secs: f64,
}

/// Mask generation under each reduction mode, each on its own ledger and
/// with the same transform seed.
pub fn run_ablation(
    instance: &AttackInstance,
    cfg: &RunConfig,
    oracle: Arc<dyn HardLabelOracle>,
    modes: &[ReductionMode],
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let estimator = instance.estimator(cfg)?;
    let seeds = seeds(cfg.run.seed);
    let mg_seed = seed::derive2(seeds.maskgen, stream::MASKGEN, 0);
    let delta = instance.target_delta()?;
    let mut rows = Vec::new();
    for &mode in modes {
        let (session, holdout) = sessions(cfg, oracle.clone());
        let started = Instant::now();
        let mg = MaskGenConfig { mode, ..cfg.maskgen.clone() };
        let (res, _) = generate_mask_for(&estimator, &delta, &mg, &session, mg_seed)?;
        let runtime_secs = started.elapsed().as_secs_f64();
        let h = estimator.estimate(&res.mask, &delta, cfg.run.holdout_n, seeds.holdout, &holdout, Phase::Holdout)?;
        rows.push(AblationRow {
            mode,
            survivability: res.survivability,
            holdout: h.value,
            mask_pixels: res.mask.size(),
            queries: session.ledger().total(),
            runtime_secs,
        });
    }
    Ok(rows)
}

pub fn write_ablation(rows: &[AblationRow], dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    std::fs::write(dir.join("ablation.json"), serde_json::to_vec_pretty(rows)?)?;
    write_csv(rows, &dir.join("ablation.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub rows: Vec<EfficiencyRow>,
    pub schedules: Vec<ScheduleReport>,
}

/// Label for this crate's own attack in the efficiency table.
pub const MASKED_BOOST: &str = "masked-boost";
pub const BOUNDARY_BASELINE: &str = "boundary-baseline";

/// Runs the attack once, then the boundary baseline from each start
/// threshold on the same mask. Each baseline run has its own ledger.
pub fn run_efficiency(
    instance: &AttackInstance,
    cfg: &RunConfig,
    oracle: Arc<dyn HardLabelOracle>,
    hooks: &RunHooks,
) -> Result<(EfficiencyReport, RunArtifacts)> {
    let ours = run_attack(instance, cfg, oracle.clone(), hooks)?;
    let estimator = instance.estimator(cfg)?;
    let mask = Mask::new(ours.report.mask.clone(), instance.object.clone())?;
    let mut rows = vec![EfficiencyRow {
        algorithm: MASKED_BOOST.into(),
        initial_threshold: None,
        final_robustness: Some(ours.report.survivability.final_holdout),
        queries: ours.report.ledger.total,
    }];
    let mut schedules = Vec::new();
    let mut sched = cfg.baseline.schedule.clone();
    sched.holdout_n = cfg.run.holdout_n;
    sched.holdout_seed = ours.report.seeds.holdout;
    for &pct in &cfg.baseline.start_thresholds {
        let inner = OracleSession::new(oracle.clone(), Arc::new(QueryLedger::new(None)));
        let rep = threshold_schedule_run(&estimator, &instance.target_example, &mask, pct, &sched, &inner)?;
        rows.push(EfficiencyRow {
            algorithm: BOUNDARY_BASELINE.into(),
            initial_threshold: Some(pct),
            final_robustness: rep.final_robustness,
            queries: rep.total_queries(),
        });
        schedules.push(rep);
    }
    Ok((EfficiencyReport { rows, schedules }, ours))
}

impl EfficiencyReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        std::fs::write(dir.join("efficiency.json"), serde_json::to_vec_pretty(self)?)?;
        write_csv(&self.rows, &dir.join("efficiency.csv"))
    }
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::error::Error::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::error::Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
