//! Monte-Carlo survivability, its sampling-error bound and local Lipschitz tracking.
//!
//! `S(M, d)` is the fraction of `n` sampled transforms under which the
//! perturbed scene is classified as the target. The transform sequence is
//! a pure function of the seed, so two estimates under one seed are paired.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Partial, Result};
use crate::imaging::{apply_perturbation, BinaryGrid, Image, Mask, Perturbation};
use crate::oracle::{Label, OracleSession, Phase};
use crate::transforms::{PreparedTransform, TransformDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivabilityEstimate {
    pub value: f64,
    /// Transforms actually evaluated.
    pub n: usize,
    pub seed: u64,
    pub queries_spent: u64,
    pub hits: usize,
}

impl SurvivabilityEstimate {
    fn from_hits(hits: usize, n: usize, seed: u64, queries_spent: u64) -> Self {
        let value = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        Self { value, n, seed, queries_spent, hits }
    }
}

/// Outcome of an early-exit threshold test, as the full estimate would have decided it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Above,
    Exact,
    Below,
}

/// Survivability of perturbations of one scene toward one target label.
#[derive(Debug, Clone)]
pub struct SurvivabilityEstimator {
    scene: Image,
    object: BinaryGrid,
    target: Label,
    dist: TransformDistribution,
}

impl SurvivabilityEstimator {
    /// `object` lives on the perturbation plane; it is scaled to the scene when framing crops.
    pub fn new(scene: Image, object: BinaryGrid, target: Label, dist: TransformDistribution) -> Result<Self> {
        dist.validate()?;
        if object.is_empty() {
            return Err(Error::invalid("empty object region"));
        }
        Ok(Self { scene, object, target, dist })
    }

    pub fn scene(&self) -> &Image {
        &self.scene
    }

    pub fn object(&self) -> &BinaryGrid {
        &self.object
    }

    pub fn target(&self) -> Label {
        self.target
    }

    pub fn distribution(&self) -> &TransformDistribution {
        &self.dist
    }

    /// Same object, target and transforms over a different base scene.
    pub fn with_scene(&self, scene: Image) -> Self {
        Self { scene, ..self.clone() }
    }

    pub fn transforms(&self, n: usize, seed: u64) -> Result<Vec<PreparedTransform>> {
        self.dist.prepare_set(seed, n, self.scene.width(), self.scene.height(), &self.object)
    }

    pub fn compose(&self, mask: &Mask, delta: &Perturbation) -> Result<Image> {
        apply_perturbation(&self.scene, mask, delta)
    }

    pub fn estimate(
        &self,
        mask: &Mask,
        delta: &Perturbation,
        n: usize,
        seed: u64,
        session: &OracleSession,
        phase: Phase,
    ) -> Result<SurvivabilityEstimate> {
        self.estimate_image(&self.compose(mask, delta)?, n, seed, session, phase)
    }

    /// Survivability of an already composed scene.
    pub fn estimate_image(
        &self,
        img: &Image,
        n: usize,
        seed: u64,
        session: &OracleSession,
        phase: Phase,
    ) -> Result<SurvivabilityEstimate> {
        if n == 0 {
            return Err(Error::invalid("survivability needs n >= 1"));
        }
        let ts = self.transforms(n, seed)?;
        let batch = session.query_batch(n, |i| ts[i].apply(img), phase)?;
        let hits = batch.labels.iter().filter(|l| **l == self.target).count();
        let spent = batch.labels.len();
        let est = SurvivabilityEstimate::from_hits(hits, spent, seed, spent as u64);
        if batch.exhausted {
            return Err(session.ledger().exceeded().with_partial(Partial::Estimate(est)));
        }
        Ok(SurvivabilityEstimate { n, ..est })
    }

    /// Decides `S >= threshold` one query at a time, stopping once the full
    /// `n`-sample answer is settled. Returns the decision and queries spent.
    #[allow(clippy::too_many_arguments)]
    pub fn decide(
        &self,
        mask: &Mask,
        delta: &Perturbation,
        n: usize,
        seed: u64,
        threshold: f64,
        session: &OracleSession,
        phase: Phase,
    ) -> Result<(Decision, u64)> {
        if n == 0 {
            return Err(Error::invalid("survivability needs n >= 1"));
        }
        let img = self.compose(mask, delta)?;
        let ts = self.transforms(n, seed)?;
        let k = threshold * n as f64;
        let mut hits = 0usize;
        for (i, t) in ts.iter().enumerate() {
            if session.query(&t.apply(&img)?, phase)? == self.target {
                hits += 1;
            }
            let spent = i + 1;
            if hits as f64 > k {
                return Ok((Decision::Above, spent as u64));
            }
            if ((hits + n - spent) as f64) < k {
                return Ok((Decision::Below, spent as u64));
            }
        }
        let d = if hits as f64 == k { Decision::Exact } else if (hits as f64) > k { Decision::Above } else { Decision::Below };
        Ok((d, n as u64))
    }
}

/// `S(M, d)` for a scene `x` toward `y_adv`.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    x: &Image,
    m: &Mask,
    d: &Perturbation,
    y_adv: Label,
    dist: &TransformDistribution,
    n: usize,
    session: &OracleSession,
    seed: u64,
) -> Result<SurvivabilityEstimate> {
    SurvivabilityEstimator::new(x.clone(), m.object().clone(), y_adv, dist.clone())?.estimate(m, d, n, seed, session, Phase::Direct)
}

fn check_bound_args(q: f64, eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("q must lie in (0, 1], got {q}")));
    }
    Ok(())
}

/// Sampling-error bound `2 exp(-n q^3 / (3 eps^2))`, clamped to `[0, 1]`.
///
/// This is the instantiation as printed. See [`chernoff_bound_derived`].
pub fn chernoff_bound(n: usize, q: f64, eps: f64) -> Result<f64> {
    check_bound_args(q, eps)?;
    Ok((2.0 * (-(n as f64) * q.powi(3) / (3.0 * eps * eps)).exp()).clamp(0.0, 1.0))
}

/// The multiplicative Chernoff bound `2 exp(-n q zeta^2 / 3)` with
/// `zeta = eps / q`, i.e. `2 exp(-n eps^2 / (3 q))`, clamped to `[0, 1]`.
pub fn chernoff_bound_derived(n: usize, q: f64, eps: f64) -> Result<f64> {
    check_bound_args(q, eps)?;
    let zeta = eps / q;
    Ok((2.0 * (-(n as f64) * q * zeta * zeta / 3.0).exp()).clamp(0.0, 1.0))
}

/// Observed `|S(d + step) - S(d)| / |step|` ratios.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzTrace {
    pub samples: Vec<f64>,
    pub max: f64,
}

impl LipschitzTrace {
    pub fn record(&mut self, s_new: f64, s_base: f64, step: &[f64]) -> Result<f64> {
        let norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.record_norm(s_new, s_base, norm)
    }

    pub fn record_norm(&mut self, s_new: f64, s_base: f64, step_norm: f64) -> Result<f64> {
        if !(step_norm > 0.0 && step_norm.is_finite()) {
            return Err(Error::invalid("Lipschitz step must have positive finite norm"));
        }
        let ratio = (s_new - s_base).abs() / step_norm;
        self.samples.push(ratio);
        self.max = self.max.max(ratio);
        Ok(ratio)
    }

    pub fn merge(&mut self, other: &LipschitzTrace) {
        self.samples.extend_from_slice(&other.samples);
        self.max = self.max.max(other.max);
    }
}

/// Functional form of [`LipschitzTrace::record`].
pub fn lipschitz_record(mut trace: LipschitzTrace, s_new: f64, s_base: f64, step: &[f64]) -> Result<LipschitzTrace> {
    trace.record(s_new, s_base, step)?;
    Ok(trace)
}
