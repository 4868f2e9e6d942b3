use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::ScheduleConfig;
use crate::boost::BoostConfig;
use crate::error::{Error, Result};
use crate::fixture::DeskFixture;
use crate::imaging::{read_mask_png, read_png};
use crate::maskgen::MaskGenConfig;
use crate::oracle::{ExternalProcessOracle, HardLabelOracle, HttpOracle, Label, TemplateClassifier};
use crate::transforms::TransformDistribution;

use super::run::AttackInstance;
use super::run::RoundPolicy;

/// The whole run description, one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub instance: InstanceConfig,
    pub oracle: OracleConfig,
    pub transforms: TransformsConfig,
    pub maskgen: MaskGenConfig,
    pub boost: BoostConfig,
    pub baseline: BaselineSection,
    pub iterative: IterativeSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub holdout_n: usize,
    /// Hard cap on attack queries across all phases.
    pub max_queries: Option<u64>,
    pub checkpoints: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, holdout_n: 1000, max_queries: None, checkpoints: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceConfig {
    /// The built-in synthetic scene.
    Desk {
        #[serde(default)]
        fixture: DeskFixture,
    },
    /// Images on disk. Paths are relative to the config file.
    Files {
        victim: PathBuf,
        target_example: PathBuf,
        object: PathBuf,
        target_label: i64,
        perturb_resolution: usize,
    },
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig::Desk { fixture: DeskFixture::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// `builtin`, `proc:<command>` or `http:<url>`.
    pub spec: String,
    /// Prototype images `(label, path)` for a builtin classifier on a file instance.
    pub prototypes: Vec<(i64, PathBuf)>,
    pub timeout_secs: u64,
    /// Environment variable holding an HTTP bearer token.
    pub token_env: Option<String>,
    pub cache: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { spec: "builtin".into(), prototypes: Vec::new(), timeout_secs: 30, token_env: None, cache: false }
    }
}

/// A named preset with optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformsConfig {
    pub preset: String,
    pub rot_y_max: Option<f64>,
    pub focal: Option<f64>,
    pub distance_max: Option<f64>,
    pub crop_percent_max: Option<f64>,
    pub gamma_max: Option<f64>,
    pub blur_kernels: Option<Vec<usize>>,
    pub background: Option<f64>,
}

impl Default for TransformsConfig {
    fn default() -> Self {
        Self {
            preset: "gtsrb".into(),
            rot_y_max: None,
            focal: None,
            distance_max: None,
            crop_percent_max: None,
            gamma_max: None,
            blur_kernels: None,
            background: None,
        }
    }
}

impl TransformsConfig {
    pub fn resolve(&self) -> Result<TransformDistribution> {
        let mut d = TransformDistribution::preset(&self.preset)?;
        let d_span = d.distance_range[1] - d.distance_range[0];
        if let Some(v) = self.rot_y_max {
            d.rot_y_max = v;
        }
        if let Some(f) = self.focal {
            d.focal = f;
            d.distance_range = [f, f + d_span];
        }
        if let Some(v) = self.distance_max {
            d.distance_range[1] = v;
        }
        if let Some(v) = self.crop_percent_max {
            d.crop_percent_max = v;
        }
        if let Some(v) = self.gamma_max {
            d.gamma_max = v;
        }
        if let Some(v) = &self.blur_kernels {
            d.blur_kernels = v.clone();
        }
        if let Some(v) = self.background {
            d.background = v;
        }
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub schedule: ScheduleConfig,
    pub start_thresholds: Vec<u32>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { schedule: ScheduleConfig::default(), start_thresholds: (40..=100).step_by(10).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterativeSection {
    pub rounds: Vec<RoundPolicy>,
}

impl Default for IterativeSection {
    fn default() -> Self {
        Self {
            rounds: vec![
                RoundPolicy::Generate { patch_size: 8, stride: 4 },
                RoundPolicy::Generate { patch_size: 4, stride: 2 },
                RoundPolicy::Border { width: 2 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub budgets: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { budgets: (1..=8).map(|k| k * 25_000).collect() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_toml(&text)?, base))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn validate(&self) -> Result<()> {
        self.maskgen.validate()?;
        self.boost.validate()?;
        self.transforms.resolve()?;
        if self.run.holdout_n == 0 {
            return Err(Error::Config("holdout_n must be >= 1".into()));
        }
        Ok(())
    }

    pub fn instance(&self, base: &Path) -> Result<AttackInstance> {
        match &self.instance {
            InstanceConfig::Desk { fixture } => {
                let s = fixture.scenario()?;
                AttackInstance::new(s.victim, s.target_example, s.target_label, s.object)
            }
            InstanceConfig::Files { victim, target_example, object, target_label, perturb_resolution } => {
                let object = read_mask_png(base.join(object))?;
                let object = if object.width() == *perturb_resolution && object.height() == *perturb_resolution {
                    object
                } else {
                    object.resample_nearest(*perturb_resolution, *perturb_resolution)
                };
                AttackInstance::new(read_png(base.join(victim))?, read_png(base.join(target_example))?, Label(*target_label), object)
            }
        }
    }

    /// Builds the oracle named by `spec`.
    pub fn oracle(&self, base: &Path) -> Result<Arc<dyn HardLabelOracle>> {
        let spec = self.oracle.spec.as_str();
        let timeout = Duration::from_secs(self.oracle.timeout_secs);
        if spec == "builtin" {
            return Ok(match &self.instance {
                InstanceConfig::Desk { fixture } if self.oracle.prototypes.is_empty() => Arc::new(fixture.classifier()?),
                _ => {
                    if self.oracle.prototypes.is_empty() {
                        return Err(Error::Config("builtin oracle on a file instance needs [oracle] prototypes".into()));
                    }
                    let protos = self
                        .oracle
                        .prototypes
                        .iter()
                        .map(|(l, p)| Ok((Label(*l), read_png(base.join(p))?)))
                        .collect::<Result<Vec<_>>>()?;
                    Arc::new(TemplateClassifier::new(protos)?)
                }
            });
        }
        if let Some(cmd) = spec.strip_prefix("proc:") {
            return Ok(Arc::new(ExternalProcessOracle::with_timeout(cmd, timeout)?));
        }
        if let Some(url) = spec.strip_prefix("http:") {
            let token = match &self.oracle.token_env {
                Some(var) => Some(std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?),
                None => None,
            };
            // Accept both `http:host:port` and `http:http://host:port`.
            let url = if url.starts_with("http://") || url.starts_with("https://") { url.to_string() } else { format!("http://{url}") };
            return Ok(Arc::new(HttpOracle::new(&url, token, timeout)));
        }
        Err(Error::Config(format!("unknown oracle spec {spec:?}; expected builtin, proc:CMD or http:URL")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(c.sweep.budgets.len(), 8);
        c.validate().unwrap();
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_toml("[run]\nseed = 5\n[boost]\nbudget = 100\n[transforms]\npreset = \"alpr\"\n").unwrap();
        assert_eq!((c.run.seed, c.boost.budget, c.boost.q), (5, 100, 10));
        assert_eq!(c.transforms.resolve().unwrap(), TransformDistribution::alpr());
        assert!(RunConfig::from_toml("[run]\nsede = 5\n").is_err());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn bad_oracle_spec_is_config_error() {
        let c = RunConfig { oracle: OracleConfig { spec: "grpc:x".into(), ..Default::default() }, ..Default::default() };
        assert!(matches!(c.oracle(Path::new(".")), Err(Error::Config(_))));
    }
}
