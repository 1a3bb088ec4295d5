//! The JSON run configuration. Every field has a default, so an empty
//! object (or no file at all) is a valid configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ktlab::baselines::{BktFitConfig, DktConfig, IrtConfig, PfaConfig};
use ktlab::data::{ColumnMap, TestSpec};
use ktlab::eval::{LmSpec, LoraSpec, ModelKind, ModelSpec};
use ktlab::ktlp::{PromptTemplate, RepresentationMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub mode: RepresentationMode,
    pub template: PromptTemplate,
    pub datasets: Vec<DatasetConfig>,
    pub models: Vec<ModelSpec>,
    pub grid: GridConfig,
    /// Backbone and schedule for `train-lm` and `finetune-lora`.
    pub lm: LmSpec,
    pub lora: LoraSpec,
    pub baselines: BaselineConfig,
    pub crossdomain: Option<CrossDomainConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            threads: 1,
            mode: RepresentationMode::default(),
            template: PromptTemplate::default(),
            datasets: Vec::new(),
            models: Vec::new(),
            grid: GridConfig::default(),
            lm: LmSpec::default(),
            lora: LoraSpec::default(),
            baselines: BaselineConfig::default(),
            crossdomain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub schema: ColumnMap,
    #[serde(default = "default_min")]
    pub min_interactions: usize,
    #[serde(default = "default_max")]
    pub max_interactions: usize,
    #[serde(default = "default_test")]
    pub test: TestSpec,
    /// Seed of the learner-level split; the global seed when absent.
    #[serde(default)]
    pub split_seed: Option<u64>,
}

fn default_min() -> usize {
    6
}

fn default_max() -> usize {
    50
}

fn default_test() -> TestSpec {
    TestSpec::Fraction(0.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            sizes: vec![8, 16, 32, 64],
            seeds: (0..5).collect(),
            n_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub bkt: BktFitConfig,
    pub irt_lambda: f64,
    pub irt: IrtConfig,
    pub pfa: PfaConfig,
    pub dkt: DktConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            bkt: BktFitConfig::default(),
            irt_lambda: 0.1,
            irt: IrtConfig::default(),
            pfa: PfaConfig::default(),
            dkt: DktConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossDomainConfig {
    pub source: String,
    pub target: String,
    pub model: String,
    #[serde(default)]
    pub n_students: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Checks referenced paths, seed distinctness and name uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                bail!("dataset name `{}` appears twice", d.name);
            }
            if d.max_interactions < d.min_interactions.max(1) {
                bail!("dataset `{}`: max_interactions is below min_interactions", d.name);
            }
            if !d.path.exists() {
                bail!("dataset `{}`: file {} does not exist", d.name, d.path.display());
            }
        }
        let seeds: BTreeSet<u64> = self.grid.seeds.iter().copied().collect();
        if seeds.len() != self.grid.seeds.len() {
            bail!("grid seeds must be distinct");
        }
        if let Some(base) = &self.lm.base {
            if !base.exists() {
                bail!("LM base checkpoint {} does not exist", base.display());
            }
        }
        self.template.validate()?;
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetConfig> {
        self.datasets
            .iter()
            .find(|d| d.name == name)
            .with_context(|| format!("no dataset named `{name}` in the config"))
    }

    /// The configured model list, or every baseline plus the LM when empty.
    pub fn models_or_default(&self) -> Vec<ModelSpec> {
        if !self.models.is_empty() {
            return self.models.clone();
        }
        let b = &self.baselines;
        vec![
            ModelSpec::new("lm", ModelKind::Lm(self.lm.clone())),
            ModelSpec::new("bkt", ModelKind::Bkt(b.bkt)),
            ModelSpec::new(
                "irt",
                ModelKind::Irt {
                    lambda: b.irt_lambda,
                    config: b.irt,
                },
            ),
            ModelSpec::new("pfa", ModelKind::Pfa(b.pfa)),
            ModelSpec::new("dkt", ModelKind::Dkt(b.dkt)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.grid.sizes, vec![8, 16, 32, 64]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn dataset_defaults() {
        let d: DatasetConfig = serde_json::from_str(r#"{"name":"a","path":"x.csv"}"#).unwrap();
        assert_eq!((d.min_interactions, d.max_interactions), (6, 50));
        assert_eq!(d.test, TestSpec::Fraction(0.2));
        let d: DatasetConfig = serde_json::from_str(r#"{"name":"a","path":"x.csv","test":{"count":1000}}"#).unwrap();
        assert_eq!(d.test, TestSpec::Count(1000));
    }

    #[test]
    fn duplicate_seeds_fail_validation() {
        let mut c = RunConfig::default();
        c.grid.seeds = vec![1, 1];
        assert!(c.validate().is_err());
    }
}
