use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{self, ArchSpec, GbUnit, SeqLens};
use crate::error::{Error, Result};
use crate::lm::ModelSpec;
use crate::metrics::MetricOptions;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Train, validation, and test fractions of the scenes.
    pub fractions: [f64; 3],
    pub split_seed: u64,
    /// Reject the whole dataset on the first invalid record.
    pub strict: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            fractions: [0.9, 0.05, 0.05],
            split_seed: 7,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub predictions: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub bleu_smoothing: bool,
    pub meteor_stem: bool,
}

impl EvalConfig {
    pub fn options(&self) -> MetricOptions {
        MetricOptions {
            bleu_smoothing: self.bleu_smoothing,
            meteor_stem: self.meteor_stem,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Base,
    QLarge,
    T5Base,
    T5Large,
    /// The runnable model described by the `model` section.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub preset: Option<Preset>,
    pub arch: Option<ArchSpec>,
    pub seq: SeqLens,
    pub unit: GbUnit,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            preset: None,
            arch: None,
            seq: SeqLens::published(),
            unit: GbUnit::Decimal,
        }
    }
}

/// A full run description. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `vocab_size` 0 means "size of the training vocabulary".
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub cost: CostConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.data.manifest);
        resolve(base, &mut cfg.eval.predictions);
        resolve(base, &mut cfg.eval.references);
        Ok(cfg)
    }

    /// Checks every section and reports all problems together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut model = self.model.clone();
        if model.vocab_size == 0 {
            // Placeholder: the real size is only known once the corpus is read.
            model.vocab_size = 5;
        }
        let checks = [model.validate(), self.train.validate()];
        for e in checks.into_iter().filter_map(|r| r.err()) {
            problems.push(e.to_string());
        }
        let [a, b, c] = self.data.fractions;
        if [a, b, c].iter().any(|f| f.is_nan() || *f < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            problems.push(format!(
                "data.fractions {:?} must be non-negative and sum to 1",
                self.data.fractions
            ));
        }
        if let Some(m) = &self.data.manifest {
            if !m.is_file() {
                problems.push(format!("data.manifest {} does not exist", m.display()));
            }
        }
        if self.cost.preset.is_some() && self.cost.arch.is_some() {
            problems.push("cost.preset and cost.arch are mutually exclusive".into());
        }
        if let Some(a) = &self.cost.arch {
            if let Err(e) = a.validate() {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn arch(&self, preset: Preset) -> ArchSpec {
        match preset {
            Preset::Base => cost::em_base(),
            Preset::QLarge => cost::q_large(),
            Preset::T5Base => cost::t5_base(),
            Preset::T5Large => cost::t5_large(),
            Preset::Desk => cost::from_model_spec(&self.model),
        }
    }
}
