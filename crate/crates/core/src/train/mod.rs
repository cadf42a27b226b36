//! Two-stage training: stage 1 fits the gate and projection against a
//! frozen language model; stage 2 also finetunes the language model (or only
//! its LoRA adapters). The patch embedder never trains.

mod checkpoint;
mod optim;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use optim::{lr_schedule, AdamW};

use crate::error::{Error, Result};
use crate::model::{Example, Group, Model};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Weight matrix names; all attention query/value projections when absent.
    pub targets: Option<Vec<String>>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            targets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    /// Per-epoch decay factor of the exponential schedule.
    pub lr_gamma: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Start stage 2 with fresh optimizer moments.
    pub reset_optimizer: bool,
    /// Adapter finetuning: stage 2 trains only the adapters, not the base.
    pub lora: Option<LoraConfig>,
    /// Store language model matrices as int8 (requires `lora`).
    pub quantize: bool,
    /// Longest generated answer, in tokens.
    pub max_answer_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            weight_decay: 0.05,
            batch_size: 4,
            epochs_per_stage: 6,
            lr_gamma: 0.9,
            seed: 7,
            clip_norm: Some(1.0),
            reset_optimizer: true,
            lora: None,
            quantize: false,
            max_answer_len: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            problems.push(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        if self.epochs_per_stage == 0 {
            problems.push("epochs_per_stage must be positive".into());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            problems.push(format!("lr_gamma {} must be in (0, 1]", self.lr_gamma));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                problems.push(format!("clip_norm {c} must be positive"));
            }
        }
        if let Some(l) = &self.lora {
            if l.rank == 0 || !(l.alpha > 0.0 && l.alpha.is_finite()) {
                problems.push(format!("lora rank {} and alpha {} must be positive", l.rank, l.alpha));
            }
        }
        if self.quantize && self.lora.is_none() {
            problems.push("quantize requires lora: int8 base weights cannot be finetuned directly".into());
        }
        if self.max_answer_len == 0 {
            problems.push("max_answer_len must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Attaches adapters and quantizes as configured. Call once on a fresh model.
    pub fn apply_variant(&self, model: &mut Model) -> Result<()> {
        if let Some(l) = &self.lora {
            let targets = l.targets.clone().unwrap_or_else(|| model.lm.default_lora_targets());
            model
                .lm
                .attach_lora(&targets, l.rank, l.alpha, &mut SeededRng::derived(self.seed, 5))?;
        }
        if self.quantize {
            model.lm.quantize()?;
        }
        Ok(())
    }
}

/// Which groups train in a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: u8,
    pub trainable: Vec<Group>,
    pub frozen: Vec<Group>,
}

impl StagePlan {
    pub fn new(stage: u8, lora: bool) -> Result<Self> {
        use Group::*;
        let (trainable, frozen) = match (stage, lora) {
            (1, _) => (vec![Fusion, Projection], vec![Patch, Lm, Lora]),
            (2, false) => (vec![Fusion, Projection, Lm], vec![Patch, Lora]),
            (2, true) => (vec![Fusion, Projection, Lora], vec![Patch, Lm]),
            _ => return Err(Error::Config(format!("stage must be 1 or 2, got {stage}"))),
        };
        Ok(Self {
            stage,
            trainable,
            frozen,
        })
    }

    pub fn trains(&self, g: Group) -> bool {
        self.trainable.contains(&g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Optimizer moments for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Stage in progress or last finished; 0 before any training.
    pub stage: u8,
    /// Epochs finished within `stage`.
    pub epoch: usize,
    /// Optimizer steps taken since the moments were last reset.
    pub step: u64,
    pub rng: SeededRng,
    pub moments: IndexMap<String, Moments>,
    pub losses: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            stage: 0,
            epoch: 0,
            step: 0,
            rng: SeededRng::derived(seed, 100),
            moments: IndexMap::new(),
            losses: Vec::new(),
        }
    }

    pub fn stage_complete(&self, cfg: &TrainConfig) -> bool {
        self.epoch >= cfg.epochs_per_stage
    }
}

/// Runs (or resumes) `plan.stage` until `epochs_per_stage` epochs are done,
/// or until `epoch_limit` epochs are done when given.
pub fn run_stage(
    model: &mut Model,
    plan: &StagePlan,
    cfg: &TrainConfig,
    data: &[Example],
    state: &mut TrainState,
    epoch_limit: Option<usize>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set has no samples".into()));
    }
    if plan.stage != state.stage {
        match (plan.stage, state.stage) {
            (1, 0) => {}
            (2, 1) if state.stage_complete(cfg) => {}
            (2, _) => return Err(Error::Config("stage 2 needs a completed stage-1 checkpoint".into())),
            (s, cur) => {
                return Err(Error::Config(format!(
                    "cannot start stage {s} from a run at stage {cur}"
                )))
            }
        }
        state.stage = plan.stage;
        state.epoch = 0;
        state.rng = SeededRng::derived(cfg.seed, 100 + u64::from(plan.stage));
        if cfg.reset_optimizer {
            state.moments.clear();
            state.step = 0;
        }
    }
    if plan.trains(Group::Lm) && model.lm.is_quantized() {
        return Err(Error::Config("int8 language model weights cannot be finetuned".into()));
    }

    let opt = AdamW::default();
    let end = epoch_limit.unwrap_or(cfg.epochs_per_stage).min(cfg.epochs_per_stage);
    while state.epoch < end {
        let lr = lr_schedule(cfg.lr0, cfg.lr_gamma, state.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        state.rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            total += train_step(model, plan, cfg, &opt, &batch, state, lr)?;
            batches += 1;
        }
        state.losses.push(EpochRecord {
            stage: plan.stage,
            epoch: state.epoch,
            mean_loss: total / batches as f64,
            lr,
        });
        state.epoch += 1;
    }
    Ok(())
}

fn train_step(
    model: &mut Model,
    plan: &StagePlan,
    cfg: &TrainConfig,
    opt: &AdamW,
    batch: &[&Example],
    state: &mut TrainState,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, |g| plan.trains(g));
    let loss = model.batch_loss(&mut tape, &bound, batch)?;
    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        return Err(Error::Numeric {
            param: "loss".into(),
            what: "value",
        });
    }
    let grads = tape.backward(loss)?;

    let mut updates: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, group, var) in bound.iter() {
        if !plan.trains(group) {
            continue;
        }
        let g = match grads.raw(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(var).numel()],
        };
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                param: name.to_string(),
                what: "gradient",
            });
        }
        updates.push((name.to_string(), g));
    }
    if let Some(clip) = cfg.clip_norm {
        let norm = updates
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if norm > clip {
            let s = clip / norm;
            for (_, g) in updates.iter_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    state.step += 1;
    for (name, g) in updates {
        let param = model
            .param_mut(&name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let mom = state.moments.entry(name).or_insert_with(|| Moments {
            m: Tensor::zeros(param.shape()).expect("non-empty shape"),
            v: Tensor::zeros(param.shape()).expect("non-empty shape"),
        });
        opt.step(
            param.data_mut(),
            &g,
            mom.m.data_mut(),
            mom.v.data_mut(),
            state.step,
            lr,
            cfg.weight_decay,
        );
    }
    Ok(loss_value)
}
