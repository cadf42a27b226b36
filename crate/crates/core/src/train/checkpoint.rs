use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, Moments, TrainConfig, TrainState};
use crate::container::{ArrayData, ArrayRecord, Container, Dtype};
use crate::error::{Error, Result};
use crate::lm::{ModelSpec, QuantizedLinear, Tokenizer};
use crate::model::Model;
use crate::rng::{RngState, SeededRng};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "mvfuse-checkpoint";

/// A model with its vocabulary, training configuration, and resumable state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Tokenizer,
    pub train: TrainConfig,
    pub state: TrainState,
    /// Storage type for floating-point arrays (`F64`, or `F32` for size accounting).
    pub dtype: Dtype,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterMeta {
    target: String,
    rank: usize,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateMeta {
    stage: u8,
    epoch: usize,
    step: u64,
    rng: RngState,
    losses: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    kind: String,
    checkpoint_version: u32,
    dtype: Dtype,
    model: ModelSpec,
    vocab: Vec<String>,
    train: TrainConfig,
    lora: Vec<AdapterMeta>,
    state: StateMeta,
}

fn float_array(name: String, t: &Tensor, dtype: Dtype) -> ArrayRecord {
    ArrayRecord::from_tensor(name, t, dtype)
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let meta = Meta {
            kind: KIND.into(),
            checkpoint_version: CHECKPOINT_VERSION,
            dtype: self.dtype,
            model: self.model.spec.clone(),
            vocab: self.vocab.words().to_vec(),
            train: self.train.clone(),
            lora: self
                .model
                .lm
                .lora()
                .values()
                .map(|a| AdapterMeta {
                    target: a.target.clone(),
                    rank: a.rank,
                    alpha: a.alpha,
                })
                .collect(),
            state: StateMeta {
                stage: self.state.stage,
                epoch: self.state.epoch,
                step: self.state.step,
                rng: self.state.rng.state(),
                losses: self.state.losses.clone(),
            },
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::json("checkpoint header", e))?;
        let mut c = Container::new(meta);
        let quantized = self.model.lm.quantized();
        for (name, _, t) in self.model.named_params() {
            match quantized.get(&name) {
                Some(q) => c.push(ArrayRecord {
                    name: format!("param.{name}"),
                    shape: q.shape.to_vec(),
                    data: ArrayData::I8(q.values.clone()),
                    scale: Some(q.scale),
                }),
                None => c.push(float_array(format!("param.{name}"), t, self.dtype)),
            }
        }
        for (name, m) in &self.state.moments {
            c.push(float_array(format!("adam_m.{name}"), &m.m, self.dtype));
            c.push(float_array(format!("adam_v.{name}"), &m.v, self.dtype));
        }
        Ok(c)
    }

    /// Rebuilds a checkpoint. With `expected`, the stored arrays must fit
    /// that spec; the first array that does not is named in the error.
    pub fn from_container(c: &Container, expected: Option<&ModelSpec>) -> Result<Self> {
        let meta: Meta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if meta.kind != KIND {
            return Err(Error::Format(format!("not a checkpoint (kind `{}`)", meta.kind)));
        }
        if meta.checkpoint_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                meta.checkpoint_version
            )));
        }
        let spec = expected.cloned().unwrap_or(meta.model);
        let vocab = Tokenizer::from_lines(&(meta.vocab.join("\n") + "\n"))?;
        let mut model = Model::new(&spec, 0)?;
        for a in &meta.lora {
            model
                .lm
                .attach_lora(std::slice::from_ref(&a.target), a.rank, a.alpha, &mut SeededRng::new(0))?;
        }

        let names: Vec<(String, Vec<usize>)> = model
            .named_params()
            .into_iter()
            .map(|(n, _, t)| (n, t.shape().to_vec()))
            .collect();
        for (name, shape) in names {
            let key = format!("param.{name}");
            let rec = c
                .get(&key)
                .ok_or_else(|| Error::Format(format!("array `{key}` is missing")))?;
            if rec.shape != shape {
                return Err(Error::Format(format!(
                    "array `{key}` has shape {:?}, model expects {shape:?}",
                    rec.shape
                )));
            }
            if let ArrayData::I8(values) = &rec.data {
                let q = QuantizedLinear {
                    shape: [shape[0], shape[1]],
                    values: values.clone(),
                    scale: rec.scale.unwrap_or(1.0),
                    bias: None,
                };
                model.lm.set_quantized(&name, q)?;
            } else {
                *model.param_mut(&name).expect("enumerated name") = c.tensor(&key)?;
            }
        }

        let mut moments = IndexMap::new();
        for rec in &c.arrays {
            if let Some(name) = rec.name.strip_prefix("adam_m.") {
                let v_key = format!("adam_v.{name}");
                moments.insert(
                    name.to_string(),
                    Moments {
                        m: c.tensor(&rec.name)?,
                        v: c.tensor(&v_key)?,
                    },
                );
            }
        }
        let state = TrainState {
            stage: meta.state.stage,
            epoch: meta.state.epoch,
            step: meta.state.step,
            rng: SeededRng::from_state(meta.state.rng),
            moments,
            losses: meta.state.losses,
        };
        Ok(Self {
            model,
            vocab,
            train: meta.train,
            state,
            dtype: meta.dtype,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?, None)
    }

    pub fn load_with_spec(path: &Path, spec: &ModelSpec) -> Result<Self> {
        Self::from_container(&Container::read(path)?, Some(spec))
    }
}
