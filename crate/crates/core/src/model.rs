//! The full multi-view model: frozen patch embedder, gated pooling,
//! projection, and encoder-decoder language model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_on_tape, project_and_concat_on_tape, GateVars, GatedPoolParams, ProjectionLayer};
use crate::lm::{LanguageModel, LmVars, ModelSpec, Tokenizer, BOS, EOS, PAD};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor, Var};
use crate::vision::{Image, PatchEmbedder};

/// Parameter groups used by the freeze plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Patch,
    Fusion,
    Projection,
    Lm,
    Lora,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub patch: PatchEmbedder,
    pub gate: GatedPoolParams,
    pub proj: ProjectionLayer,
    pub lm: LanguageModel,
}

/// A tokenized sample with precomputed view embeddings (`N × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub views: Tensor,
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
}

/// Every model parameter registered on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub gate: GateVars,
    pub proj_weight: Var,
    pub proj_bias: Var,
    pub lm: LmVars,
    names: Vec<(String, Group, Var)>,
}

impl Bound {
    pub fn iter(&self) -> impl Iterator<Item = (&str, Group, Var)> {
        self.names.iter().map(|(n, g, v)| (n.as_str(), *g, *v))
    }
}

impl Model {
    /// Seeded initialization. Each component draws from its own stream so
    /// changing one component's shape leaves the others untouched.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let patch = PatchEmbedder::new(
            spec.image_size,
            spec.patch_size,
            spec.h_i,
            spec.init_std,
            &mut SeededRng::derived(seed, 1),
        )?;
        let gate = GatedPoolParams::new(spec.k, spec.m(), spec.init_std, &mut SeededRng::derived(seed, 2))?;
        let proj = ProjectionLayer::new(spec.h_i, spec.h_t, spec.init_std, &mut SeededRng::derived(seed, 3))?;
        let lm = LanguageModel::new(spec, &mut SeededRng::derived(seed, 4))?;
        Ok(Self {
            spec: spec.clone(),
            patch,
            gate,
            proj,
            lm,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Group, &Tensor)> {
        let mut out = vec![
            ("patch.projection".to_string(), Group::Patch, &self.patch.projection),
            ("patch.bias".to_string(), Group::Patch, &self.patch.bias),
            ("patch.position".to_string(), Group::Patch, &self.patch.position),
            ("fusion.w".to_string(), Group::Fusion, &self.gate.w),
            ("fusion.z".to_string(), Group::Fusion, &self.gate.z),
            ("fusion.g".to_string(), Group::Fusion, &self.gate.g),
            ("proj.weight".to_string(), Group::Projection, &self.proj.weight),
            ("proj.bias".to_string(), Group::Projection, &self.proj.bias),
        ];
        for (n, t) in self.lm.params() {
            out.push((n.clone(), Group::Lm, t));
        }
        for (n, a) in self.lm.lora() {
            out.push((format!("lora.{n}.a"), Group::Lora, &a.a));
            out.push((format!("lora.{n}.b"), Group::Lora, &a.b));
        }
        out
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match name {
            "patch.projection" => Some(&mut self.patch.projection),
            "patch.bias" => Some(&mut self.patch.bias),
            "patch.position" => Some(&mut self.patch.position),
            "fusion.w" => Some(&mut self.gate.w),
            "fusion.z" => Some(&mut self.gate.z),
            "fusion.g" => Some(&mut self.gate.g),
            "proj.weight" => Some(&mut self.proj.weight),
            "proj.bias" => Some(&mut self.proj.bias),
            _ => {
                if let Some(rest) = name.strip_prefix("lora.") {
                    let (target, which) = rest.rsplit_once('.')?;
                    let a = self.lm.lora_mut().get_mut(target)?;
                    match which {
                        "a" => Some(&mut a.a),
                        "b" => Some(&mut a.b),
                        _ => None,
                    }
                } else {
                    self.lm.param_mut(name)
                }
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, _, t)| t.numel()).sum()
    }

    /// Flattened view embeddings, one row per camera.
    pub fn view_embeddings(&self, images: &[Image]) -> Result<Tensor> {
        if images.len() != self.spec.n_views {
            return Err(Error::Config(format!(
                "model expects {} views, got {}",
                self.spec.n_views,
                images.len()
            )));
        }
        let mut data = Vec::with_capacity(images.len() * self.spec.m());
        for img in images {
            data.extend_from_slice(self.patch.embed_view(img)?.data());
        }
        Tensor::matrix(images.len(), self.spec.m(), data)
    }

    /// Tokenizes and embeds samples, loading images in parallel.
    pub fn prepare(&self, tok: &Tokenizer, samples: &[&crate::data::QASample]) -> Result<Vec<Example>> {
        samples
            .par_iter()
            .map(|s| {
                let views = self.view_embeddings(&s.load_views()?)?;
                Ok(self.example(tok, s.id.clone(), views, &s.question, &s.answer))
            })
            .collect()
    }

    /// Builds an [`Example`], truncating the question and answer to what the
    /// position tables can hold.
    pub fn example(&self, tok: &Tokenizer, id: String, views: Tensor, question: &str, answer: &str) -> Example {
        let mut q = tok.tokenize(question);
        q.truncate(self.spec.max_question());
        let mut a = tok.tokenize(answer);
        a.truncate(self.spec.max_answer());
        Example {
            id,
            views,
            question: q,
            answer: a,
        }
    }

    /// Registers all parameters; `trainable` decides which receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(Group) -> bool) -> Bound {
        let mut names = Vec::new();
        let mut leaf = |tape: &mut Tape, name: &str, group: Group, t: &Tensor| {
            let v = tape.leaf(t.clone(), trainable(group));
            names.push((name.to_string(), group, v));
            v
        };
        let gate = GateVars {
            w: leaf(tape, "fusion.w", Group::Fusion, &self.gate.w),
            z: leaf(tape, "fusion.z", Group::Fusion, &self.gate.z),
            g: leaf(tape, "fusion.g", Group::Fusion, &self.gate.g),
        };
        let proj_weight = leaf(tape, "proj.weight", Group::Projection, &self.proj.weight);
        let proj_bias = leaf(tape, "proj.bias", Group::Projection, &self.proj.bias);
        let lm = self.lm.bind(tape, trainable(Group::Lm), trainable(Group::Lora));
        for (n, v) in lm.iter() {
            let g = if n.starts_with("lora.") { Group::Lora } else { Group::Lm };
            names.push((n.to_string(), g, v));
        }
        Bound {
            gate,
            proj_weight,
            proj_bias,
            lm,
            names,
        }
    }

    /// Encoder output for one sample: fuse views, project, prepend the
    /// question embedding, add positions, run the encoder.
    pub fn encode_sample(&self, tape: &mut Tape, b: &Bound, views: &Tensor, question: &[usize]) -> Result<(Var, Var)> {
        let vm = tape.constant(views.clone());
        let (alpha, fused) = fuse_on_tape(tape, vm, b.gate)?;
        let fused = tape.reshape(fused, &[self.spec.s_i(), self.spec.h_i])?;
        let text = if question.is_empty() {
            // An empty question still needs a text row; use a single pad.
            self.lm.embed_tokens(tape, &b.lm, &[PAD])?
        } else {
            self.lm.embed_tokens(tape, &b.lm, question)?
        };
        let mm = project_and_concat_on_tape(tape, fused, b.proj_weight, b.proj_bias, text)?;
        let x = self.lm.add_positions(tape, &b.lm, mm, "lm.enc_pos")?;
        Ok((self.lm.encode(tape, &b.lm, x, None)?, alpha))
    }

    /// Teacher-forced logits (`len(answer)+1 × V`) and their targets.
    pub fn sample_logits(&self, tape: &mut Tape, b: &Bound, ex: &Example) -> Result<(Var, Vec<usize>)> {
        let (enc, _) = self.encode_sample(tape, b, &ex.views, &ex.question)?;
        let mut dec_in = Vec::with_capacity(ex.answer.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(&ex.answer);
        let mut targets = ex.answer.clone();
        targets.push(EOS);
        Ok((self.lm.decode(tape, &b.lm, &dec_in, enc, None)?, targets))
    }

    /// Mean token cross-entropy over a batch.
    pub fn batch_loss(&self, tape: &mut Tape, b: &Bound, batch: &[&Example]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Empty("batch has no examples".into()));
        }
        let mut logits = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        for ex in batch {
            let (l, t) = self.sample_logits(tape, b, ex)?;
            logits.push(l);
            targets.extend(t);
        }
        let all = if logits.len() == 1 {
            logits[0]
        } else {
            tape.concat_rows(&logits)?
        };
        // No target is ever PAD here, so every row counts.
        tape.cross_entropy(all, &targets, PAD)
    }

    /// Greedy answer for one sample.
    pub fn generate(&self, views: &Tensor, question: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, |_| false);
        let (enc, _) = self.encode_sample(&mut tape, &b, views, question)?;
        self.lm.greedy_from_encoding(&mut tape, &b.lm, enc, None, max_len)
    }

    /// Fusion weights the model assigns to each view of a sample.
    pub fn view_weights(&self, views: &Tensor, question: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, |_| false);
        let (_, alpha) = self.encode_sample(&mut tape, &b, views, question)?;
        Ok(tape.value(alpha).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            image_size: 8,
            patch_size: 4,
            h_i: 4,
            n_views: 3,
            k: 3,
            h_t: 8,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 10,
            max_seq: 12,
            ..ModelSpec::desk(10)
        }
    }

    #[test]
    fn parameter_enumeration_is_complete() {
        let mut m = Model::new(&tiny_spec(), 1).unwrap();
        let names: Vec<String> = m.named_params().into_iter().map(|(n, _, _)| n).collect();
        let total: usize = m.num_params();
        assert_eq!(
            total,
            m.patch.num_params() + m.gate.num_params() + m.proj.num_params() + m.lm.num_params()
        );
        for n in &names {
            assert!(m.param_mut(n).is_some(), "{n}");
        }
    }

    #[test]
    fn loss_is_finite_and_generation_runs() {
        let m = Model::new(&tiny_spec(), 2).unwrap();
        let mut rng = SeededRng::new(3);
        let ex = Example {
            id: "x".into(),
            views: Tensor::randn(&[3, m.spec.m()], 1.0, &mut rng).unwrap(),
            question: vec![4, 5, 6],
            answer: vec![7, 8],
        };
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, |g| g != Group::Patch);
        let loss = m.batch_loss(&mut tape, &b, &[&ex, &ex]).unwrap();
        let v = tape.value(loss).item();
        assert!(v.is_finite() && v > 0.0);
        let out = m.generate(&ex.views, &ex.question, 4).unwrap();
        assert!(out.len() <= 4);
        let alpha = m.view_weights(&ex.views, &ex.question).unwrap();
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
