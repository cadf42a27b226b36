use std::collections::HashMap;

use indexmap::IndexMap;

use super::lora::LoraAdapter;
use super::quant::{quantize_int8, QuantizedLinear};
use super::spec::ModelSpec;
use super::tokenizer::{BOS, EOS};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor, Var};

/// Pre-norm encoder-decoder transformer with learned absolute positions.
///
/// Linear maps are bias-free and applied as `x·W` with `W` stored
/// `d_in × d_out`. Layer norms carry a gain and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    spec: ModelSpec,
    params: IndexMap<String, Tensor>,
    quantized: IndexMap<String, QuantizedLinear>,
    lora: IndexMap<String, LoraAdapter>,
}

/// Language model parameters registered on a tape.
#[derive(Debug, Clone, Default)]
pub struct LmVars {
    vars: HashMap<String, Var>,
    lora: HashMap<String, (Var, Var, f64)>,
    names: Vec<(String, Var)>,
}

impl LmVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown language model parameter `{name}`")))
    }

    /// Every bound parameter, base weights first, then `lora.<target>.{a,b}`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.names.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

fn ln_names(prefix: &str) -> [String; 2] {
    [format!("{prefix}.gain"), format!("{prefix}.bias")]
}

struct Builder<'r> {
    params: IndexMap<String, Tensor>,
    rng: &'r mut SeededRng,
    std: f64,
    width: usize,
}

impl Builder<'_> {
    fn mat(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        let t = Tensor::randn(&[rows, cols], self.std, self.rng)?;
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    fn norm(&mut self, prefix: &str) -> Result<()> {
        let [g, b] = ln_names(prefix);
        self.params.insert(g, Tensor::full(&[self.width], 1.0)?);
        self.params.insert(b, Tensor::zeros(&[self.width])?);
        Ok(())
    }

    fn ffn(&mut self, prefix: &str, spec: &ModelSpec) -> Result<()> {
        if spec.gated_ffn {
            self.mat(&format!("{prefix}.ffn.wi0"), spec.h_t, spec.d_ff)?;
            self.mat(&format!("{prefix}.ffn.wi1"), spec.h_t, spec.d_ff)?;
        } else {
            self.mat(&format!("{prefix}.ffn.wi"), spec.h_t, spec.d_ff)?;
        }
        self.mat(&format!("{prefix}.ffn.wo"), spec.d_ff, spec.h_t)
    }
}

impl LanguageModel {
    pub fn new(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let (h, v) = (spec.h_t, spec.vocab_size);
        let mut b = Builder {
            params: IndexMap::new(),
            rng,
            std: spec.lm_init_std,
            width: h,
        };
        b.mat("lm.embed", v, h)?;
        b.mat("lm.enc_pos", spec.max_seq, h)?;
        b.mat("lm.dec_pos", spec.max_seq, h)?;
        for l in 0..spec.n_enc_layers {
            let p = format!("lm.enc.{l}");
            b.norm(&format!("{p}.ln1"))?;
            for m in ["q", "k", "v", "o"] {
                b.mat(&format!("{p}.attn.{m}"), h, h)?;
            }
            b.norm(&format!("{p}.ln2"))?;
            b.ffn(&p, spec)?;
        }
        if spec.n_enc_layers > 0 {
            b.norm("lm.enc.ln_f")?;
        }
        for l in 0..spec.n_dec_layers {
            let p = format!("lm.dec.{l}");
            b.norm(&format!("{p}.ln1"))?;
            for m in ["q", "k", "v", "o"] {
                b.mat(&format!("{p}.self.{m}"), h, h)?;
            }
            b.norm(&format!("{p}.ln2"))?;
            for m in ["q", "k", "v", "o"] {
                b.mat(&format!("{p}.cross.{m}"), h, h)?;
            }
            b.norm(&format!("{p}.ln3"))?;
            b.ffn(&p, spec)?;
        }
        b.norm("lm.dec.ln_f")?;
        if !spec.tie_embeddings {
            b.mat("lm.lm_head", h, v)?;
        }
        Ok(Self {
            spec: spec.clone(),
            params: b.params,
            quantized: IndexMap::new(),
            lora: IndexMap::new(),
        })
    }

    /// Rebuilds a model from stored arrays. Names and shapes must match what
    /// [`LanguageModel::new`] produces for `spec`.
    pub fn from_arrays(spec: &ModelSpec, mut lookup: impl FnMut(&str) -> Result<Tensor>) -> Result<Self> {
        let mut model = Self::new(spec, &mut SeededRng::new(0))?;
        for (name, slot) in model.params.iter_mut() {
            let t = lookup(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "array `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &IndexMap<String, Tensor> {
        &self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn lora(&self) -> &IndexMap<String, LoraAdapter> {
        &self.lora
    }

    pub fn lora_mut(&mut self) -> &mut IndexMap<String, LoraAdapter> {
        &mut self.lora
    }

    pub fn quantized(&self) -> &IndexMap<String, QuantizedLinear> {
        &self.quantized
    }

    pub fn is_quantized(&self) -> bool {
        !self.quantized.is_empty()
    }

    /// Parameter count including any LoRA factors.
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum::<usize>()
            + self.lora.values().map(LoraAdapter::num_params).sum::<usize>()
    }

    /// Query and value projections of every attention block.
    pub fn default_lora_targets(&self) -> Vec<String> {
        self.params
            .keys()
            .filter(|n| {
                (n.contains(".attn.") || n.contains(".self.") || n.contains(".cross."))
                    && (n.ends_with(".q") || n.ends_with(".v"))
            })
            .cloned()
            .collect()
    }

    /// Attaches a fresh adapter (zero `B`) to each named weight matrix.
    pub fn attach_lora(&mut self, targets: &[String], rank: usize, alpha: f64, rng: &mut SeededRng) -> Result<()> {
        let mut fresh = Vec::with_capacity(targets.len());
        for t in targets {
            let w = self
                .params
                .get(t)
                .filter(|w| w.shape().len() == 2)
                .ok_or_else(|| Error::Config(format!("unknown LoRA target `{t}`")))?;
            if self.lora.contains_key(t) {
                return Err(Error::Config(format!("`{t}` already has a LoRA adapter")));
            }
            let (d_in, d_out) = w.dims2()?;
            fresh.push(LoraAdapter::new(t.clone(), d_in, d_out, rank, alpha, rng)?);
        }
        for a in fresh {
            self.lora.insert(a.target.clone(), a);
        }
        Ok(())
    }

    /// Folds every adapter into its base weight and removes the adapters.
    pub fn merge_lora(&mut self) -> Result<()> {
        if self.is_quantized() {
            return Err(Error::Config(
                "cannot merge LoRA into int8 weights; dequantize first".into(),
            ));
        }
        for (name, adapter) in std::mem::take(&mut self.lora) {
            let w = self.params.get_mut(&name).expect("adapter targets exist");
            *w = w.add(&adapter.delta()?)?;
        }
        Ok(())
    }

    /// Replaces every matrix with its int8 round trip and keeps the int8 form
    /// for storage. Layer norm vectors stay in floating point.
    pub fn quantize(&mut self) -> Result<()> {
        for (name, w) in self.params.iter_mut() {
            if w.shape().len() == 2 {
                let q = quantize_int8(w, None)?;
                *w = q.dequantize();
                self.quantized.insert(name.clone(), q);
            }
        }
        Ok(())
    }

    /// Restores int8 storage for `names` from saved values. The float
    /// parameters are replaced by the dequantized weights.
    pub fn set_quantized(&mut self, name: &str, q: QuantizedLinear) -> Result<()> {
        let w = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Format(format!("unknown quantized array `{name}`")))?;
        if w.shape() != q.shape {
            return Err(Error::Format(format!(
                "quantized array `{name}` has shape {:?}, model expects {:?}",
                q.shape,
                w.shape()
            )));
        }
        *w = q.dequantize();
        self.quantized.insert(name.to_string(), q);
        Ok(())
    }

    /// Registers every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape, train_base: bool, train_lora: bool) -> LmVars {
        let mut out = LmVars::default();
        for (name, t) in &self.params {
            let v = tape.leaf(t.clone(), train_base);
            out.vars.insert(name.clone(), v);
            out.names.push((name.clone(), v));
        }
        for (name, a) in &self.lora {
            let av = tape.leaf(a.a.clone(), train_lora);
            let bv = tape.leaf(a.b.clone(), train_lora);
            out.lora.insert(name.clone(), (av, bv, a.scaling()));
            out.names.push((format!("lora.{name}.a"), av));
            out.names.push((format!("lora.{name}.b"), bv));
        }
        out
    }

    fn linear(&self, tape: &mut Tape, vars: &LmVars, x: Var, name: &str) -> Result<Var> {
        let y = tape.matmul(x, vars.get(name)?)?;
        match vars.lora.get(name) {
            Some(&(a, b, s)) => {
                let xa = tape.matmul_nt(x, a)?;
                let d = tape.matmul_nt(xa, b)?;
                let d = tape.scale(d, s);
                tape.add(y, d)
            }
            None => Ok(y),
        }
    }

    fn norm(&self, tape: &mut Tape, vars: &LmVars, x: Var, prefix: &str) -> Result<Var> {
        let [g, b] = ln_names(prefix);
        tape.layer_norm(x, vars.get(&g)?, vars.get(&b)?, self.spec.ln_eps)
    }

    /// Multi-head attention of `xq` over `xkv`. `allowed` is row-major
    /// `len(xq) × len(xkv)`.
    fn attention(
        &self,
        tape: &mut Tape,
        vars: &LmVars,
        xq: Var,
        xkv: Var,
        allowed: &[bool],
        prefix: &str,
    ) -> Result<Var> {
        let q = self.linear(tape, vars, xq, &format!("{prefix}.q"))?;
        let k = self.linear(tape, vars, xkv, &format!("{prefix}.k"))?;
        let v = self.linear(tape, vars, xkv, &format!("{prefix}.v"))?;
        let dh = self.spec.head_dim();
        let inv = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.spec.n_heads);
        for hd in 0..self.spec.n_heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, inv);
            let p = tape.masked_softmax(scores, allowed)?;
            heads.push(tape.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        self.linear(tape, vars, cat, &format!("{prefix}.o"))
    }

    fn ffn(&self, tape: &mut Tape, vars: &LmVars, x: Var, prefix: &str) -> Result<Var> {
        let hidden = if self.spec.gated_ffn {
            let a = self.linear(tape, vars, x, &format!("{prefix}.ffn.wi0"))?;
            let a = tape.relu(a);
            let b = self.linear(tape, vars, x, &format!("{prefix}.ffn.wi1"))?;
            tape.hadamard(a, b)?
        } else {
            let a = self.linear(tape, vars, x, &format!("{prefix}.ffn.wi"))?;
            tape.relu(a)
        };
        self.linear(tape, vars, hidden, &format!("{prefix}.ffn.wo"))
    }

    fn check_mask(&self, len: usize, mask: Option<&[bool]>) -> Result<Vec<bool>> {
        match mask {
            None => Ok(vec![true; len]),
            Some(m) if m.len() == len => Ok(m.to_vec()),
            Some(m) => Err(Error::dim(
                "encode",
                format!("pad mask of length {} for a sequence of {len}", m.len()),
            )),
        }
    }

    /// Token embeddings for `ids`.
    pub fn embed_tokens(&self, tape: &mut Tape, vars: &LmVars, ids: &[usize]) -> Result<Var> {
        tape.gather_rows(vars.get("lm.embed")?, ids)
    }

    /// Adds the first `rows(x)` entries of a position table (`lm.enc_pos` or `lm.dec_pos`).
    pub fn add_positions(&self, tape: &mut Tape, vars: &LmVars, x: Var, table: &str) -> Result<Var> {
        let len = tape.value(x).rows();
        if len > self.spec.max_seq {
            return Err(Error::Config(format!(
                "sequence of {len} exceeds max_seq {}",
                self.spec.max_seq
            )));
        }
        let pos = tape.slice_rows(vars.get(table)?, 0, len)?;
        tape.add(x, pos)
    }

    /// Encoder stack over an already position-encoded input. `pad_mask[i]`
    /// is true for real positions; padded positions neither attend nor are
    /// attended to.
    pub fn encode(&self, tape: &mut Tape, vars: &LmVars, x: Var, pad_mask: Option<&[bool]>) -> Result<Var> {
        let (s, w) = tape.value(x).dims2()?;
        if w != self.spec.h_t {
            return Err(Error::dim(
                "encode",
                format!("input width {w}, model width {}", self.spec.h_t),
            ));
        }
        let valid = self.check_mask(s, pad_mask)?;
        let allowed: Vec<bool> = (0..s * s).map(|i| valid[i / s] && valid[i % s]).collect();
        let mut h = x;
        for l in 0..self.spec.n_enc_layers {
            let p = format!("lm.enc.{l}");
            let n = self.norm(tape, vars, h, &format!("{p}.ln1"))?;
            let a = self.attention(tape, vars, n, n, &allowed, &format!("{p}.attn"))?;
            h = tape.add(h, a)?;
            let n = self.norm(tape, vars, h, &format!("{p}.ln2"))?;
            let f = self.ffn(tape, vars, n, &p)?;
            h = tape.add(h, f)?;
        }
        if self.spec.n_enc_layers > 0 {
            h = self.norm(tape, vars, h, "lm.enc.ln_f")?;
        }
        Ok(h)
    }

    /// Teacher-forced decoder pass; returns `len(dec_ids) × V` logits.
    pub fn decode(
        &self,
        tape: &mut Tape,
        vars: &LmVars,
        dec_ids: &[usize],
        enc: Var,
        enc_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let t = dec_ids.len();
        let s = tape.value(enc).rows();
        let valid = self.check_mask(s, enc_mask)?;
        let causal: Vec<bool> = (0..t * t).map(|i| i % t <= i / t).collect();
        let cross: Vec<bool> = (0..t * s).map(|i| valid[i % s]).collect();
        let x = self.embed_tokens(tape, vars, dec_ids)?;
        let mut h = self.add_positions(tape, vars, x, "lm.dec_pos")?;
        for l in 0..self.spec.n_dec_layers {
            let p = format!("lm.dec.{l}");
            let n = self.norm(tape, vars, h, &format!("{p}.ln1"))?;
            let a = self.attention(tape, vars, n, n, &causal, &format!("{p}.self"))?;
            h = tape.add(h, a)?;
            let n = self.norm(tape, vars, h, &format!("{p}.ln2"))?;
            let c = self.attention(tape, vars, n, enc, &cross, &format!("{p}.cross"))?;
            h = tape.add(h, c)?;
            let n = self.norm(tape, vars, h, &format!("{p}.ln3"))?;
            let f = self.ffn(tape, vars, n, &p)?;
            h = tape.add(h, f)?;
        }
        let h = self.norm(tape, vars, h, "lm.dec.ln_f")?;
        if self.spec.tie_embeddings {
            tape.matmul_nt(h, vars.get("lm.embed")?)
        } else {
            tape.matmul(h, vars.get("lm.lm_head")?)
        }
    }

    /// Greedy decoding from a multimodal input embedding (positions not yet
    /// added). Stops at eos, which is not included, or after `max_len` tokens.
    pub fn greedy_generate(&self, mm_emb: &Tensor, pad_mask: Option<&[bool]>, max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false, false);
        let x = tape.constant(mm_emb.clone());
        let x = self.add_positions(&mut tape, &vars, x, "lm.enc_pos")?;
        let enc = self.encode(&mut tape, &vars, x, pad_mask)?;
        self.greedy_from_encoding(&mut tape, &vars, enc, pad_mask, max_len)
    }

    pub(crate) fn greedy_from_encoding(
        &self,
        tape: &mut Tape,
        vars: &LmVars,
        enc: Var,
        enc_mask: Option<&[bool]>,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        let limit = max_len.min(self.spec.max_seq.saturating_sub(1)).max(1);
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        while out.len() < limit {
            let logits = self.decode(tape, vars, &prefix, enc, enc_mask)?;
            let last = tape.value(logits).row(prefix.len() - 1);
            let next = argmax(last);
            if next == EOS {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
