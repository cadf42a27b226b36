use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complete architecture description shared by the runnable model and the
/// cost estimator. Defaults are the desk-scale preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub image_size: usize,
    pub patch_size: usize,
    /// Image embedding width `H_I`.
    pub h_i: usize,
    /// Camera views per sample.
    pub n_views: usize,
    /// Gate width `K`.
    pub k: usize,
    /// Language model width `H_T`.
    pub h_t: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    /// Rows in each learned position table; bounds both the encoder input
    /// (`S_T + S_I`) and the decoder input.
    pub max_seq: usize,
    pub tie_embeddings: bool,
    pub gated_ffn: bool,
    pub ln_eps: f64,
    /// Gaussian init std for language model matrices.
    pub lm_init_std: f64,
    /// Gaussian init std for the patch embedder, gate, and projection.
    pub init_std: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl ModelSpec {
    /// Desk-scale preset; `vocab_size` normally comes from the tokenizer.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            image_size: 64,
            patch_size: 16,
            h_i: 64,
            n_views: 6,
            k: 128,
            h_t: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            d_ff: 256,
            vocab_size,
            max_seq: 64,
            tie_embeddings: false,
            gated_ffn: false,
            ln_eps: 1e-6,
            lm_init_std: 0.02,
            init_std: 0.02,
        }
    }

    /// Patches per view, `S_I`.
    pub fn s_i(&self) -> usize {
        if self.patch_size == 0 {
            return 0;
        }
        (self.image_size / self.patch_size).pow(2)
    }

    /// Flattened view length `M = S_I·H_I`.
    pub fn m(&self) -> usize {
        self.s_i() * self.h_i
    }

    pub fn head_dim(&self) -> usize {
        self.h_t / self.n_heads.max(1)
    }

    /// Longest question (in tokens) that fits beside the image rows.
    pub fn max_question(&self) -> usize {
        self.max_seq.saturating_sub(self.s_i())
    }

    /// Longest answer (in tokens, before eos) the decoder can be trained on.
    pub fn max_answer(&self) -> usize {
        self.max_seq.saturating_sub(1)
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("h_i", self.h_i),
            ("n_views", self.n_views),
            ("k", self.k),
            ("h_t", self.h_t),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in positive {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.patch_size > 0 && !self.image_size.is_multiple_of(self.patch_size) {
            problems.push(format!(
                "image_size {} is not a multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.n_heads > 0 && !self.h_t.is_multiple_of(self.n_heads) {
            problems.push(format!("h_t {} is not divisible by n_heads {}", self.h_t, self.n_heads));
        }
        if self.max_seq <= self.s_i() {
            problems.push(format!(
                "max_seq {} leaves no room for text beside {} image rows",
                self.max_seq,
                self.s_i()
            ));
        }
        if !(self.ln_eps >= 0.0 && self.ln_eps.is_finite()) {
            problems.push(format!("ln_eps {} must be finite and non-negative", self.ln_eps));
        }
        for (name, v) in [("lm_init_std", self.lm_init_std), ("init_std", self.init_std)] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} {v} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
