use super::{ArchSpec, Layer, LayerKind, Norm, SeqLens, Stream};
use crate::lm::ModelSpec;
use crate::model::Model;

/// Number of camera views in the full-scale presets.
pub const EM_VIEWS: usize = 6;
/// Gate hidden size of the full-scale presets.
pub const EM_FUSION_K: usize = 128;
/// Adapter rank on query/value projections in the quantized large preset.
pub const Q_LARGE_LORA_RANK: usize = 64;
/// Assumed question length in tokens for the cost comparison.
pub const PUBLISHED_S_T: usize = 60;
/// Assumed answer length in tokens for the cost comparison.
pub const PUBLISHED_S_DEC: usize = 40;

const T5_VOCAB: usize = 32_128;
const T5_BUCKETS: usize = 32;
// ViT-B/32 patch embedder at 224×224: 49 patches of 32×32×3.
const VIT_PATCH_DIM: usize = 3 * 32 * 32;
const VIT_SEQ: usize = 49;
const VIT_WIDTH: usize = 768;

struct LmShape {
    width: usize,
    inner: usize,
    heads: usize,
    d_ff: usize,
    enc_layers: usize,
    dec_layers: usize,
    vocab: usize,
    gated: bool,
    tied: bool,
    norm: Norm,
}

fn attn(name: &str, group: &str, stream: Stream, s: &LmShape, cross: bool, count: usize) -> Layer {
    Layer::new(
        name,
        group,
        stream,
        LayerKind::Attention {
            d_model: s.width,
            inner: s.inner,
            cross,
            norm: s.norm,
        },
    )
    .times(count)
}

fn ffn(name: &str, group: &str, stream: Stream, s: &LmShape, count: usize) -> Layer {
    Layer::new(
        name,
        group,
        stream,
        LayerKind::FeedForward {
            d_model: s.width,
            d_ff: s.d_ff,
            gated: s.gated,
            norm: s.norm,
        },
    )
    .times(count)
}

fn norm(name: &str, group: &str, stream: Stream, s: &LmShape) -> Layer {
    Layer::new(
        name,
        group,
        stream,
        LayerKind::Norm {
            dim: s.width,
            norm: s.norm,
        },
    )
}

/// Encoder-decoder stack. T5 shapes use relative position tables in the
/// first layer of each stack; the desk model uses absolute tables instead.
fn lm_layers(s: &LmShape, abs_positions: Option<usize>) -> Vec<Layer> {
    let (enc, dec) = (Stream::Encoder, Stream::Decoder);
    let mut v = vec![Layer::new(
        "embed",
        "embedding",
        enc,
        LayerKind::Embedding {
            rows: s.vocab,
            dim: s.width,
        },
    )];
    match abs_positions {
        Some(rows) => {
            for (name, group) in [("enc_pos", "encoder"), ("dec_pos", "decoder")] {
                v.push(Layer::new(
                    name,
                    group,
                    enc,
                    LayerKind::Embedding { rows, dim: s.width },
                ));
            }
        }
        None => {
            for (name, group, stream) in [("enc_rel_bias", "encoder", enc), ("dec_rel_bias", "decoder", dec)] {
                v.push(Layer::new(
                    name,
                    group,
                    stream,
                    LayerKind::RelativeBias {
                        buckets: T5_BUCKETS,
                        heads: s.heads,
                    },
                ));
            }
        }
    }
    if s.enc_layers > 0 {
        v.push(attn("enc.attn", "encoder", enc, s, false, s.enc_layers));
        v.push(ffn("enc.ffn", "encoder", enc, s, s.enc_layers));
        v.push(norm("enc.ln_f", "encoder", enc, s));
    }
    if s.dec_layers > 0 {
        v.push(attn("dec.self", "decoder", dec, s, false, s.dec_layers));
        v.push(attn("dec.cross", "decoder", dec, s, true, s.dec_layers));
        v.push(ffn("dec.ffn", "decoder", dec, s, s.dec_layers));
    }
    v.push(norm("dec.ln_f", "decoder", dec, s));
    v.push(Layer::new(
        "lm_head",
        "head",
        dec,
        LayerKind::Linear {
            d_in: s.width,
            d_out: s.vocab,
            bias: false,
            tied: s.tied,
        },
    ));
    v
}

fn t5(name: &str, width: usize, heads: usize, d_ff: usize, layers: usize) -> ArchSpec {
    let shape = LmShape {
        width,
        inner: width,
        heads,
        d_ff,
        enc_layers: layers,
        dec_layers: layers,
        vocab: T5_VOCAB,
        gated: false,
        tied: true,
        norm: Norm::Rms,
    };
    ArchSpec::new(name, lm_layers(&shape, None))
}

/// T5-Base: 12+12 layers, width 768, ReLU feed-forward of 3072, tied embeddings.
pub fn t5_base() -> ArchSpec {
    t5("t5-base", 768, 12, 3072, 12)
}

/// T5-Large: 24+24 layers, width 1024, ReLU feed-forward of 4096, tied embeddings.
pub fn t5_large() -> ArchSpec {
    t5("t5-large", 1024, 16, 4096, 24)
}

fn vision_and_fusion(n_views: usize, patch_dim: usize, seq: usize, h_i: usize, k: usize, h_t: usize) -> Vec<Layer> {
    vec![
        Layer::new(
            "patch.projection",
            "vision",
            Stream::Tokens(n_views * seq),
            LayerKind::Linear {
                d_in: patch_dim,
                d_out: h_i,
                bias: true,
                tied: false,
            },
        ),
        Layer::new(
            "patch.position",
            "vision",
            Stream::Tokens(n_views * seq),
            LayerKind::Embedding { rows: seq, dim: h_i },
        ),
        Layer::new(
            "fusion",
            "fusion",
            Stream::Tokens(1),
            LayerKind::FusionGate {
                k,
                m: seq * h_i,
                n_views,
            },
        ),
        Layer::new(
            "proj",
            "projection",
            Stream::Tokens(seq),
            LayerKind::Projection { h_i, h_t },
        ),
    ]
}

fn em(name: &str, lm: ArchSpec, h_t: usize) -> ArchSpec {
    let mut spec = ArchSpec::new(
        name,
        vision_and_fusion(EM_VIEWS, VIT_PATCH_DIM, VIT_SEQ, VIT_WIDTH, EM_FUSION_K, h_t),
    );
    spec.extend(lm);
    spec
}

/// T5-Base language model with the ViT-B/32 patch embedder, fp32 weights.
pub fn em_base() -> ArchSpec {
    em("em-vlm4ad-base", t5_base(), 768)
}

/// T5-Large with query/value adapters in every attention block; all weights int8.
pub fn q_large() -> ArchSpec {
    let mut spec = em("em-vlm4ad-q-large", t5_large(), 1024);
    spec.layers.extend(qv_adapters(&spec, Q_LARGE_LORA_RANK));
    spec.default_bits = 8;
    spec
}

fn qv_adapters(spec: &ArchSpec, rank: usize) -> Vec<Layer> {
    spec.layers
        .iter()
        .filter_map(|l| match l.kind {
            LayerKind::Attention { d_model, inner, .. } => Some(
                Layer::new(
                    format!("lora.{}", l.name),
                    "lora",
                    l.stream,
                    LayerKind::Lora {
                        d_in: d_model,
                        d_out: inner,
                        rank,
                    },
                )
                .times(2 * l.count),
            ),
            _ => None,
        })
        .collect()
}

/// Adapter parameters (rank `rank` on every query and value projection)
/// as a fraction of the base model's parameters.
pub fn lora_trainable_fraction(spec: &ArchSpec, rank: usize) -> f64 {
    let extra: u64 = qv_adapters(spec, rank).iter().map(Layer::params).sum();
    extra as f64 / super::count_params(spec).total as f64
}

impl SeqLens {
    /// Question plus image tokens in, a short answer out.
    pub fn published() -> Self {
        Self {
            s_enc: PUBLISHED_S_T + VIT_SEQ,
            s_dec: PUBLISHED_S_DEC,
        }
    }
}

/// The runnable model's architecture, without adapters.
pub fn from_model_spec(spec: &ModelSpec) -> ArchSpec {
    let shape = LmShape {
        width: spec.h_t,
        inner: spec.h_t,
        heads: spec.n_heads,
        d_ff: spec.d_ff,
        enc_layers: spec.n_enc_layers,
        dec_layers: spec.n_dec_layers,
        vocab: spec.vocab_size,
        gated: spec.gated_ffn,
        tied: spec.tie_embeddings,
        norm: Norm::Layer,
    };
    let patch_dim = 3 * spec.patch_size * spec.patch_size;
    let mut arch = ArchSpec::new(
        "desk",
        vision_and_fusion(spec.n_views, patch_dim, spec.s_i(), spec.h_i, spec.k, spec.h_t),
    );
    arch.layers.extend(lm_layers(&shape, Some(spec.max_seq)));
    arch
}

/// The runnable model's architecture including any attached adapters.
pub fn from_model(model: &Model) -> ArchSpec {
    let mut arch = from_model_spec(&model.spec);
    for (target, a) in model.lm.lora() {
        arch.layers.push(Layer::new(
            format!("lora.{target}"),
            "lora",
            if target.starts_with("lm.enc") {
                Stream::Encoder
            } else {
                Stream::Decoder
            },
            LayerKind::Lora {
                d_in: a.a.shape()[1],
                d_out: a.b.shape()[0],
                rank: a.rank,
            },
        ));
    }
    arch
}
