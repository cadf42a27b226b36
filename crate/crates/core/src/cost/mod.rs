//! Analytic parameter, FLOP, and memory accounting.
//!
//! FLOPs count one multiply-accumulate as one operation. Norms, lookups,
//! softmax and activations are not counted.

mod presets;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use presets::{
    em_base, from_model, from_model_spec, lora_trainable_fraction, q_large, t5_base, t5_large, EM_FUSION_K, EM_VIEWS,
    PUBLISHED_S_DEC, PUBLISHED_S_T, Q_LARGE_LORA_RANK,
};
pub use report::{cost_report, fixtures_table, published_fixtures, CostReport, FixtureRow, PublishedRow, PUBLISHED};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    /// Gain and bias.
    Layer,
    /// Gain only.
    Rms,
    None,
}

impl Norm {
    fn params(self, dim: usize) -> u64 {
        match self {
            Norm::Layer => 2 * dim as u64,
            Norm::Rms => dim as u64,
            Norm::None => 0,
        }
    }
}

/// Which sequence a layer runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Encoder,
    Decoder,
    /// A fixed number of positions, independent of the text lengths.
    Tokens(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    /// Lookup table (token embeddings, position tables).
    Embedding {
        rows: usize,
        dim: usize,
    },
    /// `tied` reuses another layer's matrix: it costs FLOPs but no parameters.
    Linear {
        d_in: usize,
        d_out: usize,
        bias: bool,
        #[serde(default)]
        tied: bool,
    },
    /// Query, key, value and output projections plus the pre-norm.
    /// Cross attention takes keys and values from the encoder.
    Attention {
        d_model: usize,
        inner: usize,
        cross: bool,
        norm: Norm,
    },
    FeedForward {
        d_model: usize,
        d_ff: usize,
        gated: bool,
        norm: Norm,
    },
    Norm {
        dim: usize,
        norm: Norm,
    },
    RelativeBias {
        buckets: usize,
        heads: usize,
    },
    /// Gated attention pooling over `n_views` flattened view embeddings of size `m`.
    FusionGate {
        k: usize,
        m: usize,
        n_views: usize,
    },
    /// Per-token linear map from image width to text width, with bias.
    Projection {
        h_i: usize,
        h_t: usize,
    },
    /// Low-rank adapter pair on a `d_in → d_out` matrix.
    Lora {
        d_in: usize,
        d_out: usize,
        rank: usize,
    },
}

// Unknown keys are rejected by the flattened `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub group: String,
    pub stream: Stream,
    /// Identical copies of this layer.
    #[serde(default = "one")]
    pub count: usize,
    #[serde(flatten)]
    pub kind: LayerKind,
}

fn one() -> usize {
    1
}

impl Layer {
    pub fn new(name: impl Into<String>, group: impl Into<String>, stream: Stream, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            group: group.into(),
            stream,
            count: 1,
            kind,
        }
    }

    pub fn times(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = match &self.kind {
            LayerKind::Embedding { rows, dim } => vec![*rows, *dim],
            LayerKind::Linear { d_in, d_out, .. } => vec![*d_in, *d_out],
            LayerKind::Attention { d_model, inner, .. } => vec![*d_model, *inner],
            LayerKind::FeedForward { d_model, d_ff, .. } => vec![*d_model, *d_ff],
            LayerKind::Norm { dim, .. } => vec![*dim],
            LayerKind::RelativeBias { buckets, heads } => vec![*buckets, *heads],
            LayerKind::FusionGate { k, m, n_views } => vec![*k, *m, *n_views],
            LayerKind::Projection { h_i, h_t } => vec![*h_i, *h_t],
            LayerKind::Lora { d_in, d_out, rank } => vec![*d_in, *d_out, *rank],
        };
        d.push(self.count);
        if let Stream::Tokens(t) = self.stream {
            d.push(t);
        }
        d
    }

    /// Parameters of one copy.
    pub fn params_each(&self) -> u64 {
        let m = |a: usize, b: usize| a as u64 * b as u64;
        match self.kind {
            LayerKind::Embedding { rows, dim } => m(rows, dim),
            LayerKind::Linear { tied: true, .. } => 0,
            LayerKind::Linear { d_in, d_out, bias, .. } => m(d_in, d_out) + if bias { d_out as u64 } else { 0 },
            LayerKind::Attention {
                d_model, inner, norm, ..
            } => 4 * m(d_model, inner) + norm.params(d_model),
            LayerKind::FeedForward {
                d_model,
                d_ff,
                gated,
                norm,
            } => (if gated { 3 } else { 2 }) * m(d_model, d_ff) + norm.params(d_model),
            LayerKind::Norm { dim, norm } => norm.params(dim),
            LayerKind::RelativeBias { buckets, heads } => m(buckets, heads),
            LayerKind::FusionGate { k, m: width, .. } => k as u64 + 2 * m(k, width),
            LayerKind::Projection { h_i, h_t } => m(h_i, h_t) + h_t as u64,
            LayerKind::Lora { d_in, d_out, rank } => m(rank, d_in + d_out),
        }
    }

    pub fn params(&self) -> u64 {
        self.params_each() * self.count as u64
    }

    /// Forward FLOPs of all copies.
    pub fn flops(&self, seq: SeqLens) -> u64 {
        let s = match self.stream {
            Stream::Encoder => seq.s_enc,
            Stream::Decoder => seq.s_dec,
            Stream::Tokens(t) => t,
        } as u64;
        let each = match self.kind {
            LayerKind::Embedding { .. } | LayerKind::Norm { .. } | LayerKind::RelativeBias { .. } => 0,
            LayerKind::Linear { d_in, d_out, .. } => s * d_in as u64 * d_out as u64,
            LayerKind::Attention {
                d_model,
                inner,
                cross: false,
                ..
            } => {
                let (d, i) = (d_model as u64, inner as u64);
                // q, k, v, o projections, then scores and the weighted sum of values.
                4 * s * d * i + 2 * s * s * i
            }
            LayerKind::Attention {
                d_model,
                inner,
                cross: true,
                ..
            } => {
                let (d, i, e) = (d_model as u64, inner as u64, seq.s_enc as u64);
                2 * s * d * i + 2 * e * d * i + 2 * s * e * i
            }
            LayerKind::FeedForward {
                d_model, d_ff, gated, ..
            } => (if gated { 3 } else { 2 }) * s * d_model as u64 * d_ff as u64,
            LayerKind::FusionGate { k, m, n_views } => {
                let (k, m, n) = (k as u64, m as u64, n_views as u64);
                // Two K×M projections and the K-vector dot per view, then the weighted sum.
                n * (2 * k * m + k) + n * m
            }
            LayerKind::Projection { h_i, h_t } => s * h_i as u64 * h_t as u64,
            LayerKind::Lora { d_in, d_out, rank } => s * rank as u64 * (d_in + d_out) as u64,
        };
        each * self.count as u64
    }
}

/// Text sequence lengths used for FLOP estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqLens {
    pub s_enc: usize,
    pub s_dec: usize,
}

/// A model described as a list of layers, each tagged with a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub layers: Vec<Layer>,
    /// Weight precision per group; groups not listed use `default_bits`.
    #[serde(default)]
    pub bits: BTreeMap<String, u32>,
    #[serde(default = "default_bits")]
    pub default_bits: u32,
}

fn default_bits() -> u32 {
    32
}

impl ArchSpec {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>) -> Self {
        Self {
            name: name.into(),
            layers,
            bits: BTreeMap::new(),
            default_bits: 32,
        }
    }

    /// Appends another spec's layers (and its precision overrides).
    pub fn extend(&mut self, other: ArchSpec) {
        self.layers.extend(other.layers);
        self.bits.extend(other.bits);
    }

    pub fn bits_for(&self, group: &str) -> u32 {
        self.bits.get(group).copied().unwrap_or(self.default_bits)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for l in &self.layers {
            if l.dims().contains(&0) {
                problems.push(format!("layer `{}` has a zero dimension", l.name));
            }
        }
        for (g, b) in self
            .bits
            .iter()
            .map(|(g, b)| (g.as_str(), *b))
            .chain([("default", self.default_bits)])
        {
            if b != 8 && b != 32 {
                problems.push(format!("group `{g}` precision {b} is not 8 or 32 bits"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: u64,
    pub by_group: BTreeMap<String, u64>,
}

pub fn count_params(spec: &ArchSpec) -> ParamReport {
    let mut by_group = BTreeMap::new();
    for l in &spec.layers {
        *by_group.entry(l.group.clone()).or_insert(0) += l.params();
    }
    ParamReport {
        total: by_group.values().sum(),
        by_group,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub seq: SeqLens,
    pub total: u64,
    pub by_group: BTreeMap<String, u64>,
}

pub fn estimate_flops(spec: &ArchSpec, seq: SeqLens) -> Result<FlopReport> {
    if seq.s_enc == 0 || seq.s_dec == 0 {
        return Err(Error::Config("sequence lengths must be positive".into()));
    }
    let mut by_group = BTreeMap::new();
    for l in &spec.layers {
        *by_group.entry(l.group.clone()).or_insert(0) += l.flops(seq);
    }
    Ok(FlopReport {
        seq,
        total: by_group.values().sum(),
        by_group,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GbUnit {
    /// 10⁹ bytes.
    Decimal,
    /// 2³⁰ bytes.
    Binary,
}

impl GbUnit {
    pub fn bytes(self) -> f64 {
        match self {
            GbUnit::Decimal => 1e9,
            GbUnit::Binary => (1u64 << 30) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub bytes: u64,
    pub unit: GbUnit,
    pub gb: f64,
}

/// Weight storage: each group's parameters at that group's precision.
pub fn memory_report(spec: &ArchSpec, unit: GbUnit) -> MemoryReport {
    let params = count_params(spec);
    let bits: u64 = params
        .by_group
        .iter()
        .map(|(g, &n)| n * u64::from(spec.bits_for(g)))
        .sum();
    let bytes = bits / 8;
    MemoryReport {
        bytes,
        unit,
        gb: bytes as f64 / unit.bytes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(d_in: usize, d_out: usize, bias: bool) -> Layer {
        Layer::new(
            "l",
            "g",
            Stream::Tokens(1),
            LayerKind::Linear {
                d_in,
                d_out,
                bias,
                tied: false,
            },
        )
    }

    #[test]
    fn linear_counts() {
        assert_eq!(lin(768, 768, true).params(), 590_592);
        assert_eq!(lin(768, 768, true).flops(SeqLens { s_enc: 1, s_dec: 1 }), 589_824);
    }

    #[test]
    fn fusion_gate_count() {
        let g = Layer::new(
            "gate",
            "fusion",
            Stream::Tokens(1),
            LayerKind::FusionGate {
                k: 128,
                m: 49 * 768,
                n_views: 6,
            },
        );
        assert_eq!(g.params(), 9_633_920);
    }

    #[test]
    fn doubling_encoder_length() {
        let seq = SeqLens { s_enc: 10, s_dec: 3 };
        let seq2 = SeqLens { s_enc: 20, s_dec: 3 };
        let attn = Layer::new(
            "a",
            "encoder",
            Stream::Encoder,
            LayerKind::Attention {
                d_model: 8,
                inner: 8,
                cross: false,
                norm: Norm::Layer,
            },
        );
        let linear = 4 * 10 * 64;
        let scores = 2 * 100 * 8;
        assert_eq!(attn.flops(seq), linear + scores);
        assert_eq!(attn.flops(seq2), 2 * linear + 4 * scores);
    }

    #[test]
    fn empty_spec_and_validation() {
        let empty = ArchSpec::new("none", vec![]);
        assert_eq!(memory_report(&empty, GbUnit::Decimal).gb, 0.0);
        assert_eq!(count_params(&empty).total, 0);
        let mut bad = ArchSpec::new("bad", vec![lin(0, 4, false)]);
        bad.bits.insert("g".into(), 16);
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("zero dimension") && err.contains("16"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let spec = ArchSpec::new("x", vec![lin(3, 4, true).times(2)]);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ArchSpec>(&text).unwrap(), spec);
        assert!(serde_json::from_str::<ArchSpec>(r#"{"name":"x","layers":[],"colour":1}"#).is_err());
        let typo = r#"{"name":"x","layers":[{"name":"l","group":"g","stream":"encoder","kind":"norm","dim":4,"norm":"rms","dimm":2}]}"#;
        assert!(serde_json::from_str::<ArchSpec>(typo).is_err());
        let ok = typo.replace(r#","dimm":2"#, "");
        assert_eq!(serde_json::from_str::<ArchSpec>(&ok).unwrap().layers[0].count, 1);
    }
}
