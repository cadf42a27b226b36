//! Gated pooling attention over camera views, plus the projection into the
//! language model's embedding width.
//!
//! For flattened views `v_i` (length `M = S_I·H_I`):
//!
//! ```text
//! logit_i = wᵀ (tanh(Z v_i) ⊙ sigmoid(G v_i))
//! alpha   = softmax(logit)
//! V       = Σ alpha_i V_i
//! ```

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{sigmoid, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GatedPoolParams {
    /// `K`
    pub w: Tensor,
    /// `K × M`
    pub z: Tensor,
    /// `K × M`
    pub g: Tensor,
}

impl GatedPoolParams {
    pub fn new(k: usize, m: usize, init_std: f64, rng: &mut SeededRng) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::Config(format!("gate dimensions K={k}, M={m} must be positive")));
        }
        Ok(Self {
            w: Tensor::randn(&[k], init_std, rng)?,
            z: Tensor::randn(&[k, m], init_std, rng)?,
            g: Tensor::randn(&[k, m], init_std, rng)?,
        })
    }

    pub fn from_parts(w: Tensor, z: Tensor, g: Tensor) -> Result<Self> {
        let (k, m) = z.dims2()?;
        if w.shape() != [k] || g.shape() != [k, m] {
            return Err(Error::dim(
                "gated_pool",
                format!(
                    "w {:?}, Z {:?}, G {:?} do not share K and M",
                    w.shape(),
                    z.shape(),
                    g.shape()
                ),
            ));
        }
        Ok(Self { w, z, g })
    }

    pub fn k(&self) -> usize {
        self.w.numel()
    }

    pub fn m(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.w.numel() + self.z.numel() + self.g.numel()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub alpha: Vec<f64>,
    pub fused: Tensor,
}

fn check_views(views: &[Tensor], m: usize) -> Result<()> {
    if views.is_empty() {
        return Err(Error::Empty("fusion needs at least one view".into()));
    }
    let first = views[0].shape();
    for (i, v) in views.iter().enumerate() {
        if v.numel() != m {
            return Err(Error::dim(
                "attention_logits",
                format!("view {i} flattens to {} values, gate expects M={m}", v.numel()),
            ));
        }
        if v.shape() != first {
            return Err(Error::dim(
                "fuse",
                format!("view {i} has shape {:?}, view 0 has {first:?}", v.shape()),
            ));
        }
    }
    Ok(())
}

/// One unnormalized attention logit per view.
pub fn attention_logits(views: &[Tensor], p: &GatedPoolParams) -> Result<Vec<f64>> {
    check_views(views, p.m())?;
    let (k, m) = (p.k(), p.m());
    let (z, g, w) = (p.z.data(), p.g.data(), p.w.data());
    Ok(views
        .iter()
        .map(|v| {
            let v = v.data();
            (0..k)
                .map(|r| {
                    let zr: f64 = z[r * m..(r + 1) * m].iter().zip(v).map(|(a, b)| a * b).sum();
                    let gr: f64 = g[r * m..(r + 1) * m].iter().zip(v).map(|(a, b)| a * b).sum();
                    w[r] * zr.tanh() * sigmoid(gr)
                })
                .sum()
        })
        .collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn fuse(views: &[Tensor], p: &GatedPoolParams) -> Result<FusionOutput> {
    let alpha = softmax(&attention_logits(views, p)?);
    let mut fused = vec![0.0; p.m()];
    for (a, v) in alpha.iter().zip(views) {
        for (f, x) in fused.iter_mut().zip(v.data()) {
            *f += a * x;
        }
    }
    Ok(FusionOutput {
        alpha,
        fused: Tensor::new(views[0].shape().to_vec(), fused)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionLayer {
    /// `H_I × H_T`
    pub weight: Tensor,
    /// `H_T`
    pub bias: Tensor,
}

impl ProjectionLayer {
    pub fn new(h_i: usize, h_t: usize, init_std: f64, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            weight: Tensor::randn(&[h_i, h_t], init_std, rng)?,
            bias: Tensor::zeros(&[h_t])?,
        })
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, h_t) = weight.dims2()?;
        if bias.shape() != [h_t] {
            return Err(Error::dim(
                "projection",
                format!("bias {:?} for weight {:?}", bias.shape(), weight.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn num_params(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Text rows first, then the projected image rows.
pub fn project_and_concat(fused: &Tensor, proj: &ProjectionLayer, text_emb: &Tensor) -> Result<Tensor> {
    let image = fused.matmul(&proj.weight)?.add_bias(&proj.bias)?;
    let (s_t, h_t) = text_emb.dims2()?;
    if h_t != image.shape()[1] {
        return Err(Error::dim(
            "project_and_concat",
            format!("text width {h_t} but projection outputs {}", image.shape()[1]),
        ));
    }
    let s_i = image.rows();
    let mut data = text_emb.data().to_vec();
    data.extend_from_slice(image.data());
    Tensor::new(vec![s_t + s_i, h_t], data)
}

/// Gate parameters registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub w: Var,
    pub z: Var,
    pub g: Var,
}

/// Tape version of [`fuse`]. `views` is the `N × M` matrix of flattened
/// views; returns `alpha` (`N`) and the fused view flattened to `1 × M`.
pub fn fuse_on_tape(tape: &mut Tape, views: Var, gate: GateVars) -> Result<(Var, Var)> {
    let (n, _) = tape.value(views).dims2()?;
    let k = tape.value(gate.w).numel();
    let zv = tape.matmul_nt(views, gate.z)?;
    let gv = tape.matmul_nt(views, gate.g)?;
    let t = tape.tanh(zv);
    let s = tape.sigmoid(gv);
    let h = tape.hadamard(t, s)?;
    let w_col = tape.reshape(gate.w, &[k, 1])?;
    let logits = tape.matmul(h, w_col)?;
    let logits = tape.reshape(logits, &[n])?;
    let alpha = tape.softmax(logits, 0)?;
    let alpha_row = tape.reshape(alpha, &[1, n])?;
    let fused = tape.matmul(alpha_row, views)?;
    Ok((alpha, fused))
}

/// Tape version of [`project_and_concat`].
pub fn project_and_concat_on_tape(tape: &mut Tape, fused: Var, weight: Var, bias: Var, text_emb: Var) -> Result<Var> {
    let image = tape.matmul(fused, weight)?;
    let image = tape.add_bias(image, bias)?;
    tape.concat_rows(&[text_emb, image])
}
