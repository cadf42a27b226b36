use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Low-rank update for one weight matrix `W` (`d_in × d_out`, applied as
/// `x·W`). The adapted layer computes `x·W + (alpha/r)·x·Aᵀ·Bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub target: String,
    pub rank: usize,
    pub alpha: f64,
    /// `r × d_in`
    pub a: Tensor,
    /// `d_out × r`, zero at creation.
    pub b: Tensor,
}

impl LoraAdapter {
    /// Gaussian `A` with std `1/sqrt(d_in)`, zero `B`.
    pub fn new(
        target: impl Into<String>,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if rank == 0 || !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!(
                "LoRA rank {rank} and scale {alpha} must be positive"
            )));
        }
        Ok(Self {
            target: target.into(),
            rank,
            alpha,
            a: Tensor::randn(&[rank, d_in], 1.0 / (d_in as f64).sqrt(), rng)?,
            b: Tensor::zeros(&[d_out, rank])?,
        })
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// The dense update `(alpha/r)·(B·A)ᵀ`, shaped like `W`.
    pub fn delta(&self) -> Result<Tensor> {
        Ok(self.b.matmul(&self.a)?.transpose()?.scale(self.scaling()))
    }

    pub fn num_params(&self) -> usize {
        self.a.numel() + self.b.numel()
    }
}
