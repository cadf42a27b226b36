//! ViT-style patch projection front end.
//!
//! An image is cut into non-overlapping `P×P` patches, each patch is
//! flattened channel-major (`c, y, x`), and a shared linear map plus a
//! learned positional table turns the patch sequence into an `S_I × H_I`
//! view embedding. There is no class token and no transformer block.

use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Planar RGB image, values in `[0, 1]`, stored `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("image size {height}x{width} is empty")));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::dim(
                "image",
                format!(
                    "{height}x{width} RGB needs {} values, got {}",
                    Self::CHANNELS * height * width,
                    data.len()
                ),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let plane = height * width;
        let data = rgb.iter().flat_map(|&c| std::iter::repeat_n(c, plane)).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }
}

/// Cuts `img` into `P×P` patches, ordered left-to-right then top-to-bottom.
/// Row `r` of the result is patch `r` flattened as `[c][y][x]`.
pub fn patchify(img: &Image, patch: usize) -> Result<Tensor> {
    if patch == 0 || !img.height.is_multiple_of(patch) || !img.width.is_multiple_of(patch) {
        return Err(Error::Config(format!(
            "image {}x{} is not divisible into {patch}x{patch} patches",
            img.height, img.width
        )));
    }
    let (gh, gw) = (img.height / patch, img.width / patch);
    let row_len = Image::CHANNELS * patch * patch;
    let mut out = Vec::with_capacity(gh * gw * row_len);
    for py in 0..gh {
        for px in 0..gw {
            for c in 0..Image::CHANNELS {
                for dy in 0..patch {
                    let y = py * patch + dy;
                    let start = (c * img.height + y) * img.width + px * patch;
                    out.extend_from_slice(&img.data[start..start + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, row_len], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedder {
    patch_size: usize,
    image_size: usize,
    /// `3P² × H_I`
    pub projection: Tensor,
    /// `H_I`
    pub bias: Tensor,
    /// `S_I × H_I`
    pub position: Tensor,
    /// Frozen embedders are never handed to an optimizer.
    pub frozen: bool,
}

impl PatchEmbedder {
    /// Seeded Gaussian initialization (std `init_std`), zero bias.
    pub fn new(
        image_size: usize,
        patch_size: usize,
        hidden: usize,
        init_std: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if patch_size == 0 || !image_size.is_multiple_of(patch_size) {
            return Err(Error::Config(format!(
                "image size {image_size} is not a multiple of patch size {patch_size}"
            )));
        }
        let seq = (image_size / patch_size).pow(2);
        let in_dim = Image::CHANNELS * patch_size * patch_size;
        Ok(Self {
            patch_size,
            image_size,
            projection: Tensor::randn(&[in_dim, hidden], init_std, rng)?,
            bias: Tensor::zeros(&[hidden])?,
            position: Tensor::randn(&[seq, hidden], init_std, rng)?,
            frozen: true,
        })
    }

    pub fn from_parts(
        image_size: usize,
        patch_size: usize,
        projection: Tensor,
        bias: Tensor,
        position: Tensor,
    ) -> Result<Self> {
        if patch_size == 0 || !image_size.is_multiple_of(patch_size) {
            return Err(Error::Config(format!(
                "image size {image_size} is not a multiple of patch size {patch_size}"
            )));
        }
        let seq = (image_size / patch_size).pow(2);
        let in_dim = Image::CHANNELS * patch_size * patch_size;
        let (pi, hidden) = projection.dims2()?;
        if pi != in_dim || bias.shape() != [hidden] || position.shape() != [seq, hidden] {
            return Err(Error::dim(
                "patch_embedder",
                format!(
                    "expected projection [{in_dim}, H], bias [H], position [{seq}, H]; got {:?}, {:?}, {:?}",
                    projection.shape(),
                    bias.shape(),
                    position.shape()
                ),
            ));
        }
        Ok(Self {
            patch_size,
            image_size,
            projection,
            bias,
            position,
            frozen: true,
        })
    }

    /// Loads pretrained weights (arrays `patch.projection`, `patch.bias`,
    /// `patch.position`) from a file in the checkpoint container format.
    pub fn import(path: &Path, image_size: usize, patch_size: usize) -> Result<Self> {
        let c = Container::read(path)?;
        Self::from_parts(
            image_size,
            patch_size,
            c.tensor("patch.projection")?,
            c.tensor("patch.bias")?,
            c.tensor("patch.position")?,
        )
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn seq_len(&self) -> usize {
        self.position.rows()
    }

    pub fn hidden(&self) -> usize {
        self.bias.numel()
    }

    /// `patchify(img) · projection + bias + position`, an `S_I × H_I` view embedding.
    pub fn embed_view(&self, img: &Image) -> Result<Tensor> {
        if img.height != self.image_size || img.width != self.image_size {
            return Err(Error::Config(format!(
                "image is {}x{}, embedder expects {s}x{s}",
                img.height,
                img.width,
                s = self.image_size
            )));
        }
        patchify(img, self.patch_size)?
            .matmul(&self.projection)?
            .add_bias(&self.bias)?
            .add(&self.position)
    }

    pub fn num_params(&self) -> usize {
        self.projection.numel() + self.bias.numel() + self.position.numel()
    }
}
