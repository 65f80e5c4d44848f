use ndarray::{s, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch-feature map produced by a visual encoder, optionally after the
/// connector. Shape is `(grid_h, grid_w, dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatureGrid {
    pub values: Array3<f64>,
}

impl VisualFeatureGrid {
    pub fn new(values: Array3<f64>) -> Self {
        Self { values }
    }

    pub fn grid(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }

    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn num_patches(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Patches flattened in row-major order, one row per patch.
    pub fn to_rows(&self) -> Array2<f64> {
        let (h, w, d) = self.values.dim();
        self.values
            .to_owned()
            .into_shape_with_order((h * w, d))
            .expect("contiguous grid")
    }

    pub fn from_rows(rows: Array2<f64>, grid: (usize, usize)) -> Result<Self> {
        let d = rows.ncols();
        if rows.nrows() != grid.0 * grid.1 {
            return Err(Error::input(format!(
                "{} rows cannot form a {}x{} grid",
                rows.nrows(),
                grid.0,
                grid.1
            )));
        }
        let values = rows
            .into_shape_with_order((grid.0, grid.1, d))
            .map_err(|e| Error::input(e.to_string()))?;
        Ok(Self { values })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Static description of a visual encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualEncoderHandle {
    pub name: String,
    pub input_size: (usize, usize),
    pub patch_size: usize,
    pub grid: (usize, usize),
    pub feature_dim: usize,
    pub frozen: bool,
}

impl VisualEncoderHandle {
    pub fn new(
        name: impl Into<String>,
        input_size: (usize, usize),
        patch_size: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        let (h, w) = input_size;
        if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
            return Err(Error::config(format!(
                "input {h}x{w} is not divisible by patch size {patch_size}"
            )));
        }
        if feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        Ok(Self {
            name: name.into(),
            input_size,
            patch_size,
            grid: (h / patch_size, w / patch_size),
            feature_dim,
            frozen: true,
        })
    }
}

/// A frozen image encoder. Implementations must be pure: the same image
/// always yields the same grid, and nothing about the encoder changes
/// during training.
pub trait VisualEncoder: Send + Sync {
    fn handle(&self) -> &VisualEncoderHandle;

    /// Per-channel `(mean, std)` applied to `[0, 1]` pixel values.
    fn normalization(&self) -> ([f64; 3], [f64; 3]);

    /// Encodes a normalized `H_in x W_in x 3` image. Callers go through
    /// [`encode_image`], which validates shapes and finiteness.
    fn encode_unchecked(&self, image: &Array3<f64>) -> Array3<f64>;

    /// Digest of every encoder parameter.
    fn checksum(&self) -> String;
}

pub fn encode_image(image: &Array3<f64>, encoder: &dyn VisualEncoder) -> Result<VisualFeatureGrid> {
    let handle = encoder.handle();
    let (h, w, c) = image.dim();
    if (h, w) != handle.input_size || c != 3 {
        return Err(Error::input(format!(
            "image is {h}x{w}x{c}, encoder {} expects {}x{}x3",
            handle.name, handle.input_size.0, handle.input_size.1
        )));
    }
    let grid = VisualFeatureGrid::new(encoder.encode_unchecked(image));
    if !grid.is_finite() {
        return Err(Error::Numeric(format!(
            "encoder {} produced non-finite features",
            handle.name
        )));
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_encoder_name")]
    pub name: String,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_encoder_seed")]
    pub seed: u64,
}

fn default_encoder_name() -> String {
    "patch-random".into()
}
fn default_image_size() -> usize {
    336
}
fn default_patch_size() -> usize {
    14
}
fn default_feature_dim() -> usize {
    1024
}
fn default_encoder_seed() -> u64 {
    17
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            name: default_encoder_name(),
            image_size: default_image_size(),
            patch_size: default_patch_size(),
            feature_dim: default_feature_dim(),
            seed: default_encoder_seed(),
        }
    }
}

/// Seeded random patch-embedding encoder: each patch is flattened, mapped
/// through a fixed linear projection plus a fixed position embedding, and
/// squashed with `tanh`. Stands in for a pretrained ViT at desk scale.
pub struct PatchEncoder {
    handle: VisualEncoderHandle,
    projection: Array2<f64>,
    bias: Array2<f64>,
    position: Array2<f64>,
}

impl PatchEncoder {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        let handle = VisualEncoderHandle::new(
            config.name.clone(),
            (config.image_size, config.image_size),
            config.patch_size,
            config.feature_dim,
        )?;
        let p = config.patch_size;
        let fan_in = p * p * 3;
        let d = config.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let proj_dist = Normal::new(0.0, 2.0 / (fan_in as f64).sqrt()).expect("valid normal");
        let small = Normal::new(0.0, 0.5).expect("valid normal");
        let projection = Array2::from_shape_fn((fan_in, d), |_| proj_dist.sample(&mut rng));
        let bias = Array2::from_shape_fn((1, d), |_| 0.2 * small.sample(&mut rng));
        let patches = handle.grid.0 * handle.grid.1;
        let position = Array2::from_shape_fn((patches, d), |_| small.sample(&mut rng));
        Ok(Self {
            handle,
            projection,
            bias,
            position,
        })
    }
}

impl VisualEncoder for PatchEncoder {
    fn handle(&self) -> &VisualEncoderHandle {
        &self.handle
    }

    fn normalization(&self) -> ([f64; 3], [f64; 3]) {
        ([0.5, 0.5, 0.5], [0.25, 0.25, 0.25])
    }

    fn encode_unchecked(&self, image: &Array3<f64>) -> Array3<f64> {
        let p = self.handle.patch_size;
        let (gh, gw) = self.handle.grid;
        let mut patches = Array2::zeros((gh * gw, p * p * 3));
        for gy in 0..gh {
            for gx in 0..gw {
                let patch = image.slice(s![gy * p..(gy + 1) * p, gx * p..(gx + 1) * p, ..]);
                let mut row = patches.row_mut(gy * gw + gx);
                for (dst, src) in row.iter_mut().zip(patch.iter()) {
                    *dst = *src;
                }
            }
        }
        let mut features = patches.dot(&self.projection) + &self.bias + &self.position;
        features.mapv_inplace(f64::tanh);
        features
            .into_shape_with_order((gh, gw, self.handle.feature_dim))
            .expect("grid reshape")
    }

    fn checksum(&self) -> String {
        crate::model::params::digest([&self.projection, &self.bias, &self.position])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(image: usize, patch: usize) -> PatchEncoder {
        PatchEncoder::new(&EncoderConfig {
            name: "toy".into(),
            image_size: image,
            patch_size: patch,
            feature_dim: 8,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn reference_geometry_is_24_by_24() {
        let h = VisualEncoderHandle::new("clip-336", (336, 336), 14, 1024).unwrap();
        assert_eq!(h.grid, (24, 24));
        assert!(h.frozen);
    }

    #[test]
    fn inexact_patch_division_rejected() {
        assert!(VisualEncoderHandle::new("x", (30, 30), 14, 8).is_err());
    }

    #[test]
    fn toy_image_gives_two_by_two_grid() {
        let enc = toy(28, 14);
        let img = Array3::from_elem((28, 28, 3), 0.1);
        let z = encode_image(&img, &enc).unwrap();
        assert_eq!(z.values.dim(), (2, 2, 8));
    }

    #[test]
    fn all_zero_image_is_finite() {
        let enc = toy(28, 14);
        let z = encode_image(&Array3::zeros((28, 28, 3)), &enc).unwrap();
        assert!(z.is_finite());
    }

    #[test]
    fn wrong_size_is_invalid_input() {
        let enc = toy(28, 14);
        let err = encode_image(&Array3::zeros((27, 28, 3)), &enc).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn rows_roundtrip_row_major() {
        let values = Array3::from_shape_fn((2, 3, 1), |(i, j, _)| (i * 3 + j) as f64);
        let grid = VisualFeatureGrid::new(values);
        let rows = grid.to_rows();
        assert_eq!(rows.column(0).to_vec(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(VisualFeatureGrid::from_rows(rows, (2, 3)).unwrap(), grid);
    }
}
