use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

/// Gaze heatmap head geometry: per-patch affine projection to a scalar,
/// one transposed convolution, then bilinear resize to the output grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapHeadConfig {
    pub grid: (usize, usize),
    pub output: (usize, usize),
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl HeatmapHeadConfig {
    pub fn new(grid: (usize, usize), output: (usize, usize)) -> Result<Self> {
        let c = Self {
            grid,
            output,
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.0 == 0 || self.grid.1 == 0 || self.output.0 == 0 || self.output.1 == 0 {
            return Err(Error::config("heatmap grid and output must be non-empty"));
        }
        if self.kernel < 2 * self.padding + 1 || self.stride == 0 {
            return Err(Error::config("transposed convolution geometry is invalid"));
        }
        Ok(())
    }

    /// Spatial size after the transposed convolution.
    pub fn upsampled(&self) -> (usize, usize) {
        let f = |n: usize| (n - 1) * self.stride + self.kernel - 2 * self.padding;
        (f(self.grid.0), f(self.grid.1))
    }
}

/// Bilinear interpolation matrix `out_len x in_len` with half-pixel centers
/// (`align_corners = false`), edges clamped.
pub fn bilinear_matrix(in_len: usize, out_len: usize) -> Array2<f64> {
    let mut m = Array2::zeros((out_len, in_len));
    let ratio = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = src - i0 as f64;
        m[[o, i0]] += 1.0 - frac;
        m[[o, i1]] += frac;
    }
    m
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct HeatmapSlots(pub [usize; 4]);

/// Registers head parameters. The projection starts small and random; the
/// transposed-convolution kernel starts as a bilinear upsampling stencil.
pub(crate) fn register_head(
    config: &HeatmapHeadConfig,
    d_l: usize,
    params: &mut ParamSet,
    rng: &mut impl Rng,
) -> HeatmapSlots {
    let dist = Normal::new(0.0, 1.0 / (d_l as f64).sqrt()).expect("valid normal");
    let proj = Array2::from_shape_fn((d_l, 1), |_| dist.sample(rng));
    let k = config.kernel;
    let center = (k as f64 - 1.0) / 2.0;
    let factor = k.div_ceil(2) as f64;
    let tap = |i: usize| 1.0 - (i as f64 - center).abs() / factor;
    let kernel = Array2::from_shape_fn((k, k), |(i, j)| tap(i) * tap(j));
    HeatmapSlots([
        params.push("heatmap.proj.w", proj),
        params.push("heatmap.proj.b", Array2::zeros((1, 1))),
        params.push("heatmap.deconv.k", kernel),
        params.push("heatmap.deconv.b", Array2::zeros((1, 1))),
    ])
}

/// Constants shared by every heatmap forward in one graph.
pub(crate) struct BoundHeatmap {
    config: HeatmapHeadConfig,
    w: [Var; 4],
    rows: Var,
    cols_t: Var,
}

impl BoundHeatmap {
    pub(crate) fn new(g: &mut Graph, config: HeatmapHeadConfig, w: [Var; 4]) -> Self {
        let (uh, uw) = config.upsampled();
        let rows = g.constant(bilinear_matrix(uh, config.output.0));
        let cols_t = g.constant(bilinear_matrix(uw, config.output.1).reversed_axes());
        Self {
            config,
            w,
            rows,
            cols_t,
        }
    }

    /// `states` holds one row per visual position in row-major patch order.
    /// Returns pre-sigmoid scores of the output shape.
    pub(crate) fn forward(&self, g: &mut Graph, states: Var) -> Var {
        let (gh, gw) = self.config.grid;
        let s = g.matmul(states, self.w[0]);
        let s = g.add_row(s, self.w[1]);
        let s = g.reshape(s, gh, gw);
        let up = g.conv_transpose(s, self.w[2], self.w[3], self.config.stride, self.config.padding);
        let y = g.matmul(self.rows, up);
        g.matmul(y, self.cols_t)
    }
}
