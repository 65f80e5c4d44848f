use ndarray::Array2;

use super::Target;
use crate::error::{Error, Result};

/// Gaussian width in output pixels for training targets.
pub const DEFAULT_SIGMA: f64 = 3.0;

pub type HeatmapTarget = Array2<f64>;

/// Maps a normalized point to its pixel `(row, col)` using
/// `round(x * (W - 1))`, halves rounded away from zero.
pub fn quantize_point(point: (f64, f64), h_out: usize, w_out: usize) -> (usize, usize) {
    let col = (point.0 * (w_out as f64 - 1.0)).round() as usize;
    let row = (point.1 * (h_out as f64 - 1.0)).round() as usize;
    (row, col)
}

/// Peak-normalized Gaussian centred on the quantized gaze point. Training
/// targets carry exactly one point.
pub fn synth_heatmap(points: &[(f64, f64)], h_out: usize, w_out: usize, sigma: f64) -> Result<HeatmapTarget> {
    if points.len() != 1 {
        return Err(Error::InvalidTarget(format!(
            "training heatmap needs exactly one gaze point, got {}",
            points.len()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidTarget(format!("sigma must be positive, got {sigma}")));
    }
    Target::validate_points(points)?;
    let (cy, cx) = quantize_point(points[0], h_out, w_out);
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Array2::from_shape_fn((h_out, w_out), |(i, j)| {
        let dy = i as f64 - cy as f64;
        let dx = j as f64 - cx as f64;
        (-(dx * dx + dy * dy) * inv).exp()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn center_point_peaks_at_32() {
        let h = synth_heatmap(&[(0.5, 0.5)], 64, 64, 3.0).unwrap();
        assert_eq!(h[[32, 32]], 1.0);
        assert_eq!(h[[32, 31]], (-1.0f64 / 18.0).exp());
        assert_eq!(quantize_point((0.5, 0.5), 64, 64), (32, 32));
    }

    #[test]
    fn rejects_bad_targets() {
        assert!(matches!(
            synth_heatmap(&[(1.2, 0.5)], 8, 8, 1.0),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(
            synth_heatmap(&[(0.2, 0.5)], 8, 8, 0.0),
            Err(Error::InvalidTarget(_))
        ));
        assert!(synth_heatmap(&[(0.2, 0.5), (0.1, 0.1)], 8, 8, 1.0).is_err());
        assert!(synth_heatmap(&[], 8, 8, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn unique_peak_at_quantized_point(x in 0.0f64..=1.0, y in 0.0f64..=1.0, s in 0.5f64..6.0) {
            let h = synth_heatmap(&[(x, y)], 64, 64, s).unwrap();
            let (r, c) = quantize_point((x, y), 64, 64);
            prop_assert_eq!(h[[r, c]], 1.0);
            for ((i, j), v) in h.indexed_iter() {
                prop_assert!(*v <= 1.0 && *v > 0.0 || *v == 0.0);
                if (i, j) != (r, c) {
                    prop_assert!(*v < 1.0);
                }
            }
        }
    }
}
