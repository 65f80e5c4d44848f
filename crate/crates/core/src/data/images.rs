use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::imageops::FilterType;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::model::encoder::{encode_image, VisualEncoder, VisualFeatureGrid};

/// Decodes an image, resizes it (no crop) to `size = (h, w)` and applies
/// per-channel `(v / 255 - mean) / std`.
pub fn load_image(path: &Path, size: (usize, usize), normalization: ([f64; 3], [f64; 3])) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    })?;
    let mut rgb = img.to_rgb8();
    let (h, w) = size;
    if rgb.dimensions() != (w as u32, h as u32) {
        rgb = image::imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
    }
    let (mean, std) = normalization;
    Ok(Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        let v = rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
        (v - mean[c]) / std[c]
    }))
}

/// Preprocessed image and its frozen encoder features.
#[derive(Clone, Debug)]
pub struct EncodedImage {
    pub pixels: Arc<Array3<f64>>,
    pub features: Arc<VisualFeatureGrid>,
}

/// Thread-safe cache of encoded images. The encoder is frozen, so features
/// computed once stay valid for the lifetime of the store.
pub struct ImageStore {
    encoder: Arc<dyn VisualEncoder>,
    cache: Mutex<HashMap<PathBuf, EncodedImage>>,
}

impl ImageStore {
    pub fn new(encoder: Arc<dyn VisualEncoder>) -> Self {
        Self {
            encoder,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn encoder(&self) -> &dyn VisualEncoder {
        self.encoder.as_ref()
    }

    pub fn get(&self, path: &Path) -> Result<EncodedImage> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(path) {
            return Ok(hit.clone());
        }
        let handle = self.encoder.handle();
        let pixels = load_image(path, handle.input_size, self.encoder.normalization())?;
        let features = encode_image(&pixels, self.encoder.as_ref())?;
        let entry = EncodedImage {
            pixels: Arc::new(pixels),
            features: Arc::new(features),
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert(path.to_path_buf(), entry.clone());
        Ok(entry)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
