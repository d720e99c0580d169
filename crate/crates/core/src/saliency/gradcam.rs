use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, LayerId};
use crate::types::{ClassLabel, ImageTensor, SaliencyMap, SaliencyMethod};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCamConfig {
    /// Target conv layer; `None` means the classifier's last conv layer.
    pub layer: Option<LayerId>,
}

/// Channel weights are spatially averaged gradients; the map is the ReLU of
/// the weighted activation sum, bilinearly resized to the image.
pub fn grad_cam(
    classifier: &dyn Classifier,
    image: &ImageTensor,
    image_id: &str,
    class: ClassLabel,
    cfg: &GradCamConfig,
) -> Result<SaliencyMap> {
    if !classifier.supports_gradients() {
        return Err(Error::UnsupportedExplainer);
    }
    let (act, grad) = classifier.activations_and_gradients(image, class, cfg.layer)?;
    let a = &act.tensor;
    let g = &grad.tensor;
    if a.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", g.shape()),
        });
    }
    let n = a.plane_len();
    let mut cam = vec![0.0f64; n];
    for c in 0..a.channels {
        let weight = g.plane(c).iter().sum::<f64>() / n as f64;
        if weight == 0.0 {
            continue;
        }
        for (m, &v) in cam.iter_mut().zip(a.plane(c)) {
            *m += weight * v;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let up = bilinear_resize(&cam, a.height, a.width, image.height(), image.width());
    SaliencyMap::new(
        image.height(),
        image.width(),
        up.into_iter().map(|v| v as f32).collect(),
        SaliencyMethod::GradCam,
        image_id,
        class,
    )
}

/// Bilinear resampling with half-pixel centres and edge clamping.
///
/// Each output is a convex combination of inputs, so non-negative input
/// stays non-negative.
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, sy, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, sx, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(bilinear_resize(&src, 3, 4, 3, 4), src);
    }

    #[test]
    fn upsample_constant_and_interpolates() {
        let out = bilinear_resize(&[2.0; 4], 2, 2, 8, 8);
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let out = bilinear_resize(&[0.0, 1.0], 1, 2, 1, 4);
        // centres at -0.25, 0.25, 0.75, 1.25 in source pixels
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }
}
