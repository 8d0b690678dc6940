//! Class activation maps: `M_c(x, y) = sum_k w_k^c f_k(x, y)` over the final
//! block's feature maps, and their rendering as heat-map overlays.
//!
//! Colormap breakpoints, for a normalized value `v` in `[0, 1]`:
//!
//! | v   | colour          |
//! |-----|-----------------|
//! | 0   | black (0, 0, 0) |
//! | 0.5 | red (255, 0, 0) |
//! | 1   | yellow (255, 255, 0) |
//!
//! with linear interpolation in between, so red is `min(1, 2v)`, green is
//! `max(0, 2v - 1)` and blue is always 0. Channels are scaled by 255 and
//! rounded half away from zero.

use crate::blocks::Model;
use crate::data::{center_crop, preprocess, RgbImage};
use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::tensor::{Grid, Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    pub class_index: usize,
    /// At feature-map resolution.
    pub raw: Grid<Real>,
    /// Name of the layer whose activations were weighted.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CamRendering {
    pub cam: CamMap,
    /// Min-max normalized, feature-map resolution.
    pub normalized: Grid<Real>,
    /// `normalized` resampled to the image resolution.
    pub upsampled: Grid<Real>,
    pub overlay: RgbImage,
}

/// Weighted channel sum of a single sample's feature maps.
pub fn compute_cam(features: &Tensor4, class_weights: &[Real], class_index: usize) -> Result<CamMap> {
    let d = features.dims();
    if d.n() != 1 {
        return Err(Error::shape("compute_cam", "a single sample", d));
    }
    if class_weights.len() != d.c() {
        return Err(Error::shape(
            "compute_cam",
            format!("{} class weights for {d}", d.c()),
            class_weights.len(),
        ));
    }
    let mut raw = vec![0.0 as Real; d.plane()];
    for (k, &w) in class_weights.iter().enumerate() {
        for (m, f) in raw.iter_mut().zip(features.plane(0, k)) {
            *m += w * f;
        }
    }
    Ok(CamMap {
        class_index,
        raw: Grid::new(d.h(), d.w(), raw)?,
        source: "features".into(),
    })
}

/// `(m - min) / (max - min)`; a constant map becomes all zeros.
pub fn normalize_cam(m: &CamMap) -> Grid<Real> {
    let (lo, hi) = m.raw.min_max();
    let range = hi - lo;
    if range > 0.0 {
        m.raw.map(|v| (v - lo) / range)
    } else {
        m.raw.map(|_| 0.0)
    }
}

pub fn colormap(v: Real) -> [Real; 3] {
    let v = v.clamp(0.0, 1.0);
    [(2.0 * v).min(1.0), (2.0 * v - 1.0).max(0.0), 0.0]
}

/// `(1 - alpha) * gray + alpha * colormap(cam)`, per channel.
pub fn render_overlay(image: &Grid<u8>, cam: &Grid<Real>, alpha: Real) -> Result<RgbImage> {
    if image.dims() != cam.dims() {
        return Err(Error::shape(
            "render_overlay",
            format!("{}x{} heat map", image.height(), image.width()),
            format!("{}x{}", cam.height(), cam.width()),
        ));
    }
    check_alpha(alpha)?;
    let mut data = Vec::with_capacity(3 * image.data().len());
    for (&g, &c) in image.data().iter().zip(cam.data()) {
        for ch in colormap(c) {
            data.push(blend(g, ch, alpha));
        }
    }
    Ok(RgbImage {
        height: image.height(),
        width: image.width(),
        data,
    })
}

fn check_alpha(alpha: Real) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn blend(gray: u8, colour: Real, alpha: Real) -> u8 {
    if alpha == 0.0 {
        return gray;
    }
    ((1.0 - alpha) * Real::from(gray) + alpha * colour * 255.0).round().clamp(0.0, 255.0) as u8
}

/// 8-bit encoding of a `[0, 1]` grid, `round(255 v)`.
pub fn to_gray8(grid: &Grid<Real>) -> Grid<u8> {
    grid.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

fn model_cam(model: &Model, input: &Grid<Real>, class_index: usize) -> Result<CamMap> {
    let out = model.forward(&input.to_tensor(), false)?;
    let (weights, _) = model.class_weights(class_index)?;
    let mut cam = compute_cam(&out.features, &weights, class_index)?;
    cam.source = model.feature_layer();
    Ok(cam)
}

/// Forward pass, CAM, normalization, upsampling to the input resolution and
/// overlay on the input itself. `image` must already be at the model's input
/// size with intensities in `[0, 1]`.
pub fn cam_for_model(model: &Model, image: &Grid<Real>, class_index: usize, alpha: Real) -> Result<CamRendering> {
    check_alpha(alpha)?;
    let cam = model_cam(model, image, class_index)?;
    let normalized = normalize_cam(&cam);
    let (h, w) = image.dims();
    let upsampled = bilinear_resize(&normalized, h, w);
    let overlay = render_overlay(&to_gray8(image), &upsampled, alpha)?;
    Ok(CamRendering {
        cam,
        normalized,
        upsampled,
        overlay,
    })
}

/// As [`cam_for_model`] for an original-resolution 8-bit image: the image is
/// centre-cropped to at most `crop` pixels and resized for the model, the heat
/// map is upsampled to the crop window and the overlay keeps the original
/// dimensions, leaving pixels outside the window unchanged.
pub fn cam_for_image(model: &Model, image: &Grid<u8>, crop: usize, class_index: usize, alpha: Real) -> Result<CamRendering> {
    check_alpha(alpha)?;
    let (h, w) = image.dims();
    let side = crop.min(h).min(w);
    let input = preprocess(image, crop, model.spec().input_size)?;
    let cam = model_cam(model, &input, class_index)?;
    let normalized = normalize_cam(&cam);
    let upsampled = bilinear_resize(&normalized, side, side);
    let window = render_overlay(&center_crop(image, side)?, &upsampled, alpha)?;
    let (top, left) = ((h - side) / 2, (w - side) / 2);
    let mut data = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            let inside = (top..top + side).contains(&y) && (left..left + side).contains(&x);
            if inside {
                data.extend_from_slice(&window.pixel(y - top, x - left));
            } else {
                let g = image.get(y, x);
                data.extend_from_slice(&[g, g, g]);
            }
        }
    }
    Ok(CamRendering {
        cam,
        normalized,
        upsampled,
        overlay: RgbImage {
            height: h,
            width: w,
            data,
        },
    })
}
