//! Resize and augmentation for H x W x 3 tensors.
//!
//! Resize is bilinear with corner alignment: output pixel (x, y) samples the
//! source at (x*(in-1)/(out-1), y*(in-1)/(out-1)), so same-size resize is the
//! identity. Augmentation applies one composed affine transform about the
//! pixel-grid center — rotation, then shear, then zoom, then shift, in that
//! fixed order — sampled per output pixel through the inverse map with
//! nearest-neighbor lookup and edge replication, followed by an optional
//! horizontal flip and the fixed 0.01 value rescale.

use rand::Rng;

use crate::error::{Error, Result};
use crate::heatmap::HeatmapTensor;
use crate::rng::ChaCha8Rng;

/// Fixed multiplicative rescale applied to every augmented tensor.
pub const RESCALE: f64 = 0.01;

pub const ROTATION_RANGE_DEG: f64 = 40.0;
pub const SHIFT_RANGE_FRAC: f64 = 0.2;
pub const SHEAR_RANGE: f64 = 0.2;
pub const ZOOM_LOW: f64 = 0.8;
pub const ZOOM_HIGH: f64 = 1.2;

/// One sampled set of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub shift_x_frac: f64,
    pub shift_y_frac: f64,
    pub shear: f64,
    pub zoom: f64,
    pub hflip: bool,
}

impl AugmentParams {
    /// No geometric change; [`apply_augment`] with these params is exactly
    /// the 0.01 rescale.
    pub fn identity() -> AugmentParams {
        AugmentParams {
            rotation_deg: 0.0,
            shift_x_frac: 0.0,
            shift_y_frac: 0.0,
            shear: 0.0,
            zoom: 1.0,
            hflip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.rotation_deg.abs() <= ROTATION_RANGE_DEG, "rotation_deg"),
            (self.shift_x_frac.abs() <= SHIFT_RANGE_FRAC, "shift_x_frac"),
            (self.shift_y_frac.abs() <= SHIFT_RANGE_FRAC, "shift_y_frac"),
            (self.shear.abs() <= SHEAR_RANGE, "shear"),
            ((ZOOM_LOW..=ZOOM_HIGH).contains(&self.zoom), "zoom"),
        ];
        for (ok, name) in checks {
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "augment parameter {name} out of range: {self:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Samples parameters uniformly within their declared ranges; the flip is a
/// fair coin.
pub fn sample_augment(rng: &mut ChaCha8Rng) -> AugmentParams {
    AugmentParams {
        rotation_deg: rng.gen_range(-ROTATION_RANGE_DEG..=ROTATION_RANGE_DEG),
        shift_x_frac: rng.gen_range(-SHIFT_RANGE_FRAC..=SHIFT_RANGE_FRAC),
        shift_y_frac: rng.gen_range(-SHIFT_RANGE_FRAC..=SHIFT_RANGE_FRAC),
        shear: rng.gen_range(-SHEAR_RANGE..=SHEAR_RANGE),
        zoom: rng.gen_range(ZOOM_LOW..=ZOOM_HIGH),
        hflip: rng.gen_range(0.0..1.0) < 0.5,
    }
}

/// Bilinear resize to `out_h` x `out_w`.
pub fn resize(t: &HeatmapTensor, out_h: usize, out_w: usize) -> Result<HeatmapTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_h}x{out_w} must be at least 1x1"
        )));
    }
    if t.height() == 0 || t.width() == 0 {
        return Err(Error::InvalidArgument("cannot resize an empty tensor".into()));
    }
    let (in_h, in_w) = (t.height(), t.width());
    if in_h == out_h && in_w == out_w {
        return Ok(t.clone());
    }
    let scale = |o: usize, out_n: usize, in_n: usize| -> f64 {
        if out_n <= 1 {
            0.0
        } else {
            o as f64 * (in_n as f64 - 1.0) / (out_n as f64 - 1.0)
        }
    };
    let mut out = HeatmapTensor::zeros(out_h, out_w);
    for y in 0..out_h {
        let sy = scale(y, out_h, in_h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = scale(x, out_w, in_w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = sx - x0 as f64;
            for c in 0..3 {
                let v00 = t.get(y0, x0, c);
                let v01 = t.get(y0, x1, c);
                let v10 = t.get(y1, x0, c);
                let v11 = t.get(y1, x1, c);
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.set(y, x, c, top + (bottom - top) * fy);
            }
        }
    }
    Ok(out)
}

/// Geometric part of the augmentation: affine resample plus optional flip,
/// without the value rescale.
pub fn apply_augment_geometric(t: &HeatmapTensor, p: &AugmentParams) -> HeatmapTensor {
    let (h, w) = (t.height(), t.width());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let theta = p.rotation_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let tx = p.shift_x_frac * w as f64;
    let ty = p.shift_y_frac * h as f64;

    // Forward map about the center: shift(zoom(shear(rot(v)))). Points are
    // (x, y) with y pointing down. Shear is horizontal: x' = x + shear*y.
    // The sampler walks the inverse: v = rot^-1(shear^-1(zoom^-1(u))).
    let mut out = HeatmapTensor::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (dst_x, dst_y) = if p.hflip {
                ((w - 1 - x) as f64, y as f64)
            } else {
                (x as f64, y as f64)
            };
            let ux = (dst_x - cx - tx) / p.zoom;
            let uy = (dst_y - cy - ty) / p.zoom;
            let sx = ux - p.shear * uy;
            let sy = uy;
            let rx = cos_t * sx + sin_t * sy;
            let ry = -sin_t * sx + cos_t * sy;
            let src_x = (rx + cx).round();
            let src_y = (ry + cy).round();
            // "nearest" fill: clamp to the edge pixel.
            let xi = src_x.clamp(0.0, (w - 1) as f64) as usize;
            let yi = src_y.clamp(0.0, (h - 1) as f64) as usize;
            for c in 0..3 {
                out.set(y, x, c, t.get(yi, xi, c));
            }
        }
    }
    out
}

/// Full augmentation: geometric transform, then the 0.01 rescale.
pub fn apply_augment(t: &HeatmapTensor, p: &AugmentParams) -> HeatmapTensor {
    let mut out = apply_augment_geometric(t, p);
    for v in out.data_mut() {
        *v *= RESCALE;
    }
    out
}
