use std::f64::consts::FRAC_PI_4;

use crate::geometry::BoundingBox;

/// Number of scalar box descriptors that get expanded.
pub const BASE_COMPONENTS: usize = 8;

/// Deterministic sinusoidal box encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeature {
    pub values: Vec<f64>,
}

/// Encodes a box relative to its image into `dim` values.
///
/// The descriptors `(x_t/W, y_t/H, x_b/W, y_b/H, w/W, h/H, area/(W*H),
/// ln(w/h))` are each expanded to `sin(f*v), cos(f*v)` for the frequencies
/// `f = 2^k * pi/4`, `k = 0..dim/16`. `dim` must be a positive multiple of 16.
///
/// Boxes reaching past the image border are clamped (with a warning) first.
pub fn spatial_encode(bbox: &BoundingBox, image_w: f64, image_h: f64, dim: usize) -> SpatialFeature {
    assert!(
        dim > 0 && dim.is_multiple_of(2 * BASE_COMPONENTS),
        "spatial dimension {dim} is not a positive multiple of {}",
        2 * BASE_COMPONENTS
    );
    let base = descriptors(bbox, image_w, image_h);
    let freqs = dim / (2 * BASE_COMPONENTS);
    let mut values = Vec::with_capacity(dim);
    for v in base {
        let mut f = FRAC_PI_4;
        for _ in 0..freqs {
            values.push((f * v).sin());
            values.push((f * v).cos());
            f *= 2.0;
        }
    }
    SpatialFeature { values }
}

/// The eight unexpanded descriptors.
pub fn descriptors(bbox: &BoundingBox, image_w: f64, image_h: f64) -> [f64; BASE_COMPONENTS] {
    let mut c = bbox.coords();
    if !bbox.is_within(image_w, image_h) {
        log::warn!("box {c:?} exceeds image {image_w}x{image_h}; clamping");
        c[0] = c[0].min(image_w);
        c[2] = c[2].min(image_w);
        c[1] = c[1].min(image_h);
        c[3] = c[3].min(image_h);
    }
    // a box fully outside the image collapses; keep one pixel of extent
    let w = (c[2] - c[0]).max(1.0);
    let h = (c[3] - c[1]).max(1.0);
    [
        c[0] / image_w,
        c[1] / image_h,
        c[2] / image_w,
        c[3] / image_h,
        w / image_w,
        h / image_h,
        (w * h) / (image_w * image_h),
        (w / h).ln(),
    ]
}
