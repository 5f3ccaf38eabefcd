//! Synthetic class-template datasets.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataspace::{Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::rng::{mix64, rng_from_seed};
use crate::scalar::Scalar;

/// Strokes per class template.
const STROKES: usize = 3;

/// The deterministic template for class `class` at `side × side`.
///
/// Three anti-aliased line strokes on a black background, with endpoints
/// drawn from a stream keyed only on `(class, side)`. Stroke half-width is
/// `side / 10` pixels, at least 0.75.
pub fn class_template(class: usize, side: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(mix64(class as u64 ^ mix64(0x57_0E5 ^ side as u64)));
    let s = side as f64;
    let mut point = || rng.random_range(0.15..0.85) * s;
    let strokes: Vec<[f64; 4]> = (0..STROKES).map(|_| [point(), point(), point(), point()]).collect();
    let half_width = (s / 10.0).max(0.75);
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let ink = strokes
                .iter()
                .map(|&[ax, ay, bx, by]| {
                    let (dx, dy) = (bx - ax, by - ay);
                    let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy).max(1e-12)).clamp(0.0, 1.0);
                    let d = (ax + t * dx - px).hypot(ay + t * dy - py);
                    (1.0 - (d - half_width).max(0.0)).clamp(0.0, 1.0)
                })
                .fold(0.0, f64::max);
            out.push(ink);
        }
    }
    out
}

/// `per_class` jittered copies of each class template, class-major order.
///
/// Pixel jitter is i.i.d. `N(0, sigma)` clamped to `[0, 1]`; `sigma = 0`
/// reproduces the templates exactly.
pub fn synth_blobs<T: Scalar>(
    num_classes: usize,
    per_class: usize,
    side: usize,
    sigma: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if num_classes < 2 {
        return Err(Error::arg("synth_blobs needs at least 2 classes"));
    }
    if side < 4 {
        return Err(Error::arg("synth_blobs needs side >= 4"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be non-negative, got {sigma}")));
    }
    let mut rng = rng_from_seed(seed);
    let jitter = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut samples = Vec::with_capacity(num_classes * per_class * side * side);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let template = class_template(c, side);
        for _ in 0..per_class {
            for &t in &template {
                let v = if sigma > 0.0 {
                    (t + jitter.sample(&mut rng)).clamp(0.0, 1.0)
                } else {
                    t
                };
                samples.push(T::of(v));
            }
            labels.push(c);
        }
    }
    Dataset::new(ImageShape::grayscale(side, side), samples, labels, num_classes)
}
