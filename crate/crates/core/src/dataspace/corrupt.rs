//! Input-space corruption: pixel distortions, whole-image patches, and the
//! per-client injector that applies them to a fraction of a shard.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataspace::{ClientDataset, CorruptionRecord, ImageShape, Quality};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Low, Severity::Medium, Severity::High];

    fn pick<V: Copy>(self, table: [V; 3]) -> V {
        table[self as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistortionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GaussianBlur,
    MotionBlur,
    Contrast,
    Brightness,
    Saturate,
    Pixelate,
    LabelFlip,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 11] = [
        DistortionKind::GaussianNoise,
        DistortionKind::ShotNoise,
        DistortionKind::ImpulseNoise,
        DistortionKind::DefocusBlur,
        DistortionKind::GaussianBlur,
        DistortionKind::MotionBlur,
        DistortionKind::Contrast,
        DistortionKind::Brightness,
        DistortionKind::Saturate,
        DistortionKind::Pixelate,
        DistortionKind::LabelFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::GaussianNoise => "gaussian_noise",
            DistortionKind::ShotNoise => "shot_noise",
            DistortionKind::ImpulseNoise => "impulse_noise",
            DistortionKind::DefocusBlur => "defocus_blur",
            DistortionKind::GaussianBlur => "gaussian_blur",
            DistortionKind::MotionBlur => "motion_blur",
            DistortionKind::Contrast => "contrast",
            DistortionKind::Brightness => "brightness",
            DistortionKind::Saturate => "saturate",
            DistortionKind::Pixelate => "pixelate",
            DistortionKind::LabelFlip => "label_flip",
        }
    }
}

/// Whole-image replacements. `ProceduralPatch` is multi-octave value noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatchKind {
    BlackPatch,
    GaussianPatch,
    ProceduralPatch,
}

impl PatchKind {
    pub const ALL: [PatchKind; 3] = [
        PatchKind::BlackPatch,
        PatchKind::GaussianPatch,
        PatchKind::ProceduralPatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatchKind::BlackPatch => "black_patch",
            PatchKind::GaussianPatch => "gaussian_patch",
            PatchKind::ProceduralPatch => "procedural_patch",
        }
    }
}

/// Any corruption a noisy client may draw for a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CorruptionKind {
    Distortion(DistortionKind),
    Patch(PatchKind),
}

impl CorruptionKind {
    /// Every kind, distortions first.
    pub fn all() -> Vec<CorruptionKind> {
        DistortionKind::ALL
            .iter()
            .copied()
            .map(CorruptionKind::Distortion)
            .chain(PatchKind::ALL.iter().copied().map(CorruptionKind::Patch))
            .collect()
    }

    /// The pixel distortions, without label flips or patches.
    pub fn pixel_distortions() -> Vec<CorruptionKind> {
        DistortionKind::ALL
            .iter()
            .copied()
            .filter(|k| *k != DistortionKind::LabelFlip)
            .map(CorruptionKind::Distortion)
            .collect()
    }

    /// Defocus blur, Gaussian blur and contrast: the distortions that
    /// degrade generalisation the most, used for the headline noisy setup.
    pub fn headline() -> Vec<CorruptionKind> {
        [DistortionKind::DefocusBlur, DistortionKind::GaussianBlur, DistortionKind::Contrast]
            .into_iter()
            .map(CorruptionKind::Distortion)
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Distortion(d) => d.name(),
            CorruptionKind::Patch(p) => p.name(),
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::all()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown corruption kind `{s}`")))
    }
}

impl TryFrom<String> for CorruptionKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CorruptionKind> for String {
    fn from(k: CorruptionKind) -> String {
        k.name().to_string()
    }
}

/// How a noisy client's shard is corrupted.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionSpec {
    pub kinds: Vec<CorruptionKind>,
    pub severity: Severity,
    pub noise_level: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kinds: impl IntoIterator<Item = CorruptionKind>, severity: Severity, noise_level: f64, seed: u64) -> Self {
        let mut kinds: Vec<CorruptionKind> = kinds.into_iter().collect();
        kinds.sort_unstable();
        kinds.dedup();
        Self {
            kinds,
            severity,
            noise_level,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::arg(format!(
                "noise level {} outside [0, 1]",
                self.noise_level
            )));
        }
        if self.noise_level > 0.0 && self.kinds.is_empty() {
            return Err(Error::arg("noise level > 0 requires at least one corruption kind"));
        }
        Ok(())
    }
}

/// Number of samples a shard of `len` gets corrupted at `noise_level`
/// (round half up).
pub fn noisy_count(noise_level: f64, len: usize) -> usize {
    ((noise_level * len as f64 + 0.5).floor() as usize).min(len)
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// 2-D correlation with replicated borders. `kernel` holds `(dy, dx, w)`
/// taps whose weights sum to one.
fn correlate<T: Scalar>(image: &[T], shape: ImageShape, kernel: &[(isize, isize, f64)]) -> Vec<T> {
    let (h, w) = (shape.height as isize, shape.width as isize);
    let taps: Vec<(isize, isize, T)> = kernel.iter().map(|&(dy, dx, k)| (dy, dx, T::of(k))).collect();
    let mut out = vec![T::zero(); image.len()];
    for c in 0..shape.channels {
        let plane = &image[c * shape.plane()..(c + 1) * shape.plane()];
        let dst = &mut out[c * shape.plane()..(c + 1) * shape.plane()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for &(dy, dx, k) in &taps {
                    let sy = (y + dy).clamp(0, h - 1);
                    let sx = (x + dx).clamp(0, w - 1);
                    acc += k * plane[(sy * w + sx) as usize];
                }
                dst[(y * w + x) as usize] = clamp01(acc);
            }
        }
    }
    out
}

fn normalize(mut taps: Vec<(isize, isize, f64)>) -> Vec<(isize, isize, f64)> {
    let total: f64 = taps.iter().map(|t| t.2).sum();
    for t in &mut taps {
        t.2 /= total;
    }
    taps
}

fn disk_kernel(radius: usize) -> Vec<(isize, isize, f64)> {
    let r = radius as isize;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                taps.push((dy, dx, 1.0));
            }
        }
    }
    normalize(taps)
}

/// Separable Gaussian blur, kernel width `6σ + 1`.
fn gaussian_blur<T: Scalar>(image: &[T], shape: ImageShape, sigma: f64) -> Vec<T> {
    let half = (3.0 * sigma).round() as isize;
    let row: Vec<(isize, f64)> = {
        let raw: Vec<(isize, f64)> = (-half..=half)
            .map(|d| (d, (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()))
            .collect();
        let total: f64 = raw.iter().map(|t| t.1).sum();
        raw.into_iter().map(|(d, w)| (d, w / total)).collect()
    };
    let horizontal: Vec<(isize, isize, f64)> = row.iter().map(|&(d, w)| (0, d, w)).collect();
    let vertical: Vec<(isize, isize, f64)> = row.iter().map(|&(d, w)| (d, 0, w)).collect();
    correlate(&correlate(image, shape, &horizontal), shape, &vertical)
}

fn motion_kernel(length: usize, angle: f64) -> Vec<(isize, isize, f64)> {
    let mut taps: Vec<(isize, isize, f64)> = Vec::new();
    let centre = (length as f64 - 1.0) / 2.0;
    for t in 0..length {
        let s = t as f64 - centre;
        let dy = (s * angle.sin()).round() as isize;
        let dx = (s * angle.cos()).round() as isize;
        match taps.iter_mut().find(|p| p.0 == dy && p.1 == dx) {
            Some(p) => p.2 += 1.0,
            None => taps.push((dy, dx, 1.0)),
        }
    }
    normalize(taps)
}

/// Applies one pixel distortion at the given severity.
///
/// Parameters per severity (low / medium / high):
/// Gaussian noise σ 0.08/0.18/0.38; shot-noise photon scale 60/12/3;
/// impulse fraction 0.03/0.09/0.27; defocus disk radius 1/3/6 px;
/// Gaussian blur σ 1/3/6; motion length 3/9/15 at a random angle;
/// contrast factor 0.4/0.2/0.1; brightness +0.1/+0.3/+0.5;
/// saturation strength 0.3/0.6/0.9; pixelate factor 2/4/8.
pub fn apply_distortion<T: Scalar>(
    image: &[T],
    shape: ImageShape,
    kind: DistortionKind,
    severity: Severity,
    rng: &mut Rng,
) -> Result<Vec<T>> {
    if image.len() != shape.len() {
        return Err(Error::arg(format!(
            "image has {} values, shape needs {}",
            image.len(),
            shape.len()
        )));
    }
    let out = match kind {
        DistortionKind::GaussianNoise => {
            let noise = Normal::new(0.0, severity.pick([0.08, 0.18, 0.38])).expect("valid sigma");
            image
                .iter()
                .map(|&v| clamp01(v + T::of(noise.sample(rng))))
                .collect()
        }
        DistortionKind::ShotNoise => {
            let scale: f64 = severity.pick([60.0, 12.0, 3.0]);
            image
                .iter()
                .map(|&v| {
                    let lambda = v.as_f64() * scale;
                    let photons = if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive rate").sample(rng)
                    } else {
                        0.0
                    };
                    clamp01(T::of(photons / scale))
                })
                .collect()
        }
        DistortionKind::ImpulseNoise => {
            let fraction: f64 = severity.pick([0.03, 0.09, 0.27]);
            image
                .iter()
                .map(|&v| {
                    if rng.random_bool(fraction) {
                        if rng.random_bool(0.5) {
                            T::one()
                        } else {
                            T::zero()
                        }
                    } else {
                        v
                    }
                })
                .collect()
        }
        DistortionKind::DefocusBlur => {
            correlate(image, shape, &disk_kernel(severity.pick([1, 3, 6])))
        }
        DistortionKind::GaussianBlur => gaussian_blur(image, shape, severity.pick([1.0, 3.0, 6.0])),
        DistortionKind::MotionBlur => {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            correlate(image, shape, &motion_kernel(severity.pick([3, 9, 15]), angle))
        }
        DistortionKind::Contrast => {
            let factor = T::of(severity.pick([0.4, 0.2, 0.1]));
            let mean = image.iter().copied().sum::<T>() / T::of(image.len() as f64);
            image
                .iter()
                .map(|&v| clamp01((v - mean) * factor + mean))
                .collect()
        }
        DistortionKind::Brightness => {
            let shift = T::of(severity.pick([0.1, 0.3, 0.5]));
            image.iter().map(|&v| clamp01(v + shift)).collect()
        }
        DistortionKind::Saturate => {
            if shape.channels < 2 {
                image.to_vec()
            } else {
                // Mix toward a copy whose chroma is tripled about the pixel's grey level.
                let gain = T::of(2.0 * severity.pick([0.3, 0.6, 0.9]));
                let plane = shape.plane();
                let inv_c = T::of(1.0 / shape.channels as f64);
                let mut out = image.to_vec();
                for p in 0..plane {
                    let grey = (0..shape.channels).map(|c| image[c * plane + p]).sum::<T>() * inv_c;
                    for c in 0..shape.channels {
                        let v = image[c * plane + p];
                        out[c * plane + p] = clamp01(v + gain * (v - grey));
                    }
                }
                out
            }
        }
        DistortionKind::Pixelate => {
            let f: usize = severity.pick([2, 4, 8]);
            let (h, w) = (shape.height, shape.width);
            let mut out = vec![T::zero(); image.len()];
            for c in 0..shape.channels {
                let base = c * shape.plane();
                for y in 0..h {
                    let sy = ((y / f) * f + f / 2).min(h - 1);
                    for x in 0..w {
                        let sx = ((x / f) * f + f / 2).min(w - 1);
                        out[base + y * w + x] = image[base + sy * w + sx];
                    }
                }
            }
            out
        }
        DistortionKind::LabelFlip => {
            return Err(Error::arg(
                "label_flip is not a pixel distortion; apply it through corrupt_client",
            ))
        }
    };
    Ok(out)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Three octaves of lattice value noise per channel, min-max normalised.
fn procedural_patch<T: Scalar>(shape: ImageShape, rng: &mut Rng) -> Vec<T> {
    let (h, w) = (shape.height, shape.width);
    let mut out = Vec::with_capacity(shape.len());
    for _ in 0..shape.channels {
        let mut acc = vec![0.0f64; shape.plane()];
        for octave in 0..3 {
            let cells = 2usize << octave;
            let amplitude = 0.5f64.powi(octave as i32);
            let stride = cells + 1;
            let lattice: Vec<f64> = (0..stride * stride).map(|_| rng.random::<f64>()).collect();
            for y in 0..h {
                let fy = (y as f64 + 0.5) / h as f64 * cells as f64;
                let y0 = (fy.floor() as usize).min(cells - 1);
                let ty = smoothstep(fy - y0 as f64);
                for x in 0..w {
                    let fx = (x as f64 + 0.5) / w as f64 * cells as f64;
                    let x0 = (fx.floor() as usize).min(cells - 1);
                    let tx = smoothstep(fx - x0 as f64);
                    let v00 = lattice[y0 * stride + x0];
                    let v01 = lattice[y0 * stride + x0 + 1];
                    let v10 = lattice[(y0 + 1) * stride + x0];
                    let v11 = lattice[(y0 + 1) * stride + x0 + 1];
                    let top = v00 + (v01 - v00) * tx;
                    let bottom = v10 + (v11 - v10) * tx;
                    acc[y * w + x] += amplitude * (top + (bottom - top) * ty);
                }
            }
        }
        let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        out.extend(acc.iter().map(|&v| {
            if span > 0.0 {
                T::of(((v - lo) / span).clamp(0.0, 1.0))
            } else {
                T::of(0.5)
            }
        }));
    }
    out
}

/// Replaces the whole image with a patch of the given kind.
pub fn apply_patch<T: Scalar>(shape: ImageShape, kind: PatchKind, rng: &mut Rng) -> Vec<T> {
    match kind {
        PatchKind::BlackPatch => vec![T::zero(); shape.len()],
        PatchKind::GaussianPatch => {
            let pixel = Normal::new(0.5f64, 0.25).expect("valid sigma");
            (0..shape.len())
                .map(|_| T::of(pixel.sample(rng).clamp(0.0, 1.0)))
                .collect()
        }
        PatchKind::ProceduralPatch => procedural_patch(shape, rng),
    }
}

/// Corrupts `round_half_up(noise_level × |c|)` samples of a shard.
///
/// Targets are drawn without replacement; each gets its own kind drawn
/// uniformly from `spec.kinds`. Label flips move the label to a uniformly
/// chosen different class and leave the pixels alone.
pub fn corrupt_client<T: Scalar>(c: &ClientDataset<T>, spec: &CorruptionSpec) -> Result<ClientDataset<T>> {
    spec.validate()?;
    let count = noisy_count(spec.noise_level, c.len());
    if count == 0 {
        return Ok(c.clone());
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut targets = index::sample(&mut rng, c.len(), count).into_vec();
    targets.sort_unstable();

    let mut out = c.clone();
    let shape = c.data.shape();
    let num_classes = c.data.num_classes();
    for &i in &targets {
        let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
        match kind {
            CorruptionKind::Distortion(DistortionKind::LabelFlip) => {
                if num_classes < 2 {
                    return Err(Error::arg("label flip needs at least two classes"));
                }
                let old = out.data.labels()[i];
                let mut new = rng.random_range(0..num_classes - 1);
                if new >= old {
                    new += 1;
                }
                out.data.set_label(i, new);
            }
            CorruptionKind::Distortion(d) => {
                let pixels = apply_distortion(c.data.image(i), shape, d, spec.severity, &mut rng)?;
                out.data.set_sample(i, &pixels);
            }
            CorruptionKind::Patch(p) => {
                let pixels: Vec<T> = apply_patch(shape, p, &mut rng);
                out.data.set_sample(i, &pixels);
            }
        }
        out.corrupted_mask[i] = true;
    }
    out.truth_tag = if out.corrupted_mask.iter().any(|&m| m) {
        Quality::Noisy
    } else {
        Quality::Clean
    };
    out.corruption = Some(CorruptionRecord {
        kinds: spec.kinds.clone(),
        seed: spec.seed,
    });
    Ok(out)
}
