use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

/// JPEG quality ladder of the robustness sweep.
pub const JPEG_LADDER: [f64; 4] = [95.0, 90.0, 75.0, 50.0];
/// Gaussian-blur sigma ladder of the robustness sweep.
pub const BLUR_LADDER: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// Training-time augmentation: Gaussian blur then JPEG, each applied with
/// its own probability and a uniformly drawn strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub jpeg_quality_range: (u8, u8),
    pub blur_sigma_range: (f64, f64),
    pub jpeg_probability: f64,
    pub blur_probability: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            jpeg_quality_range: (30, 100),
            blur_sigma_range: (0.1, 3.0),
            jpeg_probability: 0.2,
            blur_probability: 0.2,
        }
    }
}

impl AugmentPolicy {
    /// A policy that never changes its input.
    pub fn disabled() -> Self {
        Self {
            jpeg_probability: 0.0,
            blur_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (qlo, qhi) = self.jpeg_quality_range;
        if qlo == 0 || qhi > 100 || qlo > qhi {
            return Err(Error::Config(format!(
                "augment.jpeg_quality_range ({qlo}, {qhi}) must satisfy 1 <= lo <= hi <= 100"
            )));
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::Config(format!(
                "augment.blur_sigma_range ({slo}, {shi}) must satisfy 0 < lo <= hi"
            )));
        }
        for (name, p) in [
            ("jpeg_probability", self.jpeg_probability),
            ("blur_probability", self.blur_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.jpeg_probability == 0.0 && self.blur_probability == 0.0
    }
}

/// Randomly blur and/or JPEG-compress `img`. Always consumes the same number
/// of draws from `rng`, whatever gets applied.
pub fn augment(img: &Image, policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Image> {
    let u_blur: f64 = rng.random();
    let u_sigma: f64 = rng.random();
    let u_jpeg: f64 = rng.random();
    let u_quality: f64 = rng.random();
    let mut out = img.clone();
    if u_blur < policy.blur_probability {
        let (lo, hi) = policy.blur_sigma_range;
        out = gaussian_blur(&out, lo + (hi - lo) * u_sigma);
    }
    if u_jpeg < policy.jpeg_probability {
        let (lo, hi) = policy.jpeg_quality_range;
        let q = lo as f64 + ((hi - lo + 1) as f64 * u_quality).floor();
        out = jpeg_round_trip(&out, (q as u8).clamp(lo, hi))?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Jpeg,
    Blur,
}

impl PerturbKind {
    pub fn ladder(self) -> &'static [f64; 4] {
        match self {
            PerturbKind::Jpeg => &JPEG_LADDER,
            PerturbKind::Blur => &BLUR_LADDER,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbKind::Jpeg => "jpeg",
            PerturbKind::Blur => "blur",
        }
    }
}

impl std::str::FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jpeg" => Ok(PerturbKind::Jpeg),
            "blur" => Ok(PerturbKind::Blur),
            other => Err(Error::Config(format!("unknown perturbation kind '{other}'"))),
        }
    }
}

/// Deterministic evaluation perturbation at a ladder level.
pub fn perturb(img: &Image, kind: PerturbKind, level: f64) -> Result<Image> {
    if !kind.ladder().contains(&level) {
        return Err(Error::Config(format!(
            "{} level {level} is not on the ladder {:?}",
            kind.as_str(),
            kind.ladder()
        )));
    }
    match kind {
        PerturbKind::Jpeg => jpeg_round_trip(img, level as u8),
        PerturbKind::Blur => Ok(gaussian_blur(img, level)),
    }
}

/// In-memory JPEG encode/decode at `quality` (1..=100).
pub fn jpeg_round_trip(img: &Image, quality: u8) -> Result<Image> {
    let size = img.size();
    let plane = size * size;
    let px = img.pixels();
    let mut raw = Vec::with_capacity(CHANNELS * plane);
    for i in 0..plane {
        for c in 0..CHANNELS {
            raw.push((px[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    let rgb = RgbImage::from_raw(size as u32, size as u32, raw).expect("buffer matches dimensions");
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100))
        .encode_image(&rgb)
        .map_err(|e| Error::Codec(format!("jpeg encode: {e}")))?;
    let decoded = image::load(Cursor::new(buf), ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(format!("jpeg decode: {e}")))?
        .to_rgb8();
    let mut out = vec![0f32; CHANNELS * plane];
    for (i, p) in decoded.pixels().enumerate() {
        for c in 0..CHANNELS {
            out[c * plane + i] = p[c] as f32 / 255.0;
        }
    }
    Ok(img.with_pixels(out))
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Separable Gaussian blur, kernel truncated at 4 sigma, reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let n = img.size();
    let plane = n * n;
    let mut out = vec![0f32; CHANNELS * plane];
    let mut tmp = vec![0f64; plane];
    for c in 0..CHANNELS {
        let src = img.plane(c);
        for y in 0..n {
            for x in 0..n {
                tmp[y * n + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| k * src[y * n + reflect(x as isize + j as isize - radius, n)] as f64)
                    .sum();
            }
        }
        for y in 0..n {
            for x in 0..n {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| k * tmp[reflect(y as isize + j as isize - radius, n) * n + x])
                    .sum();
                out[c * plane + y * n + x] = v as f32;
            }
        }
    }
    img.with_pixels(out)
}
