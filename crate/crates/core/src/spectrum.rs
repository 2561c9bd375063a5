//! Orthonormal 2-D DCT-II and radial band energies.

use crate::corpus::Image;

/// Floor added to band energies before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for x in 0..n {
            m[k * n + x] = scale * (std::f64::consts::PI * (2 * x + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// Orthonormal DCT-II of an `n x n` row-major plane.
pub fn dct2(plane: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(plane.len(), n * n);
    let c = dct_matrix(n);
    // rows: tmp = plane * C^T
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for k in 0..n {
            tmp[y * n + k] = (0..n).map(|x| plane[y * n + x] * c[k * n + x]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for k in 0..n {
            out[u * n + k] = (0..n).map(|y| c[u * n + y] * tmp[y * n + k]).sum();
        }
    }
    out
}

/// Band index of coefficient `(u, v)` among `bands` equal-width radial bands;
/// `None` for DC.
pub fn band_of(u: usize, v: usize, n: usize, bands: usize) -> Option<usize> {
    if u == 0 && v == 0 {
        return None;
    }
    let r = ((u * u + v * v) as f64).sqrt();
    let r_max = std::f64::consts::SQRT_2 * (n - 1) as f64;
    Some(((r / r_max * bands as f64) as usize).min(bands - 1))
}

/// Mean squared DCT coefficient of the luma plane per radial band (DC excluded).
pub fn band_energies(img: &Image, bands: usize) -> Vec<f64> {
    let n = img.size();
    let coeffs = dct2(&img.luma(), n);
    let mut sum = vec![0.0; bands];
    let mut count = vec![0usize; bands];
    for u in 0..n {
        for v in 0..n {
            if let Some(b) = band_of(u, v, n, bands) {
                sum[b] += coeffs[u * n + v].powi(2);
                count[b] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

/// `ln(energy + LOG_FLOOR)` per band.
pub fn log_band_energies(img: &Image, bands: usize) -> Vec<f64> {
    band_energies(img, bands).into_iter().map(|e| (e + LOG_FLOOR).ln()).collect()
}

/// Total DCT energy of the top `fraction` of radial frequencies.
pub fn high_frequency_energy(img: &Image, fraction: f64) -> f64 {
    let n = img.size();
    let coeffs = dct2(&img.luma(), n);
    let r_max = std::f64::consts::SQRT_2 * (n - 1) as f64;
    let cut = (1.0 - fraction) * r_max;
    let mut e = 0.0;
    for u in 0..n {
        for v in 0..n {
            if ((u * u + v * v) as f64).sqrt() >= cut {
                e += coeffs[u * n + v].powi(2);
            }
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Image, Label};

    fn gray(size: usize, f: impl Fn(usize, usize) -> f32) -> Image {
        let mut px = vec![0f32; 3 * size * size];
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    px[c * size * size + y * size + x] = f(x, y);
                }
            }
        }
        Image::new("t", Label::Real, None, size, px).unwrap()
    }

    #[test]
    fn dct_is_orthonormal() {
        let n = 8;
        let plane: Vec<f64> = (0..n * n).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let c = dct2(&plane, n);
        let e_in: f64 = plane.iter().map(|v| v * v).sum();
        let e_out: f64 = c.iter().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-9);
        let flat = dct2(&vec![0.5; n * n], n);
        assert!((flat[0] - 0.5 * n as f64).abs() < 1e-12);
        assert!(flat[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn every_band_is_populated() {
        for &n in &[32usize, 64] {
            let mut seen = [false; 32];
            for u in 0..n {
                for v in 0..n {
                    if let Some(b) = band_of(u, v, n, 32) {
                        seen[b] = true;
                    }
                }
            }
            assert!(seen.iter().all(|&s| s), "n={n}");
        }
    }

    #[test]
    fn constant_image_sits_on_the_floor() {
        let e = log_band_energies(&gray(32, |_, _| 0.4), 32);
        assert!(e.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn nyquist_checkerboard_dominates_top_band() {
        let e = band_energies(&gray(32, |x, y| if (x + y) % 2 == 0 { 0.9 } else { 0.1 }), 32);
        let top = *e.last().unwrap();
        assert!(e[..31].iter().all(|&v| v < top));
    }
}
