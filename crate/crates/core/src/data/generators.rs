//! Synthetic domain-shift benchmarks, pure functions of `(parameters, seed)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};
use crate::tensor::{one_hot, Scalar, Tensor};

use super::{Domain, DomainDataset};

/// Two interleaved half-circles, optionally rotated about the origin.
///
/// Class 0 lies on the upper unit arc `(cos t, sin t)`, class 1 on
/// `(1 - cos t, 0.5 - sin t)`, `t` evenly spaced over `[0, π]`, plus
/// isotropic Gaussian noise of scale `noise_sigma`.
pub fn gen_two_moons<T: Scalar>(
    n: usize,
    noise_sigma: f64,
    rotation_deg: f64,
    seed: u64,
) -> Result<DomainDataset<T>> {
    if n < 2 {
        return Err(Error::Config(format!("two-moons needs n >= 2, got {n}")));
    }
    if n % 2 != 0 {
        return Err(Error::Config(format!("two-moons needs even n, got {n}")));
    }
    if noise_sigma < 0.0 {
        return Err(Error::Config("noise sigma must be >= 0".into()));
    }
    let per_class = n / 2;
    let mut rng = stream_rng(seed, StreamTag::DatasetGen, 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let theta = rotation_deg.to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());

    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2usize {
        for i in 0..per_class {
            let t = if per_class == 1 {
                0.0
            } else {
                std::f64::consts::PI * i as f64 / (per_class - 1) as f64
            };
            let (mut x, mut y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            x += noise_sigma * normal.sample(&mut rng);
            y += noise_sigma * normal.sample(&mut rng);
            data.push(T::from_f64(x * cos_t - y * sin_t));
            data.push(T::from_f64(x * sin_t + y * cos_t));
            labels.push(class);
        }
    }
    DomainDataset::new(
        Tensor::new(vec![n, 2], data)?,
        Some(one_hot(&labels, 2)?),
        Domain::Source,
        2,
    )
}

/// Gaussian blobs around per-class means, and a target copy displaced by a
/// constant shift. The same noise draws feed both domains, so a zero shift
/// makes the pair identical.
pub fn gen_shifted_blobs<T: Scalar>(
    n: usize,
    means: &[Vec<f64>],
    covariance: &[Vec<f64>],
    shift: &[f64],
    seed: u64,
) -> Result<(DomainDataset<T>, DomainDataset<T>)> {
    let class_count = means.len();
    if class_count < 2 {
        return Err(Error::Config("blobs need at least two class means".into()));
    }
    let dim = means[0].len();
    if means.iter().any(|m| m.len() != dim) {
        return Err(Error::Config("class means must share one dimension".into()));
    }
    for (i, a) in means.iter().enumerate() {
        for b in means.iter().skip(i + 1) {
            if a == b {
                return Err(Error::Config(format!("duplicate class mean {a:?}")));
            }
        }
    }
    if shift.len() != dim {
        return Err(Error::Config(format!(
            "shift has dim {}, means have dim {dim}",
            shift.len()
        )));
    }
    let chol = cholesky(covariance, dim)?;

    let mut rng = stream_rng(seed, StreamTag::DatasetGen, 1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // n split as evenly as possible: first n % C classes get one extra.
    let base = n / class_count;
    let mut src = Vec::with_capacity(n * dim);
    let mut tgt = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        let count = base + usize::from(c < n % class_count);
        for _ in 0..count {
            let z: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            for r in 0..dim {
                let noise: f64 = (0..=r).map(|c2| chol[r][c2] * z[c2]).sum();
                let v = mean[r] + noise;
                src.push(T::from_f64(v));
                tgt.push(T::from_f64(v + shift[r]));
            }
            labels.push(c);
        }
    }
    let total = labels.len();
    let y = one_hot(&labels, class_count)?;
    Ok((
        DomainDataset::new(
            Tensor::new(vec![total, dim], src)?,
            Some(y.clone()),
            Domain::Source,
            class_count,
        )?,
        DomainDataset::new(
            Tensor::new(vec![total, dim], tgt)?,
            Some(y),
            Domain::Target,
            class_count,
        )?,
    ))
}

fn cholesky(cov: &[Vec<f64>], dim: usize) -> Result<Vec<Vec<f64>>> {
    if cov.len() != dim || cov.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!(
            "covariance must be {dim}x{dim}"
        )));
    }
    let mut l = vec![vec![0.0f64; dim]; dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = cov[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-12 || !sum.is_finite() {
                    return Err(Error::Config(
                        "degenerate covariance (not positive definite)".into(),
                    ));
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// 8x8 glyph masks for the ten digits, one bit per pixel.
const DIGIT_GLYPHS: [[u8; 8]; 10] = [
    // 0
    [0b00111100, 0b01100110, 0b01100110, 0b01101110, 0b01110110, 0b01100110, 0b01100110, 0b00111100],
    // 1
    [0b00011000, 0b00111000, 0b01111000, 0b00011000, 0b00011000, 0b00011000, 0b00011000, 0b01111110],
    // 2
    [0b00111100, 0b01100110, 0b00000110, 0b00001100, 0b00011000, 0b00110000, 0b01100000, 0b01111110],
    // 3
    [0b00111100, 0b01100110, 0b00000110, 0b00011100, 0b00000110, 0b00000110, 0b01100110, 0b00111100],
    // 4
    [0b00001100, 0b00011100, 0b00111100, 0b01101100, 0b11001100, 0b11111110, 0b00001100, 0b00001100],
    // 5
    [0b01111110, 0b01100000, 0b01100000, 0b01111100, 0b00000110, 0b00000110, 0b01100110, 0b00111100],
    // 6
    [0b00011100, 0b00110000, 0b01100000, 0b01111100, 0b01100110, 0b01100110, 0b01100110, 0b00111100],
    // 7
    [0b01111110, 0b00000110, 0b00001100, 0b00011000, 0b00110000, 0b00110000, 0b00110000, 0b00110000],
    // 8
    [0b00111100, 0b01100110, 0b01100110, 0b00111100, 0b01100110, 0b01100110, 0b01100110, 0b00111100],
    // 9
    [0b00111100, 0b01100110, 0b01100110, 0b01100110, 0b00111110, 0b00000110, 0b00001100, 0b00111000],
];

/// Procedurally rendered digit glyphs with jitter, plus a rotated target
/// copy of the same samples. Rotation angle 0 therefore reproduces the
/// source pixels exactly.
pub fn gen_mini_digits<T: Scalar>(
    n_per_class: usize,
    resolution: usize,
    target_rotation_deg: f64,
    seed: u64,
) -> Result<(DomainDataset<T>, DomainDataset<T>)> {
    if resolution != 8 && resolution != 16 {
        return Err(Error::Config(format!(
            "mini-digits resolution must be 8 or 16, got {resolution}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::Config("mini-digits needs n_per_class >= 1".into()));
    }
    let mut rng = stream_rng(seed, StreamTag::DatasetGen, 2);
    let normal = Normal::new(0.0, 0.05).expect("noise");
    let scale = resolution / 8;
    let d = resolution * resolution;
    let n = n_per_class * 10;

    let mut src = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for digit in 0..10usize {
        for _ in 0..n_per_class {
            let dx = rng.random_range(-1i64..=1);
            let dy = rng.random_range(-1i64..=1);
            let intensity = rng.random_range(0.7..1.0);
            let mut img = vec![0.0f64; d];
            for (px, v) in img.iter_mut().enumerate() {
                let (row, col) = (px / resolution, px % resolution);
                let gr = row as i64 - dy;
                let gc = col as i64 - dx;
                let lit = gr >= 0
                    && gc >= 0
                    && (gr as usize) < resolution
                    && (gc as usize) < resolution
                    && (DIGIT_GLYPHS[digit][gr as usize / scale] >> (7 - gc as usize / scale)) & 1
                        == 1;
                let base: f64 = if lit { intensity } else { 0.0 };
                *v = (base + Distribution::<f64>::sample(&normal, &mut rng)).clamp(0.0, 1.0);
            }
            src.extend(img);
            labels.push(digit);
        }
    }

    // Target: rotate every source image about its center, bilinear resample.
    let theta = target_rotation_deg.to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let center = (resolution as f64 - 1.0) / 2.0;
    let mut tgt = Vec::with_capacity(n * d);
    for img in src.chunks_exact(d) {
        for row in 0..resolution {
            for col in 0..resolution {
                // inverse-rotate the output pixel into source coordinates
                let (yr, xr) = (row as f64 - center, col as f64 - center);
                let sx = xr * cos_t + yr * sin_t + center;
                let sy = -xr * sin_t + yr * cos_t + center;
                tgt.push(bilinear(img, resolution, sx, sy).clamp(0.0, 1.0));
            }
        }
    }

    let y = one_hot::<T>(&labels, 10)?;
    let to_t = |v: Vec<f64>| -> Vec<T> { v.into_iter().map(T::from_f64).collect() };
    Ok((
        DomainDataset::new(
            Tensor::new(vec![n, d], to_t(src))?,
            Some(y.clone()),
            Domain::Source,
            10,
        )?,
        DomainDataset::new(
            Tensor::new(vec![n, d], to_t(tgt))?,
            Some(y),
            Domain::Target,
            10,
        )?,
    ))
}

fn bilinear(img: &[f64], res: usize, x: f64, y: f64) -> f64 {
    let sample = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= res as i64 || c >= res as i64 {
            0.0
        } else {
            img[r as usize * res + c as usize]
        }
    };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (c0, r0) = (x0 as i64, y0 as i64);
    sample(r0, c0) * (1.0 - fx) * (1.0 - fy)
        + sample(r0, c0 + 1) * fx * (1.0 - fy)
        + sample(r0 + 1, c0) * (1.0 - fx) * fy
        + sample(r0 + 1, c0 + 1) * fx * fy
}
