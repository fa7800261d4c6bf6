//! Task-dependent stochastic augmentations.
//!
//! Every transform preserves sample shape; randomness comes from an explicit
//! `(seed, k)` stream so the k-th augmented view of a batch is reproducible
//! in isolation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    /// Per-element Gaussian noise.
    GaussianJitter { sigma: f64 },
    /// Per-sample multiplicative scale drawn from `[lo, hi]`.
    RandomScale { lo: f64, hi: f64 },
    /// Per-sample integer translation of an image-shaped sample, up to
    /// `max_px` in each direction; exposed pixels fill with zero.
    RandomShift {
        max_px: usize,
        height: usize,
        width: usize,
    },
    /// Per-sample horizontal mirror with the given probability.
    HorizontalFlip {
        prob: f64,
        height: usize,
        width: usize,
    },
}

impl Transform {
    fn validate(&self, feature_dim: usize) -> Result<()> {
        match *self {
            Transform::GaussianJitter { sigma } => {
                if sigma < 0.0 {
                    return Err(Error::Validation("jitter sigma must be >= 0".into()));
                }
            }
            Transform::RandomScale { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::Validation(format!(
                        "scale range [{lo}, {hi}] is invalid"
                    )));
                }
            }
            Transform::RandomShift { height, width, .. }
            | Transform::HorizontalFlip { height, width, .. } => {
                if height * width != feature_dim {
                    return Err(Error::Validation(format!(
                        "image transform expects {height}x{width}={} features, batch has {feature_dim}; \
                         this transform would change sample shape",
                        height * width
                    )));
                }
                if let Transform::HorizontalFlip { prob, .. } = *self {
                    if !(0.0..=1.0).contains(&prob) {
                        return Err(Error::Validation("flip prob must be in [0, 1]".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ordered list of stochastic transforms, applied left to right.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

impl AugmentationPolicy {
    pub fn empty() -> Self {
        AugmentationPolicy { transforms: Vec::new() }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        for t in &self.transforms {
            t.validate(feature_dim)?;
        }
        Ok(())
    }
}

/// Apply the policy to a batch. `k` selects one of the independent random
/// streams; distinct `k` under the same seed never share draws.
pub fn augment<T: Scalar>(
    x: &Tensor<T>,
    policy: &AugmentationPolicy,
    seed: u64,
    k: u64,
) -> Result<Tensor<T>> {
    if x.rank() != 2 {
        return Err(Error::Validation(format!(
            "augment expects [B, d] batches, got {:?}",
            x.shape()
        )));
    }
    policy.validate(x.shape()[1])?;
    let mut rng = stream_rng(seed, StreamTag::Augment, k);
    let (batch, dim) = (x.shape()[0], x.shape()[1]);
    let mut out = x.clone();
    for t in &policy.transforms {
        match *t {
            Transform::GaussianJitter { sigma } => {
                if sigma == 0.0 {
                    continue;
                }
                let normal = Normal::new(0.0, sigma).expect("sigma checked");
                for v in out.data_mut() {
                    *v += T::from_f64(normal.sample(&mut rng));
                }
            }
            Transform::RandomScale { lo, hi } => {
                for i in 0..batch {
                    let s = if lo == hi { lo } else { rng.random_range(lo..hi) };
                    let s = T::from_f64(s);
                    for v in out.row_mut(i) {
                        *v = *v * s;
                    }
                }
            }
            Transform::RandomShift {
                max_px,
                height,
                width,
            } => {
                let m = max_px as i64;
                for i in 0..batch {
                    let dx = rng.random_range(-m..=m);
                    let dy = rng.random_range(-m..=m);
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let src: Vec<T> = out.row(i).to_vec();
                    let row = out.row_mut(i);
                    for (px, slot) in row.iter_mut().enumerate().take(dim) {
                        let (r, c) = ((px / width) as i64 - dy, (px % width) as i64 - dx);
                        *slot = if r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width
                        {
                            src[r as usize * width + c as usize]
                        } else {
                            T::ZERO
                        };
                    }
                }
            }
            Transform::HorizontalFlip {
                prob,
                height,
                width,
            } => {
                for i in 0..batch {
                    if rng.random_range(0.0..1.0) < prob {
                        let row = out.row_mut(i);
                        for r in 0..height {
                            row[r * width..(r + 1) * width].reverse();
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
