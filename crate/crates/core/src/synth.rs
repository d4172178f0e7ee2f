//! Seeded synthetic token grids with controllable redundancy.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::TokenGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Every token equal.
    Uniform,
    /// Near-constant background with patches of independent random tokens.
    Blobs,
    /// Vertical bands of width 4 alternating between two base tokens, lightly perturbed.
    Stripes,
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Pattern::Uniform),
            "blobs" => Ok(Pattern::Blobs),
            "stripes" => Ok(Pattern::Stripes),
            _ => Err(Error::InvalidSpec(format!("unknown pattern {s:?}"))),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Uniform => "uniform",
            Pattern::Blobs => "blobs",
            Pattern::Stripes => "stripes",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub grid: TokenGrid,
    /// Row-major high-information mask, set only for [`Pattern::Blobs`].
    pub blob_mask: Option<Vec<bool>>,
}

impl Synthetic {
    /// Share of positions inside blobs.
    pub fn blob_fraction(&self) -> Option<f64> {
        self.blob_mask
            .as_ref()
            .map(|m| m.iter().filter(|&&b| b).count() as f64 / m.len() as f64)
    }
}

const BACKGROUND_NOISE: f32 = 0.05;

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f32) -> Vec<f32> {
    (0..d)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn perturbed(rng: &mut ChaCha8Rng, base: &[f32], scale: f32) -> Vec<f32> {
    base.iter()
        .map(|&b| {
            let z: f32 = StandardNormal.sample(rng);
            b + z * scale
        })
        .collect()
}

pub fn generate(pattern: Pattern, height: usize, width: usize, dim: usize, seed: u64) -> Result<Synthetic> {
    if height == 0 || width == 0 || dim == 0 {
        return Err(Error::InvalidSpec(format!(
            "grid extents must be positive, got {height}x{width}x{dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = height * width;
    match pattern {
        Pattern::Uniform => {
            let t = normal_vec(&mut rng, dim, 1.0);
            Ok(Synthetic {
                grid: TokenGrid::filled(height, width, &t)?,
                blob_mask: None,
            })
        }
        Pattern::Stripes => {
            let bases = [normal_vec(&mut rng, dim, 1.0), normal_vec(&mut rng, dim, 1.0)];
            let mut data = Vec::with_capacity(n * dim);
            for _ in 0..height {
                for c in 0..width {
                    data.extend(perturbed(&mut rng, &bases[(c / 4) % 2], BACKGROUND_NOISE));
                }
            }
            Ok(Synthetic {
                grid: TokenGrid::new(height, width, dim, data)?,
                blob_mask: None,
            })
        }
        Pattern::Blobs => {
            // roughly a quarter of the area in discs of radius min(h, w) / 8
            let radius = (height.min(width) as f64 / 8.0).max(1.0);
            let count = ((0.25 * n as f64) / (std::f64::consts::PI * radius * radius)).ceil() as usize;
            let mut mask = vec![false; n];
            for _ in 0..count.max(1) {
                let cy = rng.random_range(0.0..height as f64);
                let cx = rng.random_range(0.0..width as f64);
                for r in 0..height {
                    for c in 0..width {
                        let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
                        if dy * dy + dx * dx <= radius * radius {
                            mask[r * width + c] = true;
                        }
                    }
                }
            }
            let background = normal_vec(&mut rng, dim, 1.0);
            let mut data = Vec::with_capacity(n * dim);
            for &inside in &mask {
                if inside {
                    data.extend(normal_vec(&mut rng, dim, 1.0));
                } else {
                    data.extend(perturbed(&mut rng, &background, BACKGROUND_NOISE));
                }
            }
            Ok(Synthetic {
                grid: TokenGrid::new(height, width, dim, data)?,
                blob_mask: Some(mask),
            })
        }
    }
}
