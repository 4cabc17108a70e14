//! Training-time stochastic transforms on packed windows: Gaussian joint
//! noise, circular temporal shift, temporal crop and joint dropout.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::WindowTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Apply Gaussian noise during training.
    pub noise: bool,
    /// Apply temporal shift, crop and joint dropout during training.
    pub augmentation: bool,
    /// Noise standard deviation in meters; scaled by the window's
    /// normalization factor so it keeps its physical size.
    pub noise_sigma: f64,
    /// Largest shift in frames; `None` means a quarter of the window.
    pub shift_max: Option<usize>,
    pub crop_min_ratio: f64,
    pub joint_dropout_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise: true,
            augmentation: true,
            noise_sigma: 0.01,
            shift_max: None,
            crop_min_ratio: 0.7,
            joint_dropout_prob: 0.05,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("augmentation.noise_sigma", "must be >= 0"));
        }
        if !(self.crop_min_ratio > 0.0 && self.crop_min_ratio <= 1.0) {
            return Err(Error::config("augmentation.crop_min_ratio", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.joint_dropout_prob) {
            return Err(Error::config("augmentation.joint_dropout_prob", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn shift_for(&self, frames: usize) -> usize {
        self.shift_max.unwrap_or(frames / 4)
    }

    /// Every knob at its no-op value.
    pub fn degenerate() -> Self {
        AugmentConfig {
            noise_sigma: 0.0,
            shift_max: Some(0),
            crop_min_ratio: 1.0,
            joint_dropout_prob: 0.0,
            ..Default::default()
        }
    }
}

/// Perturb every valid coordinate by an independent N(0, (σ·scale)²) draw.
pub fn add_noise<R: Rng + ?Sized>(window: &WindowTensor, sigma: f64, rng: &mut R) -> Result<WindowTensor> {
    if !(sigma >= 0.0) {
        return Err(Error::config("augmentation.noise_sigma", format!("negative sigma {sigma}")));
    }
    let mut out = window.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma * f64::from(window.scale))
        .map_err(|e| Error::config("augmentation.noise_sigma", e.to_string()))?;
    for (j, valid) in window.mask.iter().enumerate() {
        if *valid {
            for k in 0..3 {
                out.data[3 * j + k] += normal.sample(rng) as f32;
            }
        }
    }
    Ok(out)
}

/// Circular shift by `k` frames: output frame `i` is input frame `i − k`.
pub fn shift_by(window: &WindowTensor, k: isize) -> WindowTensor {
    let n = window.frames as isize;
    if n == 0 {
        return window.clone();
    }
    let rows: Vec<usize> = (0..n).map(|i| (i - k).rem_euclid(n) as usize).collect();
    window.gather(&rows)
}

/// Shift by a uniform draw from {−shift_max, …, shift_max}, clamped to the
/// window length.
pub fn temporal_shift<R: Rng + ?Sized>(window: &WindowTensor, shift_max: usize, rng: &mut R) -> WindowTensor {
    let m = shift_max.min(window.frames.saturating_sub(1)) as isize;
    if m == 0 {
        return window.clone();
    }
    shift_by(window, rng.random_range(-(m as i64)..=m as i64) as isize)
}

/// Keep frames `start..start + len` and repeat them from the start until
/// the original length is restored.
pub fn crop_with(window: &WindowTensor, start: usize, len: usize) -> WindowTensor {
    assert!(len >= 1 && start + len <= window.frames, "crop outside window");
    let rows: Vec<usize> = (0..window.frames).map(|i| start + i % len).collect();
    window.gather(&rows)
}

/// Invalidate each valid joint with probability `p`.
pub fn drop_joints<R: Rng + ?Sized>(window: &WindowTensor, p: f64, rng: &mut R) -> WindowTensor {
    let mut out = window.clone();
    if p <= 0.0 {
        return out;
    }
    for j in 0..out.mask.len() {
        if out.mask[j] && rng.random_bool(p) {
            out.mask[j] = false;
            out.data[3 * j..3 * j + 3].fill(0.0);
        }
    }
    out
}

/// Temporal crop of length L ~ U[⌈ratio·N⌉, N] at a uniform start, repeat
/// padded back to N, followed by joint dropout.
pub fn random_crop<R: Rng + ?Sized>(
    window: &WindowTensor,
    crop_min_ratio: f64,
    joint_dropout_prob: f64,
    rng: &mut R,
) -> WindowTensor {
    let n = window.frames;
    let cropped = if n == 0 || crop_min_ratio >= 1.0 {
        window.clone()
    } else {
        let min_len = ((crop_min_ratio * n as f64).ceil() as usize).clamp(1, n);
        let len = rng.random_range(min_len..=n);
        let start = rng.random_range(0..=n - len);
        crop_with(window, start, len)
    };
    drop_joints(&cropped, joint_dropout_prob, rng)
}

/// The full training-time transform for one window.
pub fn augment_window<R: Rng + ?Sized>(window: &WindowTensor, cfg: &AugmentConfig, rng: &mut R) -> Result<WindowTensor> {
    let mut w = window.clone();
    if cfg.augmentation {
        w = temporal_shift(&w, cfg.shift_for(w.frames), rng);
        w = random_crop(&w, cfg.crop_min_ratio, cfg.joint_dropout_prob, rng);
    }
    if cfg.noise {
        w = add_noise(&w, cfg.noise_sigma, rng)?;
    }
    Ok(w)
}
