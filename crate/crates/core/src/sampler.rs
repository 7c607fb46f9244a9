//! Key-frame selection by equal shares of cumulative inter-frame motion energy.
//!
//! With energies `e_n = |f(P_{n+1}) − f(P_n)|^γ` and `R = Σ e_n`, the
//! normalised cumulative mass `c_i = Σ_{n<i} e_n / R` is a CDF over frames.
//! Splitting `[0, 1]` into `n` bins of mass `1/n` and keeping one frame per
//! bin bounds the motion between consecutive kept frames by the bin mass.

use crate::datagen::Clip;
use crate::error::{Error, Result};

/// Maps a frame to the feature space in which differences are measured.
pub trait FrameMap {
    fn map(&self, frame: &[f64]) -> Vec<f64>;
}

/// `f(P) = P`, flattened.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityMap;

impl FrameMap for IdentityMap {
    fn map(&self, frame: &[f64]) -> Vec<f64> {
        frame.to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionProfile {
    /// `ħ − 1` non-negative energies.
    pub energies: Vec<f64>,
    pub total: f64,
    /// `ħ` values; `cumulative[0] = 0` and `cumulative[ħ−1] = 1` unless degenerate.
    pub cumulative: Vec<f64>,
    /// Set when the clip has no motion (`total = 0`), or a single frame.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub keyframes: usize,
    pub gamma: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            keyframes: 16,
            gamma: 1.0,
        }
    }
}

pub fn motion_profile(clip: &Clip, gamma: f64) -> MotionProfile {
    motion_profile_with(clip, gamma, &IdentityMap)
}

pub fn motion_profile_with(clip: &Clip, gamma: f64, map: &dyn FrameMap) -> MotionProfile {
    let mapped: Vec<Vec<f64>> = clip.frames().map(|f| map.map(f)).collect();
    let energies: Vec<f64> = mapped
        .windows(2)
        .map(|w| {
            let l1: f64 = w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).abs()).sum();
            l1.powf(gamma)
        })
        .collect();
    let total: f64 = energies.iter().sum();
    // energies are finite and nonnegative, so this means no motion at all
    let degenerate = total <= 0.0;
    let mut cumulative = Vec::with_capacity(mapped.len());
    let mut running = 0.0;
    cumulative.push(0.0);
    for e in &energies {
        running += e;
        cumulative.push(if degenerate { 0.0 } else { running / total });
    }
    if !degenerate {
        *cumulative.last_mut().expect("non-empty") = 1.0;
    }
    MotionProfile {
        energies,
        total,
        cumulative,
        degenerate,
    }
}

/// Picks exactly `n` strictly increasing frame indices from a profile.
///
/// Bin `k` (0-based) targets the midpoint `(k + ½)/n`; its frame is the
/// first index whose cumulative mass reaches the target, moved forward past
/// the previous pick and capped at `ħ − n + k` so the later bins still fit.
/// Without motion the midpoints are placed on the frame axis directly.
pub fn select_from_profile(profile: &MotionProfile, n: usize) -> Result<Vec<usize>> {
    let frames = profile.cumulative.len();
    if n == 0 || n > frames {
        return Err(Error::Config(format!(
            "cannot select {n} distinct key frames from a clip of {frames} frames"
        )));
    }
    if profile.degenerate {
        return Ok((0..n).map(|k| ((2 * k + 1) * frames) / (2 * n)).collect());
    }
    let mut picks = Vec::with_capacity(n);
    let mut start = 0;
    for k in 0..n {
        let target = (k as f64 + 0.5) / n as f64;
        let first_hit = start + profile.cumulative[start..].partition_point(|&c| c < target);
        let cap = frames - n + k;
        let idx = first_hit.min(cap);
        picks.push(idx);
        start = idx + 1;
    }
    Ok(picks)
}

pub fn select_keyframes(clip: &Clip, n: usize, gamma: f64) -> Result<Vec<usize>> {
    select_from_profile(&motion_profile(clip, gamma), n)
}

/// The sub-clip made of the selected key frames.
pub fn refine_exemplar(clip: &Clip, n: usize, gamma: f64) -> Result<Clip> {
    clip.select_frames(&select_keyframes(clip, n, gamma)?)
}
