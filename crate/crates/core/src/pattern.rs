//! Reradiated power versus observation angle.

use serde::Serialize;

use crate::channel::ChannelSet;
use crate::objective::{reradiated_power, stacked_streams};
use crate::{watts_to_dbm, CMat, CVec, C64};

pub const DEFAULT_STEP_DEG: f64 = 0.5;
pub const EDGE_DEG: f64 = 89.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PatternPoint {
    pub angle_deg: f64,
    pub power_w: f64,
}

impl PatternPoint {
    pub fn power_dbm(&self) -> f64 {
        watts_to_dbm(self.power_w)
    }
}

/// `lo, lo + step, ..` up to `hi` inclusive, computed from integer steps so no drift accumulates.
pub fn angle_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || hi < lo {
        return Vec::new();
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// Full pattern over `[-89, 89]` at the given spacing.
pub fn default_grid(step: f64) -> Vec<f64> {
    angle_grid(-EDGE_DEG, EDGE_DEG, step)
}

/// Power at a probe per grid angle.
pub fn beam_pattern(cs: &ChannelSet, theta: &CVec, f: &[CMat], grid: &[f64]) -> Vec<PatternPoint> {
    // Stream matrix is shared by every probe, so form it once.
    let v = stacked_streams(cs, f);
    grid.iter()
        .map(|&a| {
            let probe = cs.probe(a);
            let w = CMat::from_fn(1, theta.len(), |_, n| probe.g_ob[(0, n)] * theta[n]);
            PatternPoint {
                angle_deg: a,
                power_w: (w * &v).norm_squared(),
            }
        })
        .collect()
}

/// Pattern recomputed one probe at a time through the objective module.
pub fn beam_pattern_direct(cs: &ChannelSet, theta: &CVec, f: &[CMat], grid: &[f64]) -> Vec<PatternPoint> {
    grid.iter()
        .map(|&a| PatternPoint {
            angle_deg: a,
            power_w: reradiated_power(cs, theta, f, &cs.probe(a)),
        })
        .collect()
}

/// The `n` strongest local maxima, strongest first. A plateau counts once,
/// at its first point; endpoints count when they beat their one neighbour.
pub fn top_peaks(pattern: &[PatternPoint], n: usize) -> Vec<PatternPoint> {
    let mut peaks = Vec::new();
    let len = pattern.len();
    let mut k = 0;
    while k < len {
        let mut end = k;
        while end + 1 < len && pattern[end + 1].power_w == pattern[k].power_w {
            end += 1;
        }
        let left_ok = k == 0 || pattern[k - 1].power_w < pattern[k].power_w;
        let right_ok = end + 1 == len || pattern[end + 1].power_w < pattern[k].power_w;
        if left_ok && right_ok && pattern[k].power_w > 0.0 {
            peaks.push(pattern[k]);
        }
        k = end + 1;
    }
    peaks.sort_by(|a, b| b.power_w.total_cmp(&a.power_w).then(a.angle_deg.total_cmp(&b.angle_deg)));
    peaks.truncate(n);
    peaks
}

/// Largest pattern value within `half_width` degrees of `angle`.
pub fn peak_near(pattern: &[PatternPoint], angle: f64, half_width: f64) -> Option<PatternPoint> {
    pattern
        .iter()
        .filter(|p| (p.angle_deg - angle).abs() <= half_width + 1e-9)
        .copied()
        .max_by(|a, b| a.power_w.total_cmp(&b.power_w))
}

/// Unit-modulus steering weights `conj(g_ob)` toward one angle, used as a
/// simple reference configuration.
pub fn steering_phases(cs: &ChannelSet, angle_deg: f64) -> CVec {
    let row = cs.probe(angle_deg).row();
    row.map(|g| {
        let r = g.norm();
        if r > 0.0 {
            g.conj() / r
        } else {
            C64::new(1.0, 0.0)
        }
    })
}
