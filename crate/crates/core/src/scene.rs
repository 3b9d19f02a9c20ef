//! Scenario description, deployment geometry, path loss and mask angles.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::BeamError;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Antenna gains of the transmitter and receivers in the path-loss model.
pub const ANTENNA_GAIN: f64 = 2.0;

/// How the receiver height above the RIS plane is derived from the
/// reflection angle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// `l_r = (D - d_ris) / tan(theta_ref)`: the receiver sits at angle
    /// `theta_ref` from the RIS normal, like the transmitter does for `theta_inc`.
    #[default]
    Tangent,
    /// `l_r = (D - d_ris) / cos(theta_ref)`.
    LiteralCosine,
}

/// Full experiment description. Field names follow the configuration keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Scenario {
    pub frequency_hz: f64,
    pub D_m: f64,
    pub d_ris_m: f64,
    pub theta_inc_deg: f64,
    pub theta_ref_deg: Vec<f64>,
    pub N_t: usize,
    pub N_r: Vec<usize>,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub K_r: f64,
    pub P_max_w: f64,
    pub sigma2_w: f64,
    pub rho_w: f64,
    pub seed: u64,
    #[serde(default = "default_levels")]
    pub phase_levels: usize,
    #[serde(default = "default_low")]
    pub theta_low_deg: f64,
    #[serde(default = "default_high")]
    pub theta_high_deg: f64,
    #[serde(default)]
    pub placement: Placement,
    /// Spacing of the mask probe grid over the forbidden intervals.
    #[serde(default = "default_mask_step")]
    pub mask_step_deg: f64,
}

fn default_levels() -> usize {
    4
}
fn default_low() -> f64 {
    10.0
}
fn default_high() -> f64 {
    60.0
}
fn default_mask_step() -> f64 {
    1.0
}

impl Scenario {
    /// Reference deployment: 27 GHz, 12x12 RIS, 8 transmit antennas, two
    /// 2-antenna receivers at 30 and 50 degrees, incidence at 20 degrees.
    pub fn reference() -> Self {
        Self {
            frequency_hz: 27e9,
            D_m: 100.0,
            d_ris_m: 20.0,
            theta_inc_deg: 20.0,
            theta_ref_deg: vec![30.0, 50.0],
            N_t: 8,
            N_r: vec![2, 2],
            ris_rows: 12,
            ris_cols: 12,
            K_r: 1e5,
            P_max_w: 2.0,
            sigma2_w: 1e-12,
            rho_w: 1e-15,
            seed: 1,
            phase_levels: 4,
            theta_low_deg: 10.0,
            theta_high_deg: 60.0,
            placement: Placement::Tangent,
            mask_step_deg: 1.0,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    pub fn n_ris(&self) -> usize {
        self.ris_rows * self.ris_cols
    }

    pub fn n_receivers(&self) -> usize {
        self.theta_ref_deg.len()
    }

    pub fn validate(&self) -> Result<(), BeamError> {
        let bad = |msg: String| Err(BeamError::InvalidScenario(msg));
        let positive = [
            ("frequency_hz", self.frequency_hz),
            ("D_m", self.D_m),
            ("d_ris_m", self.d_ris_m),
            ("P_max_w", self.P_max_w),
            ("sigma2_w", self.sigma2_w),
            ("rho_w", self.rho_w),
            ("mask_step_deg", self.mask_step_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.K_r >= 0.0) {
            return bad(format!("K_r must be nonnegative, got {}", self.K_r));
        }
        if self.D_m <= self.d_ris_m {
            return bad(format!("D_m ({}) must exceed d_ris_m ({})", self.D_m, self.d_ris_m));
        }
        if self.N_t == 0 || self.ris_rows == 0 || self.ris_cols == 0 || self.phase_levels == 0 {
            return bad("array sizes and phase_levels must be positive".into());
        }
        if self.theta_ref_deg.is_empty() {
            return bad("at least one reflection angle is required".into());
        }
        if self.N_r.len() != self.theta_ref_deg.len() {
            return bad(format!(
                "N_r lists {} receivers but theta_ref_deg lists {}",
                self.N_r.len(),
                self.theta_ref_deg.len()
            ));
        }
        if self.N_r.contains(&0) {
            return bad("every receiver needs at least one antenna".into());
        }
        if self.theta_ref_deg.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("theta_ref_deg must be strictly increasing".into());
        }
        if !(self.theta_low_deg < self.theta_high_deg) {
            return bad("theta_low_deg must be below theta_high_deg".into());
        }
        for &a in std::iter::once(&self.theta_inc_deg).chain(&self.theta_ref_deg) {
            if !(a > 0.0 && a < 90.0) {
                return Err(BeamError::DegenerateAngle(a));
            }
            if a < self.theta_low_deg - 1e-12 || a > self.theta_high_deg + 1e-12 {
                return bad(format!(
                    "angle {a} outside [{}, {}]",
                    self.theta_low_deg, self.theta_high_deg
                ));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, BeamError> {
        let s: Self = serde_json::from_str(text).map_err(|e| BeamError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BeamError> {
        let s: Self = toml::from_str(text).map_err(|e| BeamError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a `.json` or `.toml` scenario file.
    pub fn from_path(path: &Path) -> Result<Self, BeamError> {
        let text = std::fs::read_to_string(path).map_err(|e| BeamError::Config(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_json_str(&text).or_else(|_| Self::from_toml_str(&text)),
        }
    }

    pub fn mask_spec(&self) -> MaskSpec {
        MaskSpec {
            rho_w: self.rho_w,
            intervals: build_mask_set(&self.theta_ref_deg),
            step_deg: self.mask_step_deg,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGeometry {
    pub wavelength: f64,
    pub element_positions: Vec<Point3<f64>>,
    pub tx_antenna_positions: Vec<Point3<f64>>,
    pub rx_antenna_positions: Vec<Vec<Point3<f64>>>,
    pub l_t: f64,
    pub l_r: Vec<f64>,
    pub d1: f64,
    pub d2: Vec<f64>,
    pub cos_gamma1: f64,
    pub cos_gamma2: Vec<f64>,
    /// Transmitter-to-receiver plane distance, reused for observation probes.
    pub probe_distance: f64,
}

/// Linear array along z with half-wavelength spacing, centered on `mid`.
fn linear_array(mid: Point3<f64>, count: usize, spacing: f64) -> Vec<Point3<f64>> {
    let half = (count as f64 - 1.0) / 2.0;
    (0..count)
        .map(|k| Point3::new(mid.x, mid.y, mid.z + (k as f64 - half) * spacing))
        .collect()
}

/// RIS elements on the xy-plane, row-major: element `r * cols + c` sits at
/// `x = (c - (cols-1)/2) s`, `y = (r - (rows-1)/2) s`.
pub fn ris_element_positions(rows: usize, cols: usize, spacing: f64) -> Vec<Point3<f64>> {
    let (hr, hc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Point3::new((c as f64 - hc) * spacing, (r as f64 - hr) * spacing, 0.0));
        }
    }
    out
}

pub fn build_geometry(s: &Scenario) -> Result<SceneGeometry, BeamError> {
    s.validate()?;
    let lambda = s.wavelength();
    let half = lambda / 2.0;
    let tan_inc = s.theta_inc_deg.to_radians().tan();
    let l_t = s.d_ris_m / tan_inc;
    if !l_t.is_finite() || l_t <= 0.0 {
        return Err(BeamError::DegenerateAngle(s.theta_inc_deg));
    }
    let span = s.D_m - s.d_ris_m;
    let mut l_r = Vec::with_capacity(s.n_receivers());
    for &a in &s.theta_ref_deg {
        let v = match s.placement {
            Placement::Tangent => span / a.to_radians().tan(),
            Placement::LiteralCosine => span / a.to_radians().cos(),
        };
        if !v.is_finite() || v <= 0.0 {
            return Err(BeamError::DegenerateAngle(a));
        }
        l_r.push(v);
    }
    let d1 = (s.d_ris_m.powi(2) + l_t * l_t).sqrt();
    let d2: Vec<f64> = l_r.iter().map(|l| (span * span + l * l).sqrt()).collect();
    let tx_mid = Point3::new(-s.d_ris_m, 0.0, l_t);
    let rx = l_r
        .iter()
        .zip(&s.N_r)
        .map(|(&l, &n)| linear_array(Point3::new(span, 0.0, l), n, half))
        .collect();
    Ok(SceneGeometry {
        wavelength: lambda,
        element_positions: ris_element_positions(s.ris_rows, s.ris_cols, half),
        tx_antenna_positions: linear_array(tx_mid, s.N_t, half),
        rx_antenna_positions: rx,
        l_t,
        cos_gamma1: l_t / d1,
        cos_gamma2: l_r.iter().zip(&d2).map(|(l, d)| l / d).collect(),
        l_r,
        d1,
        d2,
        probe_distance: s.D_m,
    })
}

/// End-to-end free-space path-loss factor `1/beta` for the given hop lengths and obliquities.
pub fn path_loss_from_parts(wavelength: f64, cos_gamma1: f64, cos_gamma2: f64, d1: f64, d2: f64) -> f64 {
    ANTENNA_GAIN * ANTENNA_GAIN * wavelength.powi(4) * cos_gamma1 * cos_gamma2 / (256.0 * PI * PI * d1 * d1 * d2 * d2)
}

pub fn path_loss_factor(g: &SceneGeometry, receiver: usize) -> f64 {
    path_loss_from_parts(g.wavelength, g.cos_gamma1, g.cos_gamma2[receiver], g.d1, g.d2[receiver])
}

/// Closed angular interval in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleInterval {
    pub lo: f64,
    pub hi: f64,
}

/// Reradiation mask: power towards every grid angle in `intervals` must stay below `rho_w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub rho_w: f64,
    pub intervals: Vec<AngleInterval>,
    pub step_deg: f64,
}

impl MaskSpec {
    /// Grid points covering every interval with inclusive endpoints, sorted and deduplicated.
    pub fn grid(&self) -> Vec<f64> {
        let mut pts = Vec::new();
        for iv in &self.intervals {
            let n = ((iv.hi - iv.lo) / self.step_deg + 1e-9).floor() as usize;
            for k in 0..=n {
                pts.push(iv.lo + k as f64 * self.step_deg);
            }
            if (iv.lo + n as f64 * self.step_deg - iv.hi).abs() > 1e-9 {
                pts.push(iv.hi);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        pts
    }

    pub fn contains(&self, angle_deg: f64) -> bool {
        self.intervals.iter().any(|iv| angle_deg >= iv.lo - 1e-9 && angle_deg <= iv.hi + 1e-9)
    }
}

const EDGE_DEG: f64 = 89.0;
const OUTER_GUARD_DEG: f64 = 15.0;
const INNER_GUARD_DEG: f64 = 10.0;
const INNER_MIN_GAP_DEG: f64 = 20.0;

/// Forbidden angular set for sorted reflection angles: outer bands beyond
/// the first and last beam, plus a middle band for every adjacent pair
/// further apart than 20 degrees. Empty intervals are dropped.
pub fn build_mask_set(theta_refs: &[f64]) -> Vec<AngleInterval> {
    let (Some(&first), Some(&last)) = (theta_refs.first(), theta_refs.last()) else {
        return Vec::new();
    };
    let mut out = vec![
        AngleInterval {
            lo: -EDGE_DEG,
            hi: first - OUTER_GUARD_DEG,
        },
        AngleInterval {
            lo: last + OUTER_GUARD_DEG,
            hi: EDGE_DEG,
        },
    ];
    for w in theta_refs.windows(2) {
        if w[1] - w[0] > INNER_MIN_GAP_DEG {
            out.push(AngleInterval {
                lo: w[0] + INNER_GUARD_DEG,
                hi: w[1] - INNER_GUARD_DEG,
            });
        }
    }
    out.retain(|iv| iv.lo <= iv.hi);
    out.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn iv(lo: f64, hi: f64) -> AngleInterval {
        AngleInterval { lo, hi }
    }

    #[test]
    fn transmitter_height() {
        let mut s = Scenario::reference();
        let g = build_geometry(&s).unwrap();
        assert_relative_eq!(g.l_t, 20.0 / 20f64.to_radians().tan(), max_relative = 1e-15);
        s.theta_inc_deg = 45.0;
        s.theta_ref_deg = vec![45.0, 50.0];
        let g = build_geometry(&s).unwrap();
        assert_relative_eq!(g.l_t, 20.0, max_relative = 1e-14);
    }

    #[test]
    fn tangent_placement_puts_receivers_on_their_angles() {
        let s = Scenario::reference();
        let g = build_geometry(&s).unwrap();
        for (i, &a) in s.theta_ref_deg.iter().enumerate() {
            assert_relative_eq!(g.cos_gamma2[i], a.to_radians().cos(), max_relative = 1e-12);
        }
        assert_relative_eq!(g.cos_gamma1, 20f64.to_radians().cos(), max_relative = 1e-12);
    }

    #[test]
    fn literal_cosine_placement() {
        let mut s = Scenario::reference();
        s.placement = Placement::LiteralCosine;
        let g = build_geometry(&s).unwrap();
        assert_relative_eq!(g.l_r[0], 80.0 / 30f64.to_radians().cos(), max_relative = 1e-14);
    }

    #[test]
    fn path_loss_closed_form() {
        let lambda = 0.01;
        let v = path_loss_from_parts(lambda, 1.0, 1.0, lambda, lambda);
        assert_relative_eq!(v, 1.0 / (64.0 * PI * PI), max_relative = 1e-14);
    }

    #[test]
    fn mask_sets() {
        assert_eq!(build_mask_set(&[30.0, 50.0]), vec![iv(-89.0, 15.0), iv(65.0, 89.0)]);
        assert_eq!(build_mask_set(&[20.0, 40.0]), vec![iv(-89.0, 5.0), iv(55.0, 89.0)]);
        assert_eq!(
            build_mask_set(&[10.0, 50.0]),
            vec![iv(-89.0, -5.0), iv(20.0, 40.0), iv(65.0, 89.0)]
        );
        assert_eq!(
            build_mask_set(&[10.0, 30.0, 50.0]),
            vec![iv(-89.0, -5.0), iv(65.0, 89.0)]
        );
        // Outer band collapses when the last beam is close to the edge.
        assert_eq!(build_mask_set(&[30.0, 80.0]).len(), 2);
    }

    #[test]
    fn grid_is_inclusive() {
        let m = MaskSpec {
            rho_w: 1.0,
            intervals: vec![iv(-89.0, 15.0), iv(65.0, 89.0)],
            step_deg: 1.0,
        };
        let g = m.grid();
        assert_eq!(g.len(), 105 + 25);
        assert_eq!(g[0], -89.0);
        assert_eq!(*g.last().unwrap(), 89.0);
        assert!(g.contains(&15.0) && g.contains(&65.0));
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = Scenario::reference();
        s.theta_ref_deg = vec![50.0, 30.0];
        assert!(s.validate().is_err());
        let mut s = Scenario::reference();
        s.d_ris_m = 200.0;
        assert!(s.validate().is_err());
        let mut s = Scenario::reference();
        s.N_r = vec![2];
        assert!(s.validate().is_err());
    }

    #[test]
    fn config_round_trip() {
        let s = Scenario::reference();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json_str(&json).unwrap(), s);
        let text = toml::to_string(&s).unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s);
    }
}
