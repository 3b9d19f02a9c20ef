//! Rician channel synthesis, effective channels and observation probes.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scene::{path_loss_from_parts, path_loss_factor, SceneGeometry, Scenario};
use crate::{BeamError, CMat, CVec, C64};

/// `exp(-j 2 pi d / lambda)` for every (receiving point, transmitting point) pair.
pub fn los_matrix(tx_points: &[Point3<f64>], rx_points: &[Point3<f64>], wavelength: f64) -> CMat {
    CMat::from_fn(rx_points.len(), tx_points.len(), |a, b| {
        let d = (rx_points[a] - tx_points[b]).norm();
        C64::from_polar(1.0, -2.0 * PI * d / wavelength)
    })
}

/// Unit-variance circularly symmetric Gaussian matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid std-dev");
    let mut m = CMat::zeros(rows, cols);
    // Column-major fill, real part first.
    for v in m.iter_mut() {
        let re = normal.sample(rng);
        let im = normal.sample(rng);
        *v = C64::new(re, im);
    }
    m
}

/// `(sqrt(K) LOS + NLOS) / sqrt(K + 1)`.
pub fn rician_channel(los: &CMat, k_factor: f64, rng: &mut ChaCha8Rng) -> CMat {
    let nlos = gaussian_matrix(los.nrows(), los.ncols(), rng);
    let a = C64::new(k_factor.sqrt(), 0.0);
    let norm = C64::new(1.0 / (k_factor + 1.0).sqrt(), 0.0);
    (los * a + nlos) * norm
}

/// Generator for one channel matrix. Each matrix uses its own stream so
/// that adding receivers does not disturb earlier draws.
pub fn matrix_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic single-antenna LOS probe at a given angle from the RIS normal.
#[derive(Clone, Debug)]
pub struct ObservationProbe {
    pub angle_deg: f64,
    /// `1 x N_ris`, already scaled by `sqrt(beta_inv_ob)`.
    pub g_ob: CMat,
    pub beta_inv_ob: f64,
}

impl ObservationProbe {
    /// Probe row as a vector (no conjugation).
    pub fn row(&self) -> CVec {
        self.g_ob.row(0).transpose()
    }
}

/// Everything needed to place observation probes around the RIS.
#[derive(Clone, Debug)]
pub struct ProbeFactory {
    pub element_positions: Vec<Point3<f64>>,
    pub wavelength: f64,
    pub distance: f64,
    pub d1: f64,
    pub cos_gamma1: f64,
}

impl ProbeFactory {
    pub fn from_geometry(g: &SceneGeometry) -> Self {
        Self {
            element_positions: g.element_positions.clone(),
            wavelength: g.wavelength,
            distance: g.probe_distance,
            d1: g.d1,
            cos_gamma1: g.cos_gamma1,
        }
    }

    pub fn probe(&self, angle_deg: f64) -> ObservationProbe {
        let psi = angle_deg.to_radians();
        let at = Point3::new(self.distance * psi.sin(), 0.0, self.distance * psi.cos());
        let beta_inv_ob = path_loss_from_parts(self.wavelength, self.cos_gamma1, psi.cos(), self.d1, self.distance);
        let los = los_matrix(&self.element_positions, &[at], self.wavelength);
        ObservationProbe {
            angle_deg,
            g_ob: los * C64::new(beta_inv_ob.sqrt(), 0.0),
            beta_inv_ob,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelSet {
    /// Transmitter to RIS, `N_ris x N_t`.
    pub u: CMat,
    /// RIS to receiver `i`, `N_r[i] x N_ris`.
    pub g: Vec<CMat>,
    pub beta_inv: Vec<f64>,
    pub rng_seed: u64,
    pub probes: ProbeFactory,
}

impl ChannelSet {
    pub fn n_ris(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_receivers(&self) -> usize {
        self.g.len()
    }

    pub fn n_r(&self, i: usize) -> usize {
        self.g[i].nrows()
    }

    /// `sqrt(beta_inv) G_i`, the path-loss scaled RIS-to-receiver matrix.
    pub fn scaled_g(&self, i: usize) -> CMat {
        &self.g[i] * C64::new(self.beta_inv[i].sqrt(), 0.0)
    }

    pub fn probe(&self, angle_deg: f64) -> ObservationProbe {
        self.probes.probe(angle_deg)
    }
}

pub fn assemble_channels(s: &Scenario, g: &SceneGeometry) -> ChannelSet {
    let mut rng = matrix_rng(s.seed, 0);
    let u_los = los_matrix(&g.tx_antenna_positions, &g.element_positions, g.wavelength);
    let u = rician_channel(&u_los, s.K_r, &mut rng);
    let gs = g
        .rx_antenna_positions
        .iter()
        .enumerate()
        .map(|(i, rx)| {
            let mut rng = matrix_rng(s.seed, i as u64 + 1);
            let los = los_matrix(&g.element_positions, rx, g.wavelength);
            rician_channel(&los, s.K_r, &mut rng)
        })
        .collect();
    ChannelSet {
        u,
        g: gs,
        beta_inv: (0..s.n_receivers()).map(|i| path_loss_factor(g, i)).collect(),
        rng_seed: s.seed,
        probes: ProbeFactory::from_geometry(g),
    }
}

pub fn observation_probe(g: &SceneGeometry, angle_deg: f64) -> ObservationProbe {
    ProbeFactory::from_geometry(g).probe(angle_deg)
}

/// `H_i = sqrt(beta_inv_i) G_i diag(theta) U`.
pub fn effective_channel(cs: &ChannelSet, theta: &CVec, i: usize) -> Result<CMat, BeamError> {
    if theta.len() != cs.n_ris() {
        return Err(BeamError::Dimension(format!(
            "theta has length {}, RIS has {} elements",
            theta.len(),
            cs.n_ris()
        )));
    }
    if i >= cs.n_receivers() {
        return Err(BeamError::Dimension(format!("receiver {i} out of range")));
    }
    let mut du = cs.u.clone();
    for (mut row, t) in du.row_iter_mut().zip(theta.iter()) {
        row *= *t;
    }
    Ok(cs.scaled_g(i) * du)
}

/// Writes a matrix as CSV: one line per row, interleaved `re,im` pairs.
pub fn write_matrix_csv<W: Write>(w: &mut W, m: &CMat) -> std::io::Result<()> {
    writeln!(w, "{},{}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let cells: Vec<String> = (0..m.ncols())
            .flat_map(|j| [format!("{:?}", m[(i, j)].re), format!("{:?}", m[(i, j)].im)])
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(r: R) -> Result<CMat, BeamError> {
    let bad = |msg: &str| BeamError::Config(format!("matrix csv: {msg}"));
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| bad("empty"))?.map_err(|e| bad(&e.to_string()))?;
    let dims: Vec<usize> = head
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| bad("bad header")))
        .collect::<Result<_, _>>()?;
    let [rows, cols] = dims[..] else {
        return Err(bad("header must be rows,cols"));
    };
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        let line = lines.next().ok_or_else(|| bad("missing row"))?.map_err(|e| bad(&e.to_string()))?;
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| bad("bad number")))
            .collect::<Result<_, _>>()?;
        if vals.len() != 2 * cols {
            return Err(bad("row length"));
        }
        for j in 0..cols {
            m[(i, j)] = C64::new(vals[2 * j], vals[2 * j + 1]);
        }
    }
    Ok(m)
}
