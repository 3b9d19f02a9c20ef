//! Unsupervised network mapping encoded angles to phases and precoders,
//! trained on the negative minimum rate.
//!
//! Gradients are written out by hand. Complex quantities use the real
//! gradient convention: for a real loss `L` and complex array `Z`, the
//! gradient `D` satisfies `dL = Re sum conj(D) dZ`, so `Re D` and `Im D`
//! are the partial derivatives along the real and imaginary parts.

use std::f64::consts::LN_2;
use std::io::{Read, Write};
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ao::{Solution, StopReason};
use crate::channel::{effective_channel, matrix_rng, ChannelSet};
use crate::objective::{devectorize, max_mask_power, rate_from, rates, MaskConstraint};
use crate::scene::Scenario;
use crate::{BeamError, CMat, CVec, C64};

const PARAMS_MAGIC: &[u8; 8] = b"RISNET01";
const NET_STREAM: u64 = 1 << 21;
const NOISE_STREAM: u64 = 1 << 22;

fn cr(v: f64) -> C64 {
    C64::new(v, 0.0)
}

/// Per-angle encoding grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleEncoding {
    pub theta_low: f64,
    pub theta_high: f64,
    pub mu: f64,
    /// Use the branchy fractional-part formula exactly as printed instead of `1 + frac`.
    pub literal: bool,
}

impl Default for AngleEncoding {
    fn default() -> Self {
        Self {
            theta_low: 10.0,
            theta_high: 60.0,
            mu: 0.5,
            literal: false,
        }
    }
}

fn frac(x: f64) -> f64 {
    x - x.trunc()
}

impl AngleEncoding {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            theta_low: s.theta_low_deg,
            theta_high: s.theta_high_deg,
            ..Self::default()
        }
    }

    pub fn n_a(&self) -> Result<usize, BeamError> {
        let steps = (self.theta_high - self.theta_low) / self.mu;
        if !(self.mu > 0.0) || !(steps >= 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(BeamError::Config(format!(
                "angle range [{}, {}] is not a multiple of {}",
                self.theta_low, self.theta_high, self.mu
            )));
        }
        Ok(steps.round() as usize + 1)
    }

    /// One nonzero entry at `int((angle - low) / mu)` holding `1 + frac` of the same ratio.
    pub fn encode(&self, angle_deg: f64) -> Result<Vec<f64>, BeamError> {
        let n_a = self.n_a()?;
        if !(angle_deg >= self.theta_low - 1e-9 && angle_deg <= self.theta_high + 1e-9) {
            return Err(BeamError::Config(format!(
                "angle {angle_deg} outside [{}, {}]",
                self.theta_low, self.theta_high
            )));
        }
        let mut g = ((angle_deg - self.theta_low) / self.mu).max(0.0);
        if (g - g.round()).abs() < 1e-9 {
            g = g.round();
        }
        let k = (g.floor() as usize).min(n_a - 1);
        let value = if self.literal {
            if frac(angle_deg) > self.mu {
                1.0 + frac(angle_deg - self.mu)
            } else {
                frac(angle_deg)
            }
        } else {
            1.0 + frac(g)
        };
        let mut y = vec![0.0; n_a];
        y[k] = value;
        Ok(y)
    }
}

/// Incidence block first, then the reflection angles in the given order.
pub fn encode_input(theta_inc: f64, theta_refs: &[f64], enc: &AngleEncoding) -> Result<DVector<f64>, BeamError> {
    let mut x = Vec::new();
    x.extend(enc.encode(theta_inc)?);
    for &r in theta_refs {
        x.extend(enc.encode(r)?);
    }
    Ok(DVector::from_vec(x))
}

/// Sizes of the decoded output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputDims {
    pub n_ris: usize,
    pub n_t: usize,
    pub n_r: Vec<usize>,
}

impl OutputDims {
    pub fn of(cs: &ChannelSet) -> Self {
        Self {
            n_ris: cs.n_ris(),
            n_t: cs.n_t(),
            n_r: (0..cs.n_receivers()).map(|i| cs.n_r(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n_ris + self.n_r.iter().map(|r| 2 * self.n_t * r).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output layout: real parts of `theta`, imaginary parts of `theta`, then
/// for each receiver the real and imaginary parts of its column-stacked precoder.
pub fn extract_solution(y: &DVector<f64>, dims: &OutputDims) -> Result<(CVec, Vec<CMat>), BeamError> {
    if y.len() != dims.len() {
        return Err(BeamError::Dimension(format!("output has length {}, expected {}", y.len(), dims.len())));
    }
    let n = dims.n_ris;
    let theta = CVec::from_fn(n, |k, _| C64::new(y[k], y[n + k]));
    let mut at = 2 * n;
    let mut f = Vec::with_capacity(dims.n_r.len());
    for &r in &dims.n_r {
        let m = dims.n_t * r;
        let v = CVec::from_fn(m, |k, _| C64::new(y[at + k], y[at + m + k]));
        f.push(devectorize(&v, dims.n_t, r)?);
        at += 2 * m;
    }
    Ok((theta, f))
}

/// Inverse of [`extract_solution`].
pub fn pack(theta: &CVec, f: &[CMat]) -> DVector<f64> {
    let mut y = Vec::new();
    y.extend(theta.iter().map(|t| t.re));
    y.extend(theta.iter().map(|t| t.im));
    for m in f {
        y.extend(m.iter().map(|t| t.re));
        y.extend(m.iter().map(|t| t.im));
    }
    DVector::from_vec(y)
}

/// Scales every precoder by `sqrt(P_max / P_t)` when the total power `P_t` exceeds `P_max`.
pub fn project_power(f: &[CMat], p_max: f64) -> Vec<CMat> {
    let p: f64 = f.iter().map(|m| m.norm_squared()).sum();
    if p <= p_max {
        return f.to_vec();
    }
    let a = cr((p_max / p).sqrt());
    f.iter().map(|m| m * a).collect()
}

fn unit_or_one(t: C64) -> C64 {
    let r = t.norm();
    if r > 0.0 {
        t / r
    } else {
        cr(1.0)
    }
}

/// Unit-modulus normalization, then the mask scaling when enabled.
pub fn project_theta(theta: &CVec, mask: &[MaskConstraint], rho: f64, mask_enabled: bool) -> CVec {
    let zeros = theta.iter().filter(|t| t.norm() == 0.0).count();
    if zeros > 0 {
        warn!("{zeros} zero phase entries replaced by 1");
    }
    let unit = theta.map(unit_or_one);
    if !mask_enabled {
        return unit;
    }
    let peak = max_mask_power(&unit, mask);
    if peak > rho {
        unit * cr((rho / peak).sqrt())
    } else {
        unit
    }
}

/// Weights and biases of the two hidden layers and the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub z1: DVector<f64>,
    pub s1: DVector<f64>,
    pub s2: DVector<f64>,
    pub y: DVector<f64>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.random_range(-limit..=limit);
        }
    }
    m
}

impl NetParams {
    pub fn zeros(n_in: usize, t1: usize, t2: usize, n_out: usize) -> Self {
        Self {
            w1: DMatrix::zeros(t1, n_in),
            b1: DVector::zeros(t1),
            w2: DMatrix::zeros(t2, t1),
            b2: DVector::zeros(t2),
            w3: DMatrix::zeros(n_out, t2),
            b3: DVector::zeros(n_out),
        }
    }

    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(n_in: usize, t1: usize, t2: usize, n_out: usize, seed: u64) -> Self {
        let mut rng = matrix_rng(seed, NET_STREAM);
        let w1 = glorot(t1, n_in, &mut rng);
        let w2 = glorot(t2, t1, &mut rng);
        let w3 = glorot(n_out, t2, &mut rng);
        Self {
            w1,
            b1: DVector::zeros(t1),
            w2,
            b2: DVector::zeros(t2),
            w3,
            b3: DVector::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w3.nrows()
    }

    pub fn forward_cached(&self, x: &DVector<f64>) -> Result<ForwardCache, BeamError> {
        if x.len() != self.n_in() {
            return Err(BeamError::Dimension(format!("input has length {}, network expects {}", x.len(), self.n_in())));
        }
        let z1 = &self.w1 * x + &self.b1;
        let s1 = z1.map(|v| v.max(0.0));
        let s2 = &self.w2 * &s1 + &self.b2;
        let y = &self.w3 * &s2 + &self.b3;
        Ok(ForwardCache { z1, s1, s2, y })
    }

    /// `W3 (W2 relu(W1 x + b1) + b2) + b3`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>, BeamError> {
        Ok(self.forward_cached(x)?.y)
    }

    /// Parameter gradient from the output gradient `gy`.
    pub fn backward(&self, x: &DVector<f64>, cache: &ForwardCache, gy: &DVector<f64>) -> NetParams {
        let gs2 = self.w3.tr_mul(gy);
        let gs1 = self.w2.tr_mul(&gs2);
        let gz1 = gs1.zip_map(&cache.z1, |g, z| if z > 0.0 { g } else { 0.0 });
        NetParams {
            w1: &gz1 * x.transpose(),
            b1: gz1,
            w2: &gs2 * cache.s1.transpose(),
            b2: gs2,
            w3: gy * cache.s2.transpose(),
            b3: gy.clone(),
        }
    }

    fn blocks(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Flat parameter access, block by block in storage order.
    pub fn get(&self, k: usize) -> f64 {
        let mut k = k;
        for b in self.blocks() {
            if k < b.len() {
                return b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, k: usize, v: f64) {
        let mut k = k;
        for b in self.blocks_mut() {
            if k < b.len() {
                b[k] = v;
                return;
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Binary layout: magic, four little-endian `u64` sizes (input, t1, t2,
    /// output), then `W1 b1 W2 b2 W3 b3` as little-endian `f64`, matrices row-major.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        for d in [self.n_in(), self.w1.nrows(), self.w2.nrows(), self.n_out()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let put_mat = |w: &mut W, m: &DMatrix<f64>| -> std::io::Result<()> {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
            Ok(())
        };
        let put_vec = |w: &mut W, v: &DVector<f64>| -> std::io::Result<()> {
            v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))
        };
        put_mat(w, &self.w1)?;
        put_vec(w, &self.b1)?;
        put_mat(w, &self.w2)?;
        put_vec(w, &self.b2)?;
        put_mat(w, &self.w3)?;
        put_vec(w, &self.b3)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, BeamError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PARAMS_MAGIC {
            return Err(BeamError::Config("not a network parameter file".into()));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *d = u64::from_le_bytes(b) as usize;
        }
        let [n_in, t1, t2, n_out] = dims;
        let mut p = NetParams::zeros(n_in, t1, t2, n_out);
        let mut next = || -> std::io::Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        fill_mat(&mut p.w1, &mut next)?;
        fill_vec(&mut p.b1, &mut next)?;
        fill_mat(&mut p.w2, &mut next)?;
        fill_vec(&mut p.b2, &mut next)?;
        fill_mat(&mut p.w3, &mut next)?;
        fill_vec(&mut p.b3, &mut next)?;
        Ok(p)
    }
}

fn fill_mat(m: &mut DMatrix<f64>, next: &mut impl FnMut() -> std::io::Result<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = next()?;
        }
    }
    Ok(())
}

fn fill_vec(v: &mut DVector<f64>, next: &mut impl FnMut() -> std::io::Result<f64>) -> std::io::Result<()> {
    for x in v.iter_mut() {
        *x = next()?;
    }
    Ok(())
}

/// Probe rows over the mask grid, fixed for a channel realization.
#[derive(Clone, Debug)]
pub struct MaskProbes {
    pub rows: Vec<CVec>,
    pub rho: f64,
}

impl MaskProbes {
    pub fn new(cs: &ChannelSet, angles: &[f64], rho: f64) -> Self {
        Self {
            rows: angles.iter().map(|&a| cs.probe(a).row()).collect(),
            rho,
        }
    }
}

/// Network output pushed through extraction and both projections, with
/// the intermediates needed to differentiate them.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub theta_raw: CVec,
    pub f_raw: Vec<CMat>,
    pub power_scale: f64,
    pub f: Vec<CMat>,
    pub theta_unit: CVec,
    pub mask_scale: f64,
    /// Index of the probe that set `mask_scale`, when the scaling is active.
    pub binding: Option<usize>,
    pub binding_power: f64,
    pub theta: CVec,
}

/// `U [F_1 .. F_N]`.
fn streams(cs: &ChannelSet, f: &[CMat]) -> CMat {
    crate::objective::stacked_streams(cs, f)
}

fn probe_output(row: &CVec, theta: &CVec, v: &CMat) -> CVec {
    // (g .* theta)^T V as a column.
    CVec::from_fn(v.ncols(), |s, _| (0..theta.len()).map(|n| row[n] * theta[n] * v[(n, s)]).sum())
}

pub fn decode(
    y: &DVector<f64>,
    dims: &OutputDims,
    cs: &ChannelSet,
    p_max: f64,
    mask: Option<&MaskProbes>,
) -> Result<Decoded, BeamError> {
    let (theta_raw, f_raw) = extract_solution(y, dims)?;
    let p: f64 = f_raw.iter().map(|m| m.norm_squared()).sum();
    let power_scale = if p > p_max { (p_max / p).sqrt() } else { 1.0 };
    let f: Vec<CMat> = f_raw.iter().map(|m| m * cr(power_scale)).collect();
    let theta_unit = theta_raw.map(unit_or_one);
    let (mut mask_scale, mut binding, mut binding_power) = (1.0, None, 0.0);
    if let Some(mp) = mask {
        let v = streams(cs, &f);
        let mut best = (0.0, 0);
        for (k, row) in mp.rows.iter().enumerate() {
            let pw = probe_output(row, &theta_unit, &v).norm_squared();
            if pw > best.0 {
                best = (pw, k);
            }
        }
        if best.0 > mp.rho {
            mask_scale = (mp.rho / best.0).sqrt();
            binding = Some(best.1);
            binding_power = best.0;
        }
    }
    let theta = &theta_unit * cr(mask_scale);
    Ok(Decoded {
        theta_raw,
        f_raw,
        power_scale,
        f,
        theta_unit,
        mask_scale,
        binding,
        binding_power,
        theta,
    })
}

/// Rate of receiver `i` and its gradients with respect to `theta` and every precoder.
pub fn rate_gradient(
    cs: &ChannelSet,
    theta: &CVec,
    f: &[CMat],
    sigma2: f64,
    i: usize,
) -> Result<(f64, CVec, Vec<CMat>), BeamError> {
    let h = effective_channel(cs, theta, i)?;
    let n_t = cs.n_t();
    let nr = h.nrows();
    let mut a_all = CMat::zeros(n_t, n_t);
    let mut a_int = CMat::zeros(n_t, n_t);
    for (j, fj) in f.iter().enumerate() {
        let g = fj * fj.adjoint();
        if j != i {
            a_int += &g;
        }
        a_all += g;
    }
    let noise = CMat::identity(nr, nr) * cr(sigma2);
    let s = &h * &a_all * h.adjoint() + &noise;
    let omega = &h * &a_int * h.adjoint() + &noise;
    let rate = rate_from(&h, f, i, sigma2)?;
    let s_inv = s
        .cholesky()
        .ok_or(BeamError::NotPositiveDefinite("total covariance"))?
        .inverse();
    let o_inv = omega
        .cholesky()
        .ok_or(BeamError::NotPositiveDefinite("interference covariance"))?
        .inverse();
    let k = cr(2.0 / LN_2);
    let d_h = (&s_inv * &h * &a_all - &o_inv * &h * &a_int) * k;
    let d_f = f
        .iter()
        .enumerate()
        .map(|(j, fj)| {
            if j == i {
                h.adjoint() * &s_inv * &h * fj * k
            } else {
                h.adjoint() * (&s_inv - &o_inv) * &h * fj * k
            }
        })
        .collect();
    // H = c G diag(theta) U, so dL/dtheta_n = c sum_a conj(G[a,n]) (D_H U^H)[a,n].
    let c = cs.beta_inv[i].sqrt();
    let p = d_h * cs.u.adjoint();
    let g = &cs.g[i];
    let d_theta = CVec::from_fn(cs.n_ris(), |n, _| {
        (0..g.nrows()).map(|a| g[(a, n)].conj() * p[(a, n)]).sum::<C64>() * c
    });
    Ok((rate, d_theta, d_f))
}

/// Loss `-min_i R_i` at the decoded point and its gradient with respect to the raw network output.
pub fn loss_and_output_gradient(
    dec: &Decoded,
    cs: &ChannelSet,
    sigma2: f64,
    mask: Option<&MaskProbes>,
) -> Result<(f64, DVector<f64>), BeamError> {
    let all = rates(cs, &dec.theta, &dec.f, sigma2)?;
    // Lowest index wins ties.
    let (worst, _) = all
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, &r)| if r < acc.1 { (k, r) } else { acc });
    let (rate, d_theta_r, d_f_r) = rate_gradient(cs, &dec.theta, &dec.f, sigma2, worst)?;
    let loss = -rate;
    let d_theta = -d_theta_r;
    let mut d_f: Vec<CMat> = d_f_r.into_iter().map(|m| -m).collect();

    // theta = a * theta_unit, with a depending on theta_unit and f.
    let a = dec.mask_scale;
    let mut d_unit = &d_theta * cr(a);
    if let (Some(mp), Some(m)) = (mask, dec.binding) {
        let coupling = d_theta.dotc(&dec.theta_unit).re;
        let w = -a / (2.0 * dec.binding_power) * coupling;
        let row = &mp.rows[m];
        let v = streams(cs, &dec.f);
        let out = probe_output(row, &dec.theta_unit, &v);
        // dP/dtheta_unit[n] = 2 conj(g_n sum_s V[n,s] conj(out_s))
        let d_p_theta = CVec::from_fn(dec.theta_unit.len(), |n, _| {
            let s: C64 = (0..v.ncols()).map(|s| v[(n, s)] * out[s].conj()).sum();
            (row[n] * s).conj() * 2.0
        });
        d_unit += d_p_theta * cr(w);
        // dP/dF_i[t,c] = 2 conj(r_t) out_c with r = U^T (g .* theta_unit).
        let weights = row.component_mul(&dec.theta_unit);
        let r = cs.u.transpose() * weights;
        let mut col = 0;
        for df in d_f.iter_mut() {
            for cidx in 0..df.ncols() {
                for t in 0..df.nrows() {
                    df[(t, cidx)] += r[t].conj() * out[col + cidx] * 2.0 * w;
                }
            }
            col += df.ncols();
        }
    }
    // theta_unit = z / |z| elementwise.
    let d_raw_theta = CVec::from_fn(dec.theta_raw.len(), |n, _| {
        let z = dec.theta_raw[n];
        let r = z.norm();
        if r == 0.0 {
            return cr(0.0);
        }
        let u = z / r;
        let d = d_unit[n];
        (d - u * (d.conj() * u).re) / r
    });
    // f = alpha * f_raw with alpha = sqrt(P_max / P_t) when scaling.
    let alpha = dec.power_scale;
    let mut d_raw_f: Vec<CMat> = d_f.iter().map(|m| m * cr(alpha)).collect();
    if alpha < 1.0 {
        let p: f64 = dec.f_raw.iter().map(|m| m.norm_squared()).sum();
        let coupling: f64 = d_f.iter().zip(&dec.f_raw).map(|(d, fr)| d.dotc(fr).re).sum();
        for (g, fr) in d_raw_f.iter_mut().zip(&dec.f_raw) {
            *g -= fr * cr(alpha * coupling / p);
        }
    }
    let gy = pack(&d_raw_theta, &d_raw_f);
    Ok((loss, gy))
}

/// Loss only, for finite-difference checks and evaluation.
pub fn loss_at(
    params: &NetParams,
    x: &DVector<f64>,
    dims: &OutputDims,
    cs: &ChannelSet,
    s: &Scenario,
    mask: Option<&MaskProbes>,
) -> Result<f64, BeamError> {
    let y = params.forward(x)?;
    let dec = decode(&y, dims, cs, s.P_max_w, mask)?;
    Ok(-rates(cs, &dec.theta, &dec.f, s.sigma2_w)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Loss and full parameter gradient.
pub fn loss_and_gradient(
    params: &NetParams,
    x: &DVector<f64>,
    dims: &OutputDims,
    cs: &ChannelSet,
    s: &Scenario,
    mask: Option<&MaskProbes>,
) -> Result<(f64, NetParams), BeamError> {
    let cache = params.forward_cached(x)?;
    let dec = decode(&cache.y, dims, cs, s.P_max_w, mask)?;
    let (loss, gy) = loss_and_output_gradient(&dec, cs, s.sigma2_w, mask)?;
    Ok((loss, params.backward(x, &cache, &gy)))
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub t1: usize,
    pub t2: usize,
    pub adagrad_eps: f64,
    pub mask_enabled: bool,
    pub encoding: AngleEncoding,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            iterations: 100,
            seed: 1,
            t1: 1024,
            t2: 512,
            adagrad_eps: 1e-10,
            mask_enabled: true,
            encoding: AngleEncoding::default(),
        }
    }
}

/// Decodes the network output for input `x` into a feasible solution.
pub fn infer(
    params: &NetParams,
    x: &DVector<f64>,
    cs: &ChannelSet,
    s: &Scenario,
    mask_enabled: bool,
) -> Result<(CVec, Vec<CMat>), BeamError> {
    let dims = OutputDims::of(cs);
    let probes = mask_enabled.then(|| MaskProbes::new(cs, &s.mask_spec().grid(), s.rho_w));
    let y = params.forward(x)?;
    let dec = decode(&y, &dims, cs, s.P_max_w, probes.as_ref())?;
    Ok((dec.theta, dec.f))
}

/// Input angles with independent uniform `[0, max_deg]` offsets, clamped to the encoding range.
pub fn noisy_angles(s: &Scenario, max_deg: f64, seed: u64, enc: &AngleEncoding) -> (f64, Vec<f64>) {
    let mut rng = matrix_rng(seed, NOISE_STREAM);
    let mut jitter = |a: f64| {
        let e = if max_deg > 0.0 { rng.random_range(0.0..=max_deg) } else { 0.0 };
        (a + e).clamp(enc.theta_low, enc.theta_high)
    };
    let inc = jitter(s.theta_inc_deg);
    let refs = s.theta_ref_deg.iter().map(|&r| jitter(r)).collect();
    (inc, refs)
}

/// Adagrad on the negative minimum rate for one scenario and channel
/// realization. Returns the parameters with the lowest loss seen and the
/// solution they decode to.
pub fn train(s: &Scenario, cs: &ChannelSet, opts: &TrainOptions) -> Result<(NetParams, Solution), BeamError> {
    if !(opts.learning_rate > 0.0) {
        return Err(BeamError::InvalidScenario("learning rate must be positive".into()));
    }
    let start = Instant::now();
    let x = encode_input(s.theta_inc_deg, &s.theta_ref_deg, &opts.encoding)?;
    let dims = OutputDims::of(cs);
    let probes = opts
        .mask_enabled
        .then(|| MaskProbes::new(cs, &s.mask_spec().grid(), s.rho_w));
    let mut params = NetParams::glorot(x.len(), opts.t1, opts.t2, dims.len(), opts.seed);
    let mut accum = NetParams::zeros(x.len(), opts.t1, opts.t2, dims.len());
    let mut best: Option<(f64, NetParams)> = None;
    let mut trace = Vec::with_capacity(opts.iterations + 1);

    for it in 0..=opts.iterations {
        let (loss, grad) = loss_and_gradient(&params, &x, &dims, cs, s, probes.as_ref())?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(BeamError::NonFinite(it));
        }
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, params.clone()));
        }
        let best_loss = best.as_ref().map(|b| b.0).unwrap_or(loss);
        trace.push(-best_loss);
        debug!("nn iter={it} loss={loss:.12e} best={best_loss:.12e}");
        if it == opts.iterations {
            break;
        }
        for k in 0..params.n_params() {
            let g = grad.get(k);
            let acc = accum.get(k) + g * g;
            accum.set(k, acc);
            params.set(k, params.get(k) - opts.learning_rate * g / (acc.sqrt() + opts.adagrad_eps));
        }
    }
    let (best_loss, best_params) = best.expect("at least one evaluation");
    let y = best_params.forward(&x)?;
    let dec = decode(&y, &dims, cs, s.P_max_w, probes.as_ref())?;
    let rates = rates(cs, &dec.theta, &dec.f, s.sigma2_w)?;
    info!("nn finished: best loss={best_loss:.6e}");
    Ok((
        best_params,
        Solution {
            theta: dec.theta,
            f: dec.f,
            objective_trace: trace,
            rates,
            iterations: opts.iterations,
            wall_time_s: start.elapsed().as_secs_f64(),
            stop: StopReason::IterationCap,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_examples() {
        let enc = AngleEncoding::default();
        assert_eq!(enc.n_a().unwrap(), 101);
        let y = enc.encode(10.0).unwrap();
        assert_eq!(y[0], 1.0);
        assert_eq!(y.iter().filter(|v| **v != 0.0).count(), 1);
        let y = enc.encode(20.3).unwrap();
        assert!((y[20] - 1.6).abs() < 1e-12);
        assert_eq!(y.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(enc.encode(60.0).unwrap()[100], 1.0);
        assert!(enc.encode(9.0).is_err());
        let bad = AngleEncoding { mu: 0.7, ..enc };
        assert!(bad.n_a().is_err());
    }

    #[test]
    fn literal_encoding_vanishes_on_integers() {
        let enc = AngleEncoding {
            literal: true,
            ..AngleEncoding::default()
        };
        assert!(enc.encode(20.0).unwrap().iter().all(|v| *v == 0.0));
        let y = enc.encode(20.7).unwrap();
        assert!((y[21] - (1.0 + frac(20.2))).abs() < 1e-12);
    }

    #[test]
    fn input_lengths() {
        let enc = AngleEncoding::default();
        assert_eq!(encode_input(20.0, &[30.0, 50.0], &enc).unwrap().len(), 303);
        assert_eq!(encode_input(20.0, &[10.0, 30.0, 50.0], &enc).unwrap().len(), 404);
    }

    #[test]
    fn forward_dead_layer() {
        let mut p = NetParams::zeros(3, 4, 2, 2);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(p.forward(&x).unwrap().iter().all(|v| *v == 0.0));
        p.b1.fill(-1.0);
        p.b2 = DVector::from_vec(vec![1.0, -2.0]);
        p.w3 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.5, 0.0]);
        p.b3 = DVector::from_vec(vec![0.25, 0.0]);
        let y = p.forward(&x).unwrap();
        assert_eq!(y, DVector::from_vec(vec![-0.75, 0.5]));
    }

    #[test]
    fn power_projection() {
        let f = vec![CMat::from_element(2, 1, cr(1.0))];
        assert_eq!(project_power(&f, 4.0), f);
        let g = project_power(&vec![CMat::from_element(2, 2, cr(2.0))], 4.0);
        assert!((g[0][(0, 0)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn params_round_trip() {
        let p = NetParams::glorot(5, 4, 3, 2, 7);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 32 + 8 * p.n_params());
        let q = NetParams::read_from(&mut &buf[..]).unwrap();
        assert_eq!(p, q);
        assert!(NetParams::read_from(&mut &b"garbage!"[..]).is_err());
    }
}
