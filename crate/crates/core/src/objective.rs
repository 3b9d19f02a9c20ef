//! Rates, the variational rate surrogate, reradiated power, and the
//! quadratic forms handed to the conic sub-solver.
//!
//! All rate-like quantities are in bits. The surrogate of receiver `i` for
//! filters `(W, Sigma)` is
//!
//! ```text
//! [ d - ln det S - Tr S^-1 + 2 Re Tr(S^-1 W H F_i)
//!   - sum_j Tr(F_j^H H^H W^H S^-1 W H F_j) - s2 Tr(W^H S^-1 W) ] / ln 2
//! ```
//!
//! with `H = H_i`, `S = Sigma_i` and `d` the stream count of receiver `i`.
//! It never exceeds the rate and equals it at the MMSE filters.

use std::f64::consts::LN_2;

use ris_conic::{HermitianForm, QuadPiece};

use crate::channel::{effective_channel, ChannelSet, ObservationProbe};
use crate::{BeamError, CMat, CVec, C64};

fn cr(v: f64) -> C64 {
    C64::new(v, 0.0)
}

/// Effective channels of all receivers.
pub fn all_channels(cs: &ChannelSet, theta: &CVec) -> Result<Vec<CMat>, BeamError> {
    (0..cs.n_receivers()).map(|i| effective_channel(cs, theta, i)).collect()
}

pub fn total_power(f: &[CMat]) -> f64 {
    f.iter().map(|m| m.norm_squared()).sum()
}

fn check_precoders(cs: &ChannelSet, f: &[CMat]) -> Result<(), BeamError> {
    if f.len() != cs.n_receivers() {
        return Err(BeamError::Dimension(format!(
            "{} precoders for {} receivers",
            f.len(),
            cs.n_receivers()
        )));
    }
    for (i, m) in f.iter().enumerate() {
        if m.nrows() != cs.n_t() || m.ncols() != cs.n_r(i) {
            return Err(BeamError::Dimension(format!(
                "precoder {i} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                cs.n_t(),
                cs.n_r(i)
            )));
        }
    }
    Ok(())
}

/// `sum_{j != i} H F_j F_j^H H^H + s2 I`
pub fn interference_covariance(h: &CMat, f: &[CMat], i: usize, sigma2: f64) -> CMat {
    let n = h.nrows();
    let mut omega = CMat::identity(n, n) * cr(sigma2);
    for (j, fj) in f.iter().enumerate() {
        if j != i {
            let hf = h * fj;
            omega += &hf * hf.adjoint();
        }
    }
    omega
}

fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * cr(0.5)
}

/// `ln det` of a Hermitian positive definite matrix.
pub fn ln_det_hpd(m: &CMat) -> Result<f64, BeamError> {
    let ch = hermitian_part(m)
        .cholesky()
        .ok_or(BeamError::NotPositiveDefinite("log-determinant"))?;
    Ok(ch.l_dirty().diagonal().iter().map(|v| 2.0 * v.re.ln()).sum())
}

/// `sum ln(1 + lambda)` over the eigenvalues of `Y Y^H` with `Y = L^-1 H F_i`
/// and `L L^H = Omega`. Stays accurate when the rate is tiny, where a
/// difference of two log-determinants would cancel.
pub(crate) fn rate_from(h: &CMat, f: &[CMat], i: usize, sigma2: f64) -> Result<f64, BeamError> {
    let omega = interference_covariance(h, f, i, sigma2);
    let ch = hermitian_part(&omega)
        .cholesky()
        .ok_or(BeamError::NotPositiveDefinite("interference covariance"))?;
    let y = ch
        .l_dirty()
        .solve_lower_triangular(&(h * &f[i]))
        .ok_or(BeamError::NotPositiveDefinite("interference covariance"))?;
    let x = hermitian_part(&(&y * y.adjoint()));
    let eig = x.symmetric_eigenvalues();
    Ok(eig.iter().map(|l| l.max(0.0).ln_1p()).sum::<f64>() / LN_2)
}

/// `log2 det(I + H_i F_i F_i^H H_i^H Omega_i^-1)`.
pub fn achievable_rate(cs: &ChannelSet, theta: &CVec, f: &[CMat], sigma2: f64, i: usize) -> Result<f64, BeamError> {
    check_precoders(cs, f)?;
    let h = effective_channel(cs, theta, i)?;
    rate_from(&h, f, i, sigma2)
}

pub fn rates(cs: &ChannelSet, theta: &CVec, f: &[CMat], sigma2: f64) -> Result<Vec<f64>, BeamError> {
    check_precoders(cs, f)?;
    let hs = all_channels(cs, theta)?;
    (0..hs.len()).map(|i| rate_from(&hs[i], f, i, sigma2)).collect()
}

pub fn min_rate(cs: &ChannelSet, theta: &CVec, f: &[CMat], sigma2: f64) -> Result<f64, BeamError> {
    Ok(rates(cs, theta, f, sigma2)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// MMSE receive filters and error covariances for every receiver.
#[derive(Clone, Debug)]
pub struct AuxiliaryFilters {
    pub w: Vec<CMat>,
    pub sigma: Vec<CMat>,
}

/// Per-receiver quantities derived from `Sigma`: its inverse, a factor
/// `C` with `Sigma^-1 = C^H C`, and `ln det Sigma`.
struct SigmaParts {
    inv: CMat,
    factor: CMat,
    ln_det: f64,
}

fn sigma_parts(sigma: &CMat) -> Result<SigmaParts, BeamError> {
    let ch = hermitian_part(sigma)
        .cholesky()
        .ok_or(BeamError::NotPositiveDefinite("error covariance"))?;
    let l = ch.l();
    let ln_det = l.diagonal().iter().map(|v| 2.0 * v.re.ln()).sum();
    let n = l.nrows();
    let factor = l
        .solve_lower_triangular(&CMat::identity(n, n))
        .ok_or(BeamError::NotPositiveDefinite("error covariance"))?;
    let inv = factor.adjoint() * &factor;
    Ok(SigmaParts { inv, factor, ln_det })
}

pub fn update_filters(cs: &ChannelSet, theta: &CVec, f: &[CMat], sigma2: f64) -> Result<AuxiliaryFilters, BeamError> {
    check_precoders(cs, f)?;
    let hs = all_channels(cs, theta)?;
    let mut w = Vec::with_capacity(hs.len());
    let mut sigma = Vec::with_capacity(hs.len());
    for (i, h) in hs.iter().enumerate() {
        let hf = h * &f[i];
        let t = interference_covariance(h, f, i, sigma2) + &hf * hf.adjoint();
        let t_inv = hermitian_part(&t)
            .cholesky()
            .ok_or(BeamError::NotPositiveDefinite("received covariance"))?
            .inverse();
        let wi = hf.adjoint() * t_inv;
        let d = hf.ncols();
        let si = hermitian_part(&(CMat::identity(d, d) - &wi * &hf));
        w.push(wi);
        sigma.push(si);
    }
    Ok(AuxiliaryFilters { w, sigma })
}

/// Part of the surrogate that depends only on the filters, in nats.
fn filter_constant(parts: &SigmaParts, w: &CMat, sigma2: f64) -> f64 {
    let d = w.nrows() as f64;
    let tr_inv: f64 = parts.inv.diagonal().iter().map(|v| v.re).sum();
    d - parts.ln_det - tr_inv - sigma2 * (&parts.factor * w).norm_squared()
}

fn surrogate_from(filters: &AuxiliaryFilters, h: &CMat, f: &[CMat], sigma2: f64, i: usize) -> Result<f64, BeamError> {
    let parts = sigma_parts(&filters.sigma[i])?;
    let w = &filters.w[i];
    let cwh = &parts.factor * w * h;
    let k = &parts.inv * w * h;
    let linear = (k * &f[i]).trace().re;
    let quad: f64 = f.iter().map(|fj| (&cwh * fj).norm_squared()).sum();
    Ok((filter_constant(&parts, w, sigma2) + 2.0 * linear - quad) / LN_2)
}

pub fn surrogate_value(
    filters: &AuxiliaryFilters,
    cs: &ChannelSet,
    theta: &CVec,
    f: &[CMat],
    sigma2: f64,
    i: usize,
) -> Result<f64, BeamError> {
    check_precoders(cs, f)?;
    let h = effective_channel(cs, theta, i)?;
    surrogate_from(filters, &h, f, sigma2, i)
}

/// Minimum over receivers of the surrogate.
pub fn objective_f(filters: &AuxiliaryFilters, cs: &ChannelSet, theta: &CVec, f: &[CMat], sigma2: f64) -> Result<f64, BeamError> {
    check_precoders(cs, f)?;
    let hs = all_channels(cs, theta)?;
    let mut best = f64::INFINITY;
    for (i, h) in hs.iter().enumerate() {
        best = best.min(surrogate_from(filters, h, f, sigma2, i)?);
    }
    Ok(best)
}

/// `U [F_1 .. F_N]`, one column per stream.
pub fn stacked_streams(cs: &ChannelSet, f: &[CMat]) -> CMat {
    let cols: usize = f.iter().map(|m| m.ncols()).sum();
    let mut all = CMat::zeros(cs.n_t(), cols);
    let mut at = 0;
    for m in f {
        all.columns_mut(at, m.ncols()).copy_from(m);
        at += m.ncols();
    }
    &cs.u * all
}

/// `sum_i || g_ob diag(theta) U F_i ||^2`, in Watts.
pub fn reradiated_power(cs: &ChannelSet, theta: &CVec, f: &[CMat], probe: &ObservationProbe) -> f64 {
    let v = stacked_streams(cs, f);
    let weights = CMat::from_fn(1, theta.len(), |_, n| probe.g_ob[(0, n)] * theta[n]);
    (weights * v).norm_squared()
}

/// Reradiated power towards `probe` as a form in `theta`. Row `s` of the
/// factor is `g_ob .* (U F)[:, s]`, so the form has rank at most the
/// total stream count.
pub fn mask_form(probe: &ObservationProbe, streams: &CMat) -> HermitianForm {
    let factor = CMat::from_fn(streams.ncols(), streams.nrows(), |s, n| probe.g_ob[(0, n)] * streams[(n, s)]);
    HermitianForm::from_factor(factor).expect("finite channel data")
}

/// `A o B^T` where `A` and `B` are given.
pub fn hadamard_transpose(a: &CMat, b: &CMat) -> CMat {
    a.component_mul(&b.transpose())
}

/// Dense mask form through the Hadamard identity: `Q o T^T` with
/// `Q = g^H g` and `T = U F F^H U^H` summed over receivers.
pub fn mask_form_dense(probe: &ObservationProbe, cs: &ChannelSet, f: &[CMat]) -> CMat {
    let q = probe.g_ob.adjoint() * &probe.g_ob;
    let v = stacked_streams(cs, f);
    hadamard_transpose(&q, &(&v * v.adjoint()))
}

#[derive(Clone, Debug)]
pub struct MaskConstraint {
    pub angle_deg: f64,
    pub form: HermitianForm,
}

pub fn mask_constraints(cs: &ChannelSet, f: &[CMat], angles: &[f64]) -> Vec<MaskConstraint> {
    let streams = stacked_streams(cs, f);
    angles
        .iter()
        .map(|&a| MaskConstraint {
            angle_deg: a,
            form: mask_form(&cs.probe(a), &streams),
        })
        .collect()
}

/// Largest reradiated power over a set of mask forms.
pub fn max_mask_power(theta: &CVec, mask: &[MaskConstraint]) -> f64 {
    mask.iter().map(|m| m.form.quad(theta)).fold(0.0, f64::max)
}

/// Concave quadratic pieces in `theta` (one per receiver) plus mask forms.
#[derive(Clone, Debug)]
pub struct ThetaQuadratics {
    pub pieces: Vec<QuadPiece>,
    pub mask: Vec<MaskConstraint>,
}

pub fn build_theta_quadratics(
    filters: &AuxiliaryFilters,
    cs: &ChannelSet,
    f: &[CMat],
    sigma2: f64,
    mask_angles: &[f64],
) -> Result<ThetaQuadratics, BeamError> {
    check_precoders(cs, f)?;
    let n = cs.n_ris();
    let streams = stacked_streams(cs, f);
    let bits = cr(1.0 / LN_2.sqrt());
    let mut pieces = Vec::with_capacity(cs.n_receivers());
    for i in 0..cs.n_receivers() {
        let parts = sigma_parts(&filters.sigma[i])?;
        let w = &filters.w[i];
        let gs = cs.scaled_g(i);
        let la = &parts.factor * w * &gs;
        let d = la.nrows();
        let s = streams.ncols();
        let mut factor = CMat::zeros(d * s, n);
        for a in 0..d {
            for b in 0..s {
                for k in 0..n {
                    factor[(a * s + b, k)] = la[(a, k)] * streams[(k, b)] * bits;
                }
            }
        }
        let ksg = &parts.inv * w * &gs;
        let own = &cs.u * &f[i];
        let linear = CVec::from_fn(n, |k, _| {
            let mut acc = C64::new(0.0, 0.0);
            for s in 0..own.ncols() {
                acc += own[(k, s)] * ksg[(s, k)];
            }
            acc.conj() / LN_2
        });
        pieces.push(QuadPiece {
            form: HermitianForm::from_factor(factor).map_err(BeamError::from)?,
            linear,
            constant: filter_constant(&parts, w, sigma2) / LN_2,
        });
    }
    Ok(ThetaQuadratics {
        pieces,
        mask: angles_to_mask(cs, &streams, mask_angles),
    })
}

fn angles_to_mask(cs: &ChannelSet, streams: &CMat, angles: &[f64]) -> Vec<MaskConstraint> {
    angles
        .iter()
        .map(|&a| MaskConstraint {
            angle_deg: a,
            form: mask_form(&cs.probe(a), streams),
        })
        .collect()
}

/// Dense `E_i` through the Hadamard identity, for cross-checking the factored form.
pub fn theta_form_dense(filters: &AuxiliaryFilters, cs: &ChannelSet, f: &[CMat], i: usize) -> Result<CMat, BeamError> {
    let parts = sigma_parts(&filters.sigma[i])?;
    let gs = cs.scaled_g(i);
    let a = gs.adjoint() * filters.w[i].adjoint() * &parts.inv * &filters.w[i] * &gs;
    let v = stacked_streams(cs, f);
    Ok(hadamard_transpose(&a, &(&v * v.adjoint())) * cr(1.0 / LN_2))
}

/// Column-stacking of a matrix.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn devectorize(v: &CVec, rows: usize, cols: usize) -> Result<CMat, BeamError> {
    if v.len() != rows * cols {
        return Err(BeamError::Dimension(format!(
            "vector of length {} cannot fill {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMat::from_column_slice(rows, cols, v.as_slice()))
}

/// `I_copies (x) J`: block-diagonal lift acting on a column-stacked matrix.
pub fn block_lift(j: &CMat, copies: usize) -> CMat {
    let (r, c) = j.shape();
    let mut out = CMat::zeros(r * copies, c * copies);
    for k in 0..copies {
        out.view_mut((k * r, k * c), (r, c)).copy_from(j);
    }
    out
}

/// Pieces of the precoder sub-problem for receiver `i`, one per receiver,
/// in the variable `vec(F_i)`.
#[derive(Clone, Debug)]
pub struct PrecoderQuadratics {
    pub receiver: usize,
    /// `J_k = H_k^H W_k^H Sigma_k^-1 W_k H_k` for every receiver `k`, in bits.
    pub j: Vec<CMat>,
    /// `K_i = Sigma_i^-1 W_i H_i`.
    pub k: CMat,
    /// Constant subtracted in the own piece.
    pub v: f64,
    /// Constants of the other pieces, indexed by receiver (entry `i` is unused and zero).
    pub o: Vec<f64>,
    pub residual_power: f64,
    pub pieces: Vec<QuadPiece>,
}

pub fn build_precoder_quadratics(
    filters: &AuxiliaryFilters,
    cs: &ChannelSet,
    theta: &CVec,
    f: &[CMat],
    sigma2: f64,
    p_max: f64,
    i: usize,
) -> Result<PrecoderQuadratics, BeamError> {
    check_precoders(cs, f)?;
    let residual = p_max - f.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| m.norm_squared()).sum::<f64>();
    if !(residual > 0.0) {
        return Err(BeamError::Infeasible(format!(
            "no power left for precoder {i} (residual {residual:e} W)"
        )));
    }
    let hs = all_channels(cs, theta)?;
    let streams_i = f[i].ncols();
    let bits = cr(1.0 / LN_2.sqrt());
    let mut j_all = Vec::with_capacity(hs.len());
    let mut pieces = Vec::with_capacity(hs.len());
    let mut o = vec![0.0; hs.len()];
    let mut v = 0.0;
    let mut k_own = CMat::zeros(0, 0);
    for (k, h) in hs.iter().enumerate() {
        let parts = sigma_parts(&filters.sigma[k])?;
        let w = &filters.w[k];
        let lj = &parts.factor * w * h * bits;
        j_all.push(lj.adjoint() * &lj);
        let others: f64 = f
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, fj)| (&lj * fj).norm_squared())
            .sum();
        let base = filter_constant(&parts, w, sigma2) / LN_2 - others;
        let kk = &parts.inv * w * h;
        let (linear, constant) = if k == i {
            v = -base;
            let lin = vectorize(&kk.adjoint()) * cr(1.0 / LN_2);
            k_own = kk;
            (lin, base)
        } else {
            let own = 2.0 * (&kk * &f[k]).trace().re / LN_2;
            o[k] = base + own;
            (CVec::zeros(cs.n_t() * streams_i), base + own)
        };
        pieces.push(QuadPiece {
            form: HermitianForm::from_factor(block_lift(&lj, streams_i))?,
            linear,
            constant,
        });
    }
    Ok(PrecoderQuadratics {
        receiver: i,
        j: j_all,
        k: k_own,
        v,
        o,
        residual_power: residual,
        pieces,
    })
}

/// Pieces of the joint precoder problem in the stacked variable
/// `[vec(F_1); ..; vec(F_N)]`, under the total budget alone.
pub fn build_joint_precoder_quadratics(
    filters: &AuxiliaryFilters,
    cs: &ChannelSet,
    theta: &CVec,
    f: &[CMat],
    sigma2: f64,
) -> Result<Vec<QuadPiece>, BeamError> {
    check_precoders(cs, f)?;
    let hs = all_channels(cs, theta)?;
    let bits = cr(1.0 / LN_2.sqrt());
    let widths: Vec<usize> = f.iter().map(|m| cs.n_t() * m.ncols()).collect();
    let dim: usize = widths.iter().sum();
    let mut pieces = Vec::with_capacity(hs.len());
    for (k, h) in hs.iter().enumerate() {
        let parts = sigma_parts(&filters.sigma[k])?;
        let w = &filters.w[k];
        let lj = &parts.factor * w * h * bits;
        let mut factor = CMat::zeros(lj.nrows() * f.iter().map(|m| m.ncols()).sum::<usize>(), dim);
        let (mut row, mut col) = (0, 0);
        for (j, fj) in f.iter().enumerate() {
            let lifted = block_lift(&lj, fj.ncols());
            factor.view_mut((row, col), lifted.shape()).copy_from(&lifted);
            row += lifted.nrows();
            col += widths[j];
        }
        let kk = &parts.inv * w * h;
        let mut linear = CVec::zeros(dim);
        let at: usize = widths[..k].iter().sum();
        linear.rows_mut(at, widths[k]).copy_from(&(vectorize(&kk.adjoint()) * cr(1.0 / LN_2)));
        pieces.push(QuadPiece {
            form: HermitianForm::from_factor(factor)?,
            linear,
            constant: filter_constant(&parts, w, sigma2) / LN_2,
        });
    }
    Ok(pieces)
}
