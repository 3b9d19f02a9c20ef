//! Primal-dual interior-point method for real second-order cone programs.
//!
//! Problems are posed in the inequality form
//!
//! ```text
//! minimize    c^T x
//! subject to  G x + s = h,   s in K
//! ```
//!
//! where `K` is a product of second-order cones
//! `{ (s0, s1) : s0 >= ||s1|| }`. A cone of dimension one is the
//! nonnegative ray. The iteration is a Mehrotra predictor-corrector on
//! Nesterov-Todd scaled variables, with the Newton system reduced to the
//! normal equations `G^T W^-2 G dx = r` and solved by Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::ConicError;

/// A second-order cone program in inequality form.
#[derive(Clone, Debug)]
pub struct SocpProblem {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Dimensions of the consecutive cone blocks of `s`.
    pub cones: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct SocpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
}

impl Default for SocpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            step_fraction: 0.99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SocpStatus {
    Optimal,
    MaxIter,
    /// The Newton system could not be factored even after regularization.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct SocpResult {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub status: SocpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

impl SocpProblem {
    fn validate(&self) -> Result<(), ConicError> {
        let m: usize = self.cones.iter().sum();
        if self.g.nrows() != m || self.h.len() != m {
            return Err(ConicError::DimensionMismatch(format!(
                "cone dimensions sum to {m}, G has {} rows, h has {}",
                self.g.nrows(),
                self.h.len()
            )));
        }
        if self.g.ncols() != self.c.len() {
            return Err(ConicError::DimensionMismatch(format!(
                "G has {} columns, c has {}",
                self.g.ncols(),
                self.c.len()
            )));
        }
        if self.cones.contains(&0) {
            return Err(ConicError::DimensionMismatch("empty cone block".into()));
        }
        let finite = self.c.iter().chain(self.g.iter()).chain(self.h.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(ConicError::NonFinite);
        }
        Ok(())
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cones.len());
        let mut acc = 0;
        for &d in &self.cones {
            out.push(acc);
            acc += d;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Single-cone algebra.

/// `s0^2 - ||s1||^2`
fn jdot(u: &[f64], v: &[f64]) -> f64 {
    u[0] * v[0] - u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Jordan product `u o v = (u^T v, u0 v1 + v0 u1)`.
fn jordan_product(u: &[f64], v: &[f64], out: &mut [f64]) {
    out[0] = dot(u, v);
    for k in 1..u.len() {
        out[k] = u[0] * v[k] + v[0] * u[k];
    }
}

/// Solves `lambda o x = d` for `x`.
fn jordan_solve(lambda: &[f64], d: &[f64], out: &mut [f64]) {
    let l0 = lambda[0];
    let det = jdot(lambda, lambda);
    let cross: f64 = lambda[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
    let x0 = (l0 * d[0] - cross) / det;
    out[0] = x0;
    for k in 1..lambda.len() {
        out[k] = (d[k] - x0 * lambda[k]) / l0;
    }
}

/// Distance of `u` from the cone boundary measured along `e`: positive inside.
fn interior_margin(u: &[f64]) -> f64 {
    let tail: f64 = u[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    u[0] - tail
}

/// Largest `alpha >= 0` such that `u + alpha d` stays in the cone, or
/// `f64::INFINITY` when unbounded. `u` must be interior.
fn max_step(u: &[f64], d: &[f64]) -> f64 {
    if u.len() == 1 {
        return if d[0] < 0.0 { -u[0] / d[0] } else { f64::INFINITY };
    }
    let a = jdot(d, d);
    let b = jdot(u, d);
    let c = jdot(u, u).max(0.0);
    let scale = dot(d, d).max(dot(u, u)).max(f64::MIN_POSITIVE);
    if a.abs() <= 1e-15 * scale {
        // Linear in alpha along a boundary ray.
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    // Stable roots of a t^2 + 2 b t + c.
    let q = -(b + b.signum() * sq);
    let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    let mut best = f64::INFINITY;
    for r in [r1, r2] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    if a > 0.0 && b >= 0.0 {
        // Both roots negative: direction points deeper into the cone.
        return f64::INFINITY;
    }
    best
}

/// Nesterov-Todd scaling of one cone, `W = beta (2 v v^T - J)`.
#[derive(Clone, Debug)]
struct NtScaling {
    beta: f64,
    v: Vec<f64>,
}

impl NtScaling {
    fn new(s: &[f64], z: &[f64]) -> Self {
        let n = s.len();
        if n == 1 {
            return Self {
                beta: (s[0] / z[0]).sqrt(),
                v: vec![1.0],
            };
        }
        let sn = jdot(s, s).max(f64::MIN_POSITIVE).sqrt();
        let zn = jdot(z, z).max(f64::MIN_POSITIVE).sqrt();
        let sb: Vec<f64> = s.iter().map(|v| v / sn).collect();
        let zb: Vec<f64> = z.iter().map(|v| v / zn).collect();
        let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
        let mut wb = vec![0.0; n];
        wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
        for k in 1..n {
            wb[k] = (sb[k] - zb[k]) / (2.0 * gamma);
        }
        let denom = (2.0 * (wb[0] + 1.0)).sqrt();
        let mut v = wb;
        v[0] += 1.0;
        for x in v.iter_mut() {
            *x /= denom;
        }
        Self {
            beta: (sn / zn).sqrt(),
            v,
        }
    }

    /// `out = W u`
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        if n == 1 {
            out[0] = self.beta * u[0];
            return;
        }
        let vu = dot(&self.v, u);
        out[0] = self.beta * (2.0 * self.v[0] * vu - u[0]);
        for k in 1..n {
            out[k] = self.beta * (2.0 * self.v[k] * vu + u[k]);
        }
    }

    /// `out = W^-1 u`, with `W^-1 = (2 J v v^T J - J) / beta`.
    fn apply_inv(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        if n == 1 {
            out[0] = u[0] / self.beta;
            return;
        }
        let vju = jdot(&self.v, u);
        out[0] = (2.0 * self.v[0] * vju - u[0]) / self.beta;
        for k in 1..n {
            out[k] = (-2.0 * self.v[k] * vju + u[k]) / self.beta;
        }
    }
}

// ---------------------------------------------------------------------------

struct Workspace<'a> {
    p: &'a SocpProblem,
    offsets: Vec<usize>,
}

impl<'a> Workspace<'a> {
    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().copied().zip(self.p.cones.iter().copied())
    }

    fn min_margin(&self, u: &DVector<f64>) -> f64 {
        self.blocks()
            .map(|(o, d)| interior_margin(&u.as_slice()[o..o + d]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Shifts `u` along the cone identity so that it is strictly interior.
    fn push_interior(&self, u: &mut DVector<f64>) {
        let worst = self
            .blocks()
            .map(|(o, d)| {
                let b = &u.as_slice()[o..o + d];
                b[1..].iter().map(|v| v * v).sum::<f64>().sqrt() - b[0]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if worst >= -1e-8 {
            let shift = 1.0 + worst.max(0.0);
            for (o, _) in self.blocks().collect::<Vec<_>>() {
                u[o] += shift;
            }
        }
    }

    fn max_step(&self, u: &DVector<f64>, d: &DVector<f64>) -> f64 {
        self.blocks()
            .map(|(o, n)| max_step(&u.as_slice()[o..o + n], &d.as_slice()[o..o + n]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn cholesky_regularized(h: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch);
    }
    let maxdiag = h.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut delta = 1e-13 * maxdiag;
    for _ in 0..6 {
        let mut reg = h.clone();
        for k in 0..reg.nrows() {
            reg[(k, k)] += delta;
        }
        if let Some(ch) = reg.cholesky() {
            return Some(ch);
        }
        delta *= 100.0;
    }
    None
}

struct Scaled {
    scalings: Vec<NtScaling>,
    lambda: DVector<f64>,
    ghat: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

struct Direction {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    /// `W^-1 ds` and `W dz`, kept for the Mehrotra correction.
    ds_scaled: DVector<f64>,
    dz_scaled: DVector<f64>,
}

impl Workspace<'_> {
    fn scale(&self, s: &DVector<f64>, z: &DVector<f64>) -> Option<Scaled> {
        let p = self.p;
        let n = p.g.ncols();
        let m = p.g.nrows();
        let mut scalings = Vec::with_capacity(p.cones.len());
        let mut lambda = DVector::zeros(m);
        let mut ghat = DMatrix::zeros(m, n);
        let mut col_in = Vec::new();
        let mut col_out = Vec::new();
        for (o, d) in self.blocks() {
            let w = NtScaling::new(&s.as_slice()[o..o + d], &z.as_slice()[o..o + d]);
            w.apply(&z.as_slice()[o..o + d], &mut lambda.as_mut_slice()[o..o + d]);
            col_in.resize(d, 0.0);
            col_out.resize(d, 0.0);
            for j in 0..n {
                let mut nonzero = false;
                for k in 0..d {
                    col_in[k] = p.g[(o + k, j)];
                    nonzero |= col_in[k] != 0.0;
                }
                if !nonzero {
                    continue;
                }
                w.apply_inv(&col_in, &mut col_out);
                for k in 0..d {
                    ghat[(o + k, j)] = col_out[k];
                }
            }
            scalings.push(w);
        }
        let h = ghat.transpose() * &ghat;
        let chol = cholesky_regularized(&h)?;
        Some(Scaled {
            scalings,
            lambda,
            ghat,
            chol,
        })
    }

    /// Solves `G^T dz = -rx`, `G dx + ds = -rz`, `lambda o (W dz + W^-1 ds) = d_s`.
    fn solve_newton(&self, sc: &Scaled, rx: &DVector<f64>, rz: &DVector<f64>, d_s: &DVector<f64>) -> Direction {
        let m = rz.len();
        let mut q = DVector::zeros(m);
        let mut winv_rz = DVector::zeros(m);
        for ((o, d), w) in self.blocks().zip(&sc.scalings) {
            jordan_solve(
                &sc.lambda.as_slice()[o..o + d],
                &d_s.as_slice()[o..o + d],
                &mut q.as_mut_slice()[o..o + d],
            );
            w.apply_inv(&rz.as_slice()[o..o + d], &mut winv_rz.as_mut_slice()[o..o + d]);
        }
        let rhs = -(rx + sc.ghat.tr_mul(&(&q + &winv_rz)));
        let dx = sc.chol.solve(&rhs);
        let ds_scaled = -(&winv_rz + &sc.ghat * &dx);
        let dz_scaled = &q - &ds_scaled;
        let mut ds = DVector::zeros(m);
        let mut dz = DVector::zeros(m);
        for ((o, d), w) in self.blocks().zip(&sc.scalings) {
            w.apply(&ds_scaled.as_slice()[o..o + d], &mut ds.as_mut_slice()[o..o + d]);
            w.apply_inv(&dz_scaled.as_slice()[o..o + d], &mut dz.as_mut_slice()[o..o + d]);
        }
        Direction {
            dx,
            ds,
            dz,
            ds_scaled,
            dz_scaled,
        }
    }
}

/// Solves the cone program. `x0`, when given and strictly feasible
/// (`h - G x0` interior to `K`), is used as the primal starting point.
pub fn solve_socp(p: &SocpProblem, settings: &SocpSettings, x0: Option<&DVector<f64>>) -> Result<SocpResult, ConicError> {
    p.validate()?;
    let n = p.g.ncols();
    let m = p.g.nrows();
    let ws = Workspace {
        p,
        offsets: p.offsets(),
    };
    let degree = p.cones.len() as f64;

    let gtg = p.g.transpose() * &p.g;
    let gtg_chol = cholesky_regularized(&gtg).ok_or(ConicError::RankDeficient)?;

    let (mut x, mut s) = match x0 {
        Some(x0) if x0.len() == n && ws.min_margin(&(&p.h - &p.g * x0)) > 0.0 => (x0.clone(), &p.h - &p.g * x0),
        _ => {
            let x = gtg_chol.solve(&p.g.tr_mul(&p.h));
            let mut s = &p.h - &p.g * &x;
            ws.push_interior(&mut s);
            (x, s)
        }
    };
    let mut z = -(&p.g * gtg_chol.solve(&p.c));
    ws.push_interior(&mut z);

    let hnorm = p.h.norm().max(1.0);
    let cnorm = p.c.norm().max(1.0);
    let mut status = SocpStatus::MaxIter;
    let mut iterations = 0;
    let (mut pres, mut dres, mut gap);

    let mut e = DVector::zeros(m);
    for (o, _) in ws.blocks() {
        e[o] = 1.0;
    }

    loop {
        let rx = p.g.tr_mul(&z) + &p.c;
        let rz = &p.g * &x + &s - &p.h;
        gap = s.dot(&z);
        pres = rz.norm() / hnorm;
        dres = rx.norm() / cnorm;
        let pcost = p.c.dot(&x);
        let dcost = -p.h.dot(&z);
        let relgap = gap / pcost.abs().min(dcost.abs()).max(1.0);
        if pres <= settings.tol && dres <= settings.tol && (gap <= settings.tol || relgap <= settings.tol) {
            status = SocpStatus::Optimal;
            break;
        }
        if iterations >= settings.max_iter {
            break;
        }
        let Some(sc) = ws.scale(&s, &z) else {
            status = SocpStatus::Stalled;
            break;
        };
        let mu = gap / degree;

        // Predictor.
        let mut lsq = DVector::zeros(m);
        for (o, d) in ws.blocks() {
            let l = &sc.lambda.as_slice()[o..o + d];
            jordan_product(l, l, &mut lsq.as_mut_slice()[o..o + d]);
        }
        let aff = ws.solve_newton(&sc, &rx, &rz, &(-&lsq));
        let alpha_aff = ws.max_step(&s, &aff.ds).min(ws.max_step(&z, &aff.dz)).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // Corrector.
        let mut cross = DVector::zeros(m);
        for (o, d) in ws.blocks() {
            jordan_product(
                &aff.ds_scaled.as_slice()[o..o + d],
                &aff.dz_scaled.as_slice()[o..o + d],
                &mut cross.as_mut_slice()[o..o + d],
            );
        }
        let d_s = -&lsq - &cross + &e * (sigma * mu);
        let dir = ws.solve_newton(&sc, &rx, &rz, &d_s);
        let alpha_max = ws.max_step(&s, &dir.ds).min(ws.max_step(&z, &dir.dz));
        let alpha = (settings.step_fraction * alpha_max).min(1.0);
        if !(alpha > 0.0) || !alpha.is_finite() {
            status = SocpStatus::Stalled;
            break;
        }
        x += &dir.dx * alpha;
        s += &dir.ds * alpha;
        z += &dir.dz * alpha;
        iterations += 1;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ConicError::NonFinite);
        }
    }

    Ok(SocpResult {
        x,
        s,
        z,
        status,
        iterations,
        primal_residual: pres,
        dual_residual: dres,
        gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nt_scaling_maps_z_and_s_to_the_same_point() {
        let s = [3.0, 1.0, -0.5, 0.7];
        let z = [2.0, -0.3, 0.9, 0.1];
        let w = NtScaling::new(&s, &z);
        let mut wz = [0.0; 4];
        let mut winv_s = [0.0; 4];
        w.apply(&z, &mut wz);
        w.apply_inv(&s, &mut winv_s);
        for k in 0..4 {
            assert_relative_eq!(wz[k], winv_s[k], epsilon = 1e-12);
        }
        let mut back = [0.0; 4];
        w.apply_inv(&wz, &mut back);
        for k in 0..4 {
            assert_relative_eq!(back[k], z[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn jordan_solve_inverts_product() {
        let l = [2.0, 0.5, -0.4];
        let x = [0.3, -1.2, 0.8];
        let mut d = [0.0; 3];
        jordan_product(&l, &x, &mut d);
        let mut back = [0.0; 3];
        jordan_solve(&l, &d, &mut back);
        for k in 0..3 {
            assert_relative_eq!(back[k], x[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn max_step_hits_boundary() {
        let u = [2.0, 0.0];
        let d = [-1.0, 1.0];
        // (2 - a) = |a| at a = 1.
        assert_relative_eq!(max_step(&u, &d), 1.0, epsilon = 1e-12);
        assert!(max_step(&u, &[1.0, 0.0]).is_infinite());
        assert_relative_eq!(max_step(&[1.0], &[-0.25]), 4.0);
    }

    #[test]
    fn solves_small_lp() {
        // minimize -x1 - x2 s.t. x1 <= 1, x2 <= 2, x >= 0
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let p = SocpProblem {
            c: DVector::from_vec(vec![-1.0, -1.0]),
            g,
            h: DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0]),
            cones: vec![1, 1, 1, 1],
        };
        let r = solve_socp(&p, &SocpSettings::default(), None).unwrap();
        assert_eq!(r.status, SocpStatus::Optimal);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(r.x[1], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn projects_onto_ball() {
        // minimize -(a^T x) s.t. ||x|| <= 1  ->  x = a / ||a||
        let a = [3.0, 4.0];
        let mut g = DMatrix::zeros(3, 2);
        g[(1, 0)] = -1.0;
        g[(2, 1)] = -1.0;
        let p = SocpProblem {
            c: DVector::from_vec(vec![-a[0], -a[1]]),
            g,
            h: DVector::from_vec(vec![1.0, 0.0, 0.0]),
            cones: vec![3],
        };
        let r = solve_socp(&p, &SocpSettings::default(), None).unwrap();
        assert_eq!(r.status, SocpStatus::Optimal);
        assert_relative_eq!(r.x[0], 0.6, epsilon = 1e-7);
        assert_relative_eq!(r.x[1], 0.8, epsilon = 1e-7);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let p = SocpProblem {
            c: DVector::zeros(2),
            g: DMatrix::zeros(3, 2),
            h: DVector::zeros(2),
            cones: vec![3],
        };
        assert!(solve_socp(&p, &SocpSettings::default(), None).is_err());
    }
}
