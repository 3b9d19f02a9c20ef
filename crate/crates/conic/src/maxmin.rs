//! Max-min of concave complex quadratics over a box or a ball, with convex
//! quadratic side constraints, lowered to a real cone program.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::form::{complex_from_real, real_embed_matrix, HermitianForm};
use crate::socp::{solve_socp, SocpProblem, SocpSettings, SocpStatus};
use crate::{CMat, CVec, ConicError, C64};

/// `-x^H A x + 2 Re(b^H x) + c`
#[derive(Clone, Debug)]
pub struct QuadPiece {
    pub form: HermitianForm,
    pub linear: CVec,
    pub constant: f64,
}

impl QuadPiece {
    pub fn value(&self, x: &CVec) -> f64 {
        -self.form.quad(x) + 2.0 * self.linear.dotc(x).re + self.constant
    }
}

/// `x^H A x <= bound`
#[derive(Clone, Debug)]
pub struct QuadConstraint {
    pub form: HermitianForm,
    pub bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    /// `|x_n| <= 1` for every coordinate.
    UnitBox,
    /// `||x||^2 <= P`.
    PowerBall(f64),
}

#[derive(Clone, Debug)]
pub struct MaxMinQP {
    pub dim: usize,
    pub pieces: Vec<QuadPiece>,
    pub constraints: Vec<QuadConstraint>,
    pub domain: Domain,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub x: CVec,
    /// Minimum of the pieces at `x`, evaluated on the original data.
    pub objective: f64,
    pub residuals: KktResiduals,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl MaxMinQP {
    pub fn value(&self, x: &CVec) -> f64 {
        self.pieces.iter().map(|p| p.value(x)).fold(f64::INFINITY, f64::min)
    }

    /// Largest violation of the domain and side constraints at `x` (zero when feasible).
    pub fn violation(&self, x: &CVec) -> f64 {
        let mut worst: f64 = 0.0;
        match self.domain {
            Domain::UnitBox => {
                for v in x.iter() {
                    worst = worst.max(v.norm() - 1.0);
                }
            }
            Domain::PowerBall(p) => worst = worst.max(x.norm_squared() - p),
        }
        for c in &self.constraints {
            worst = worst.max(c.form.quad(x) - c.bound);
        }
        worst
    }

    fn validate(&self) -> Result<(), ConicError> {
        if self.pieces.is_empty() {
            return Err(ConicError::NoPieces);
        }
        for (k, p) in self.pieces.iter().enumerate() {
            if p.form.dim() != self.dim || p.linear.len() != self.dim {
                return Err(ConicError::DimensionMismatch(format!("piece {k} does not have dimension {}", self.dim)));
            }
            if !p.constant.is_finite() || !p.linear.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Err(ConicError::NonFinite);
            }
        }
        for (k, c) in self.constraints.iter().enumerate() {
            if c.form.dim() != self.dim {
                return Err(ConicError::DimensionMismatch(format!("constraint {k} does not have dimension {}", self.dim)));
            }
            if c.bound.is_nan() {
                return Err(ConicError::NonFinite);
            }
        }
        if let Domain::PowerBall(p) = self.domain {
            if p.is_nan() {
                return Err(ConicError::NonFinite);
            }
        }
        Ok(())
    }

    /// Plain-text dump of the problem data, for offline inspection.
    pub fn write_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        fn row_dump<W: Write>(w: &mut W, m: &CMat) -> io::Result<()> {
            for i in 0..m.nrows() {
                let cells: Vec<String> = (0..m.ncols()).map(|j| format!("{:e} {:e}", m[(i, j)].re, m[(i, j)].im)).collect();
                writeln!(w, "{}", cells.join(" "))?;
            }
            Ok(())
        }
        writeln!(w, "maxminqp 1")?;
        writeln!(w, "dim {}", self.dim)?;
        match self.domain {
            Domain::UnitBox => writeln!(w, "domain unit_box")?,
            Domain::PowerBall(p) => writeln!(w, "domain power_ball {p:e}")?,
        }
        writeln!(w, "pieces {}", self.pieces.len())?;
        for p in &self.pieces {
            writeln!(w, "piece rank {} constant {:e}", p.form.rank(), p.constant)?;
            row_dump(w, p.form.factor())?;
            let lin = CMat::from_fn(1, self.dim, |_, j| p.linear[j]);
            row_dump(w, &lin)?;
        }
        writeln!(w, "constraints {}", self.constraints.len())?;
        for c in &self.constraints {
            writeln!(w, "constraint rank {} bound {:e}", c.form.rank(), c.bound)?;
            row_dump(w, c.form.factor())?;
        }
        Ok(())
    }
}

fn infeasible(dim: usize, iterations: usize) -> ConicSolution {
    ConicSolution {
        x: CVec::zeros(dim),
        objective: f64::NEG_INFINITY,
        residuals: KktResiduals::default(),
        status: SolveStatus::Infeasible,
        iterations,
    }
}

fn trivial(p: &MaxMinQP) -> ConicSolution {
    let x = CVec::zeros(p.dim);
    ConicSolution {
        objective: p.value(&x),
        x,
        residuals: KktResiduals::default(),
        status: SolveStatus::Optimal,
        iterations: 0,
    }
}

/// Orthonormal basis of the common null space of the given factors, or
/// `None` when there is nothing to restrict.
fn null_space_basis(dim: usize, factors: &[&CMat]) -> Option<CMat> {
    let rows: usize = factors.iter().map(|f| f.nrows()).sum();
    if rows == 0 {
        return None;
    }
    let mut gram = CMat::zeros(dim, dim);
    for f in factors {
        gram += f.adjoint() * *f;
    }
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    if top == 0.0 {
        return None;
    }
    let keep: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] <= 1e-12 * top).collect();
    let mut basis = CMat::zeros(dim, keep.len());
    for (col, &k) in keep.iter().enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(k));
    }
    Some(basis)
}

/// Pulls `x` back into the feasible set by radial clipping. Interior-point
/// iterates can sit a hair outside after the change of variables.
fn clip_feasible(p: &MaxMinQP, x: &mut CVec) {
    match p.domain {
        Domain::UnitBox => {
            for v in x.iter_mut() {
                let r = v.norm();
                if r > 1.0 {
                    *v /= C64::new(r, 0.0);
                }
            }
        }
        Domain::PowerBall(pw) => {
            let e = x.norm_squared();
            if e > pw && e > 0.0 {
                *x *= C64::new((pw / e).sqrt(), 0.0);
            }
        }
    }
    let mut scale: f64 = 1.0;
    for c in &p.constraints {
        let q = c.form.quad(x);
        if q > c.bound && q > 0.0 {
            scale = scale.min((c.bound.max(0.0) / q).sqrt());
        }
    }
    if scale < 1.0 {
        *x *= C64::new(scale, 0.0);
    }
}

/// Solves `max_x min_k piece_k(x)` subject to the domain and side constraints.
pub fn solve(p: &MaxMinQP, settings: &SolverSettings) -> Result<ConicSolution, ConicError> {
    solve_with_floors(p, &[], settings)
}

/// Second pass over a solved problem: among points whose pieces all stay
/// within a small slack of `base.objective`, maximize the sum of the
/// pieces. Max-min problems often have a whole face of optimal points, and
/// an interior-point method returns one near its centre, which can give
/// away value on pieces that are not binding. Returns `None` when the pass
/// fails or ends below the floor.
pub fn refine(p: &MaxMinQP, base: &ConicSolution, settings: &SolverSettings) -> Result<Option<ConicSolution>, ConicError> {
    if base.status == SolveStatus::Infeasible || p.pieces.len() < 2 || !base.objective.is_finite() {
        return Ok(None);
    }
    let spread = p.pieces.iter().map(|q| q.constant.abs()).fold(base.objective.abs(), f64::max);
    let slack = REFINE_SLACK * spread.max(f64::MIN_POSITIVE);
    let floor = base.objective - slack;
    let factors: Vec<&CMat> = p.pieces.iter().map(|q| q.form.factor()).collect();
    let rows: usize = factors.iter().map(|f| f.nrows()).sum();
    let mut stacked = CMat::zeros(rows, p.dim);
    let mut at = 0;
    for f in &factors {
        stacked.rows_mut(at, f.nrows()).copy_from(*f);
        at += f.nrows();
    }
    let sum = QuadPiece {
        form: HermitianForm::from_factor(stacked)?,
        linear: p.pieces.iter().fold(CVec::zeros(p.dim), |acc, q| acc + &q.linear),
        constant: p.pieces.iter().map(|q| q.constant).sum(),
    };
    let stage = MaxMinQP {
        dim: p.dim,
        pieces: vec![sum],
        constraints: p.constraints.clone(),
        domain: p.domain,
    };
    let floors: Vec<(&QuadPiece, f64)> = p.pieces.iter().map(|q| (q, floor)).collect();
    // Stage one already validated the data, so an error here is numerical.
    let mut sol = match solve_with_floors(&stage, &floors, settings) {
        Ok(sol) if sol.status != SolveStatus::Infeasible => sol,
        _ => return Ok(None),
    };
    sol.objective = p.value(&sol.x);
    if sol.objective < floor || p.violation(&sol.x) > 0.0 {
        return Ok(None);
    }
    Ok(Some(sol))
}

/// Relative slack below the max-min value allowed during [`refine`].
const REFINE_SLACK: f64 = 1e-6;

/// Max-min solve with extra constraints `piece(x) >= floor`.
fn solve_with_floors(p: &MaxMinQP, floors: &[(&QuadPiece, f64)], settings: &SolverSettings) -> Result<ConicSolution, ConicError> {
    p.validate()?;
    if p.constraints.iter().any(|c| c.bound < 0.0) {
        return Ok(infeasible(p.dim, 0));
    }
    let radius = match p.domain {
        Domain::UnitBox => 1.0,
        Domain::PowerBall(pw) if pw < 0.0 => return Ok(infeasible(p.dim, 0)),
        Domain::PowerBall(pw) => pw.sqrt(),
    };
    if radius == 0.0 || p.dim == 0 {
        return Ok(trivial(p));
    }

    let zero_bound: Vec<&CMat> = p
        .constraints
        .iter()
        .filter(|c| c.bound == 0.0)
        .map(|c| c.form.factor())
        .collect();
    let basis = null_space_basis(p.dim, &zero_bound);
    if let Some(b) = &basis {
        if b.ncols() == 0 {
            return Ok(trivial(p));
        }
    }
    let red = basis.as_ref().map_or(p.dim, |b| b.ncols());
    let restrict = |m: &CMat| -> CMat {
        match &basis {
            Some(b) => m * b,
            None => m.clone(),
        }
    };
    let nz = 2 * red;
    let nv = nz + 1;

    // Normalized piece data.
    let c0 = p.pieces.iter().map(|q| q.constant).fold(f64::NEG_INFINITY, f64::max);
    let mut raw = Vec::with_capacity(p.pieces.len());
    let mut scale: f64 = 0.0;
    for q in &p.pieces {
        let l = real_embed_matrix(&restrict(q.form.factor())) * radius;
        let bt: CVec = match &basis {
            Some(b) => b.adjoint() * &q.linear,
            None => q.linear.clone(),
        };
        let bv = DVector::from_fn(nz, |k, _| if k < red { bt[k].re } else { bt[k - red].im }) * radius;
        scale = scale.max(l.norm_squared()).max(2.0 * bv.norm()).max((q.constant - c0).abs());
        raw.push((l, bv, q.constant - c0));
    }
    let mut raw_floors = Vec::with_capacity(floors.len());
    for (q, floor) in floors {
        let l = real_embed_matrix(&restrict(q.form.factor())) * radius;
        let bt: CVec = match &basis {
            Some(b) => b.adjoint() * &q.linear,
            None => q.linear.clone(),
        };
        let bv = DVector::from_fn(nz, |k, _| if k < red { bt[k].re } else { bt[k - red].im }) * radius;
        scale = scale.max(l.norm_squared()).max(2.0 * bv.norm()).max((q.constant - floor).abs());
        raw_floors.push((l, bv, q.constant - floor));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        scale = 1.0;
    }

    let mut cones = Vec::new();
    let mut g_rows: Vec<DMatrix<f64>> = Vec::new();
    let mut h_parts: Vec<DVector<f64>> = Vec::new();
    let mut t_start = f64::INFINITY;
    let rs = scale.sqrt();
    for (l, bv, c) in &raw {
        let chat = c / scale;
        t_start = t_start.min(chat);
        let k = l.nrows();
        let mut g = DMatrix::zeros(2 + k, nv);
        let mut h = DVector::zeros(2 + k);
        h[0] = (1.0 + chat) / 2.0;
        h[1] = (chat - 1.0) / 2.0;
        for j in 0..nz {
            g[(0, j)] = -bv[j] / scale;
            g[(1, j)] = -bv[j] / scale;
        }
        g[(0, nz)] = 0.5;
        g[(1, nz)] = 0.5;
        for i in 0..k {
            for j in 0..nz {
                g[(2 + i, j)] = -l[(i, j)] / rs;
            }
        }
        cones.push(2 + k);
        g_rows.push(g);
        h_parts.push(h);
    }
    // Same rotated cone as a piece, with the epigraph variable fixed at the floor.
    for (l, bv, c) in &raw_floors {
        let margin = c / scale;
        let k = l.nrows();
        let mut g = DMatrix::zeros(2 + k, nv);
        let mut h = DVector::zeros(2 + k);
        h[0] = (1.0 + margin) / 2.0;
        h[1] = (margin - 1.0) / 2.0;
        for j in 0..nz {
            g[(0, j)] = -bv[j] / scale;
            g[(1, j)] = -bv[j] / scale;
        }
        for i in 0..k {
            for j in 0..nz {
                g[(2 + i, j)] = -l[(i, j)] / rs;
            }
        }
        cones.push(2 + k);
        g_rows.push(g);
        h_parts.push(h);
    }
    for c in p.constraints.iter().filter(|c| c.bound > 0.0 && c.form.rank() > 0) {
        let l = real_embed_matrix(&restrict(c.form.factor())) * (radius / c.bound.sqrt());
        let k = l.nrows();
        let mut g = DMatrix::zeros(1 + k, nv);
        let mut h = DVector::zeros(1 + k);
        h[0] = 1.0;
        for i in 0..k {
            for j in 0..nz {
                g[(1 + i, j)] = -l[(i, j)];
            }
        }
        cones.push(1 + k);
        g_rows.push(g);
        h_parts.push(h);
    }
    match p.domain {
        Domain::UnitBox => {
            for n in 0..p.dim {
                let mut g = DMatrix::zeros(3, nv);
                let mut h = DVector::zeros(3);
                h[0] = 1.0;
                match &basis {
                    None => {
                        g[(1, n)] = -1.0;
                        g[(2, n + red)] = -1.0;
                    }
                    Some(b) => {
                        let row = real_embed_matrix(&b.rows(n, 1).into_owned());
                        for i in 0..2 {
                            for j in 0..nz {
                                g[(1 + i, j)] = -row[(i, j)];
                            }
                        }
                    }
                }
                cones.push(3);
                g_rows.push(g);
                h_parts.push(h);
            }
        }
        Domain::PowerBall(_) => {
            let mut g = DMatrix::zeros(1 + nz, nv);
            let mut h = DVector::zeros(1 + nz);
            h[0] = 1.0;
            for j in 0..nz {
                g[(1 + j, j)] = -1.0;
            }
            cones.push(1 + nz);
            g_rows.push(g);
            h_parts.push(h);
        }
    }

    let m: usize = cones.iter().sum();
    let mut g = DMatrix::zeros(m, nv);
    let mut h = DVector::zeros(m);
    let mut row = 0;
    for (gb, hb) in g_rows.iter().zip(&h_parts) {
        g.view_mut((row, 0), (gb.nrows(), nv)).copy_from(gb);
        h.rows_mut(row, hb.len()).copy_from(hb);
        row += gb.nrows();
    }
    let mut c = DVector::zeros(nv);
    c[nz] = -1.0;
    let mut x0 = DVector::zeros(nv);
    x0[nz] = t_start - 1.0;

    let socp = SocpProblem { c, g, h, cones };
    let res = solve_socp(
        &socp,
        &SocpSettings {
            tol: settings.tol,
            max_iter: settings.max_iter,
            ..SocpSettings::default()
        },
        Some(&x0),
    )?;

    let zhat = complex_from_real(&res.x.rows(0, nz).into_owned()) * C64::new(radius, 0.0);
    let mut x = match &basis {
        Some(b) => b * zhat,
        None => zhat,
    };
    clip_feasible(p, &mut x);
    Ok(ConicSolution {
        objective: p.value(&x),
        x,
        residuals: KktResiduals {
            primal: res.primal_residual,
            dual: res.dual_residual,
            gap: res.gap,
        },
        status: match res.status {
            SocpStatus::Optimal => SolveStatus::Optimal,
            SocpStatus::MaxIter | SocpStatus::Stalled => SolveStatus::MaxIter,
        },
        iterations: res.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn unconstrained_peak_inside_box() {
        // -|x|^2 + 2 Re(b^* x): maximum at x = b when |b| <= 1.
        let b = CVec::from_vec(vec![c(0.3, -0.4), c(-0.2, 0.1)]);
        let p = MaxMinQP {
            dim: 2,
            pieces: vec![QuadPiece {
                form: HermitianForm::from_dense(&CMat::identity(2, 2)).unwrap(),
                linear: b.clone(),
                constant: 0.5,
            }],
            constraints: vec![],
            domain: Domain::UnitBox,
        };
        let s = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        for k in 0..2 {
            // The objective is flat at the peak, so x is only accurate to about sqrt(tol).
            assert_relative_eq!(s.x[k].re, b[k].re, epsilon = 1e-4);
            assert_relative_eq!(s.x[k].im, b[k].im, epsilon = 1e-4);
        }
        assert_relative_eq!(s.objective, 0.5 + b.norm_squared(), epsilon = 1e-9);
    }

    #[test]
    fn linear_piece_on_ball_aligns_with_direction() {
        let b = CVec::from_vec(vec![c(1.0, 1.0), c(0.0, -2.0)]);
        let p = MaxMinQP {
            dim: 2,
            pieces: vec![QuadPiece {
                form: HermitianForm::zero(2),
                linear: b.clone(),
                constant: 0.0,
            }],
            constraints: vec![],
            domain: Domain::PowerBall(4.0),
        };
        let s = solve(&p, &SolverSettings::default()).unwrap();
        let expect = &b * C64::new(2.0 / b.norm(), 0.0);
        for k in 0..2 {
            assert_relative_eq!(s.x[k].re, expect[k].re, epsilon = 1e-6);
            assert_relative_eq!(s.x[k].im, expect[k].im, epsilon = 1e-6);
        }
    }

    #[test]
    fn negative_bound_is_infeasible() {
        let p = MaxMinQP {
            dim: 1,
            pieces: vec![QuadPiece {
                form: HermitianForm::zero(1),
                linear: CVec::zeros(1),
                constant: 0.0,
            }],
            constraints: vec![QuadConstraint {
                form: HermitianForm::from_dense(&CMat::identity(1, 1)).unwrap(),
                bound: -1.0,
            }],
            domain: Domain::UnitBox,
        };
        assert_eq!(solve(&p, &SolverSettings::default()).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn zero_bound_restricts_to_null_space() {
        // Maximize 2 Re(x1 + x2) with x1 forced to zero.
        let mut a = CMat::zeros(2, 2);
        a[(0, 0)] = c(1.0, 0.0);
        let p = MaxMinQP {
            dim: 2,
            pieces: vec![QuadPiece {
                form: HermitianForm::zero(2),
                linear: CVec::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]),
                constant: 0.0,
            }],
            constraints: vec![QuadConstraint {
                form: HermitianForm::from_dense(&a).unwrap(),
                bound: 0.0,
            }],
            domain: Domain::UnitBox,
        };
        let s = solve(&p, &SolverSettings::default()).unwrap();
        assert!(s.x[0].norm() < 1e-12);
        assert_relative_eq!(s.x[1].re, 1.0, epsilon = 1e-6);
        assert_relative_eq!(s.objective, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn refine_pushes_slack_pieces_up() {
        // min(0, 2 Re(x1 + x2)) is zero on a whole half of the box.
        let p = MaxMinQP {
            dim: 2,
            pieces: vec![
                QuadPiece {
                    form: HermitianForm::zero(2),
                    linear: CVec::zeros(2),
                    constant: 0.0,
                },
                QuadPiece {
                    form: HermitianForm::zero(2),
                    linear: CVec::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]),
                    constant: 0.0,
                },
            ],
            constraints: vec![],
            domain: Domain::UnitBox,
        };
        let settings = SolverSettings::default();
        let base = solve(&p, &settings).unwrap();
        assert_relative_eq!(base.objective, 0.0, epsilon = 1e-6);
        let r = refine(&p, &base, &settings).unwrap().expect("refine should succeed");
        assert!(r.objective >= base.objective - 1e-6);
        assert_relative_eq!(r.x[0].re, 1.0, epsilon = 1e-5);
        assert_relative_eq!(r.x[1].re, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn dump_has_header() {
        let p = MaxMinQP {
            dim: 1,
            pieces: vec![QuadPiece {
                form: HermitianForm::zero(1),
                linear: CVec::zeros(1),
                constant: 1.0,
            }],
            constraints: vec![],
            domain: Domain::PowerBall(2.0),
        };
        let mut buf = Vec::new();
        p.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("maxminqp 1\ndim 1\ndomain power_ball"));
    }
}
