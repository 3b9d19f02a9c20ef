//! Greedy coordinate search over discrete phase levels under the mask.

use std::f64::consts::TAU;
use std::time::Instant;

use log::{debug, info, warn};

use crate::ao::{initial_point, optimize_uacp, update_precoders, AoOptions, Solution, StopReason};
use crate::channel::ChannelSet;
use crate::objective::{
    build_theta_quadratics, mask_constraints, max_mask_power, objective_f, rates, update_filters, MaskConstraint,
    ThetaQuadratics,
};
use crate::scene::Scenario;
use crate::{BeamError, CMat, CVec, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Continuous-phase solution with the mask, normalized to unit modulus.
    FromUacp,
    Random,
}

#[derive(Clone, Copy, Debug)]
pub struct GreedyOptions {
    pub levels: usize,
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub max_outer_iters: usize,
    pub init_mode: InitMode,
    /// Settings of the continuous warm start and of the precoder solves.
    pub ao: AoOptions,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            levels: 4,
            epsilon: 1e-8,
            max_sweeps: 50,
            max_outer_iters: 20,
            init_mode: InitMode::FromUacp,
            ao: AoOptions {
                mask_enabled: true,
                ..AoOptions::default()
            },
        }
    }
}

/// `exp(j 2 pi l / L)` for `l = 0..L`, with components that are zero or
/// unit in exact arithmetic snapped to exact values.
pub fn codebook(levels: usize) -> Vec<C64> {
    let snap = |x: f64| {
        if x.abs() < 1e-12 {
            0.0
        } else if (x.abs() - 1.0).abs() < 1e-12 {
            x.signum()
        } else {
            x
        }
    };
    (0..levels)
        .map(|l| {
            let z = C64::from_polar(1.0, TAU * l as f64 / levels as f64);
            C64::new(snap(z.re), snap(z.im))
        })
        .collect()
}

/// Index of the codebook entry closest in phase.
pub fn nearest_level(z: C64, levels: usize) -> usize {
    let steps = z.arg().rem_euclid(TAU) * levels as f64 / TAU;
    (steps.round() as usize) % levels
}

/// Scales `theta` so that the largest mask power equals `rho`; unchanged when already feasible.
pub fn project_mask(theta: &CVec, mask: &[MaskConstraint], rho: f64) -> CVec {
    let peak = max_mask_power(theta, mask);
    if peak <= rho {
        return theta.clone();
    }
    theta * C64::new((rho / peak).sqrt(), 0.0)
}

/// True when every mask probe receives at most `rho`.
pub fn indicator(theta: &CVec, mask: &[MaskConstraint], rho: f64) -> bool {
    mask.iter().all(|m| m.form.quad(theta) <= rho)
}

/// Mask check straight from precoders and probe angles.
pub fn indicator_for(cs: &ChannelSet, theta: &CVec, f: &[CMat], angles: &[f64], rho: f64) -> bool {
    indicator(theta, &mask_constraints(cs, f, angles), rho)
}

/// Scales all precoders by a common factor so the peak mask power is at most `rho`.
pub fn scale_precoders_to_mask(cs: &ChannelSet, theta: &CVec, f: &mut [CMat], angles: &[f64], rho: f64) {
    let peak = max_mask_power(theta, &mask_constraints(cs, f, angles));
    if peak > rho {
        let a = C64::new((rho / peak).sqrt() * (1.0 - 1e-12), 0.0);
        for m in f.iter_mut() {
            *m *= a;
        }
    }
}

/// Incrementally maintained products of the current phases with every
/// piece factor and mask factor.
struct SweepState<'a> {
    q: &'a ThetaQuadratics,
    piece_prod: Vec<CVec>,
    piece_lin: Vec<f64>,
    mask_prod: Vec<CVec>,
}

impl<'a> SweepState<'a> {
    fn new(q: &'a ThetaQuadratics, theta: &CVec) -> Self {
        Self {
            q,
            piece_prod: q.pieces.iter().map(|p| p.form.factor() * theta).collect(),
            piece_lin: q.pieces.iter().map(|p| 2.0 * p.linear.dotc(theta).re).collect(),
            mask_prod: q.mask.iter().map(|m| m.form.factor() * theta).collect(),
        }
    }

    fn objective_with(&self, n: usize, delta: C64) -> f64 {
        let mut best = f64::INFINITY;
        for (k, p) in self.q.pieces.iter().enumerate() {
            let col = p.form.factor().column(n);
            let quad: f64 = self.piece_prod[k].iter().zip(col.iter()).map(|(u, c)| (u + delta * c).norm_sqr()).sum();
            let lin = self.piece_lin[k] + 2.0 * (p.linear[n].conj() * delta).re;
            best = best.min(-quad + lin + p.constant);
        }
        best
    }

    fn feasible_with(&self, n: usize, delta: C64, rho: f64) -> bool {
        self.q.mask.iter().zip(&self.mask_prod).all(|(m, z)| {
            let col = m.form.factor().column(n);
            z.iter().zip(col.iter()).map(|(u, c)| (u + delta * c).norm_sqr()).sum::<f64>() <= rho
        })
    }

    fn peak_with(&self, n: usize, delta: C64) -> f64 {
        self.q
            .mask
            .iter()
            .zip(&self.mask_prod)
            .map(|(m, z)| {
                let col = m.form.factor().column(n);
                z.iter().zip(col.iter()).map(|(u, c)| (u + delta * c).norm_sqr()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn apply(&mut self, n: usize, delta: C64) {
        for (k, p) in self.q.pieces.iter().enumerate() {
            let col = p.form.factor().column(n);
            for (u, c) in self.piece_prod[k].iter_mut().zip(col.iter()) {
                *u += delta * c;
            }
            self.piece_lin[k] += 2.0 * (p.linear[n].conj() * delta).re;
        }
        for (m, z) in self.q.mask.iter().zip(self.mask_prod.iter_mut()) {
            let col = m.form.factor().column(n);
            for (u, c) in z.iter_mut().zip(col.iter()) {
                *u += delta * c;
            }
        }
    }
}

/// Puts every element that is still off the codebook onto it. Each one
/// takes the best-objective level that keeps the peak mask power at or
/// below the larger of `rho` and the current peak; when no level does, the
/// level with the lowest peak. Returns the number of elements moved.
pub fn settle_off_codebook(q: &ThetaQuadratics, theta: &mut CVec, rho: f64, levels: usize) -> usize {
    let book = codebook(levels);
    let mut state = SweepState::new(q, theta);
    let mut moved = 0;
    for n in 0..theta.len() {
        if book.contains(&theta[n]) {
            continue;
        }
        let cap = state.peak_with(n, C64::new(0.0, 0.0)).max(rho);
        let scored: Vec<(f64, f64, C64)> = book
            .iter()
            .map(|&c| {
                let d = c - theta[n];
                (state.peak_with(n, d), state.objective_with(n, d), c)
            })
            .collect();
        let pick = scored
            .iter()
            .filter(|(peak, _, _)| *peak <= cap)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .or_else(|| scored.iter().min_by(|a, b| a.0.total_cmp(&b.0)))
            .map(|&(_, _, c)| c)
            .unwrap_or(book[nearest_level(theta[n], levels)]);
        state.apply(n, pick - theta[n]);
        theta[n] = pick;
        moved += 1;
    }
    moved
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassOutcome {
    pub objective: f64,
    pub sweeps: usize,
    pub moves: usize,
    pub on_codebook: bool,
}

fn value_of(q: &ThetaQuadratics, theta: &CVec) -> f64 {
    q.pieces.iter().map(|p| p.value(theta)).fold(f64::INFINITY, f64::min)
}

/// Sweeps the elements in order, moving each to the best mask-feasible
/// codebook entry, until a sweep changes nothing or the objective settles
/// with every element on the codebook.
///
/// Elements already on the codebook only move when the objective does not
/// drop, because their current value is one of the candidates. Elements
/// off the codebook are pulled onto it even at a loss.
pub fn greedy_pass(q: &ThetaQuadratics, theta: &mut CVec, rho: f64, levels: usize, epsilon: f64, max_sweeps: usize) -> PassOutcome {
    let book = codebook(levels);
    let mut on_book: Vec<bool> = theta.iter().map(|t| book.contains(t)).collect();
    let mut f_prev = value_of(q, theta);
    let mut total_moves = 0;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut state = SweepState::new(q, theta);
        let mut moves = 0;
        for n in 0..theta.len() {
            let mut best: Option<(f64, C64)> = None;
            for &cand in &book {
                let delta = cand - theta[n];
                if !state.feasible_with(n, delta, rho) {
                    continue;
                }
                let v = state.objective_with(n, delta);
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, cand));
                }
            }
            if let Some((_, cand)) = best {
                if cand != theta[n] {
                    state.apply(n, cand - theta[n]);
                    theta[n] = cand;
                    on_book[n] = true;
                    moves += 1;
                }
            }
        }
        total_moves += moves;
        let f_now = value_of(q, theta);
        let settled = (f_now - f_prev).abs() < epsilon && on_book.iter().all(|&b| b);
        f_prev = f_now;
        if moves == 0 || settled {
            break;
        }
    }
    PassOutcome {
        objective: f_prev,
        sweeps,
        moves: total_moves,
        on_codebook: on_book.iter().all(|&b| b),
    }
}

fn unit_modulus(theta: &CVec) -> CVec {
    theta.map(|t| {
        let r = t.norm();
        if r > 0.0 {
            t / r
        } else {
            C64::new(1.0, 0.0)
        }
    })
}

pub fn greedy_uadp(s: &Scenario, cs: &ChannelSet, opts: &GreedyOptions) -> Result<Solution, BeamError> {
    let (theta0, f0) = match opts.init_mode {
        InitMode::FromUacp => {
            let warm = optimize_uacp(
                s,
                cs,
                &AoOptions {
                    mask_enabled: true,
                    ..opts.ao
                },
            )?;
            (warm.theta, warm.f)
        }
        InitMode::Random => initial_point(s, cs),
    };
    greedy_uadp_from(s, cs, opts, theta0, f0)
}

/// Alternates greedy phase passes with precoder updates from a given start.
pub fn greedy_uadp_from(
    s: &Scenario,
    cs: &ChannelSet,
    opts: &GreedyOptions,
    theta0: CVec,
    f0: Vec<CMat>,
) -> Result<Solution, BeamError> {
    if opts.levels == 0 {
        return Err(BeamError::InvalidScenario("phase levels must be positive".into()));
    }
    let start = Instant::now();
    let sigma2 = s.sigma2_w;
    let rho = s.rho_w;
    let angles = s.mask_spec().grid();

    let mut f = f0;
    let mut theta = project_mask(&unit_modulus(&theta0), &mask_constraints(cs, &f, &angles), rho);
    let mut filters = update_filters(cs, &theta, &f, sigma2)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut stop = StopReason::IterationCap;
    let mut iterations = 0;

    for t in 1..=opts.max_outer_iters {
        let saved = (theta.clone(), f.clone());
        let q = build_theta_quadratics(&filters, cs, &f, sigma2, &angles)?;
        let pass = greedy_pass(&q, &mut theta, rho, opts.levels, opts.epsilon, opts.max_sweeps);
        debug!(
            "greedy pass {t}: sweeps={} moves={} objective={:.12e} on_codebook={}",
            pass.sweeps, pass.moves, pass.objective, pass.on_codebook
        );
        if !pass.on_codebook {
            let stuck = settle_off_codebook(&q, &mut theta, rho, opts.levels);
            warn!("{stuck} elements had no mask-feasible level; placed them and backed off precoder power");
            scale_precoders_to_mask(cs, &theta, &mut f, &angles, rho);
        }
        if !indicator_for(cs, &theta, &f, &angles, rho) {
            scale_precoders_to_mask(cs, &theta, &mut f, &angles, rho);
        }
        filters = update_filters(cs, &theta, &f, sigma2)?;
        update_precoders(cs, &theta, &mut f, filters, sigma2, s.P_max_w, &opts.ao)?;
        scale_precoders_to_mask(cs, &theta, &mut f, &angles, rho);
        filters = update_filters(cs, &theta, &f, sigma2)?;
        let f_new = objective_f(&filters, cs, &theta, &f, sigma2)?;
        iterations = t;
        if let Some(&f_prev) = trace.last() {
            if f_new < f_prev {
                (theta, f) = saved;
                stop = StopReason::RolledBack;
                break;
            }
            trace.push(f_new);
            if (f_new - f_prev).abs() < opts.epsilon {
                stop = StopReason::Converged;
                break;
            }
        } else {
            trace.push(f_new);
        }
    }
    if !indicator_for(cs, &theta, &f, &angles, rho) {
        return Err(BeamError::Infeasible("discrete phases violate the mask".into()));
    }
    let rates = rates(cs, &theta, &f, sigma2)?;
    info!(
        "greedy finished: iterations={iterations} stop={stop:?} min_rate={:.6e}",
        rates.iter().copied().fold(f64::INFINITY, f64::min)
    );
    Ok(Solution {
        theta,
        f,
        objective_trace: trace,
        rates,
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ris_conic::HermitianForm;

    #[test]
    fn codebook_entries_are_exact() {
        let b = codebook(4);
        assert_eq!(b, vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)]);
        assert_eq!(codebook(1), vec![C64::new(1.0, 0.0)]);
        assert_eq!(codebook(2)[1], C64::new(-1.0, 0.0));
        assert_eq!(nearest_level(C64::new(0.1, 0.9), 4), 1);
        assert_eq!(nearest_level(C64::new(0.9, -0.1), 4), 0);
    }

    fn single_mask(rho_scale: f64) -> Vec<MaskConstraint> {
        let factor = CMat::from_row_slice(1, 2, &[C64::new(1.0, 0.0), C64::new(0.5, 0.5)]);
        vec![MaskConstraint {
            angle_deg: 0.0,
            form: HermitianForm::from_factor(factor * C64::new(rho_scale, 0.0)).unwrap(),
        }]
    }

    #[test]
    fn projection_scales_to_the_threshold() {
        let mask = single_mask(1.0);
        let theta = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let peak = max_mask_power(&theta, &mask);
        let p = project_mask(&theta, &mask, peak / 4.0);
        assert!((p[0].re - 0.5).abs() < 1e-15);
        assert!((max_mask_power(&p, &mask) - peak / 4.0).abs() <= 1e-12 * peak);
        assert_eq!(project_mask(&theta, &mask, peak * 2.0), theta);
        assert!(indicator(&p, &mask, peak / 4.0));
        assert!(!indicator(&(&p * C64::new(1.001, 0.0)), &mask, peak / 4.0));
        assert!(indicator(&theta, &[], 0.0));
    }

    fn linear_problem(linear: [C64; 2], mask: Vec<MaskConstraint>) -> ThetaQuadratics {
        ThetaQuadratics {
            pieces: vec![ris_conic::QuadPiece {
                form: HermitianForm::from_factor(CMat::zeros(1, 2)).unwrap(),
                linear: CVec::from_vec(linear.to_vec()),
                constant: 0.0,
            }],
            mask,
        }
    }

    #[test]
    fn greedy_finds_the_separable_optimum() {
        let one = C64::new(1.0, 0.0);
        let q = linear_problem([C64::new(0.0, 1.0), -one], vec![]);
        let mut theta = CVec::from_element(2, one);
        let out = greedy_pass(&q, &mut theta, 1.0, 4, 1e-12, 10);
        assert_eq!(theta.as_slice(), &[C64::new(0.0, 1.0), -one]);
        assert_eq!(out.objective, 4.0);
        assert!(out.on_codebook);
    }

    #[test]
    fn settling_prefers_the_objective_within_the_peak_cap() {
        let one = C64::new(1.0, 0.0);
        let q = linear_problem([C64::new(0.0, 0.0), one], vec![]);
        let mut theta = CVec::from_vec(vec![one, C64::new(0.3, 0.2)]);
        assert_eq!(settle_off_codebook(&q, &mut theta, 1.0, 4), 1);
        assert_eq!(theta.as_slice(), &[one, one]);
    }

    #[test]
    fn settling_keeps_the_peak_from_growing() {
        let one = C64::new(1.0, 0.0);
        // Peak |theta_1 + theta_2|^2: levels 1, j, -1, -j give 4, 2, 0, 2;
        // the current point gives 1.73, so only -1 stays under the cap.
        let mask = vec![MaskConstraint {
            angle_deg: 0.0,
            form: HermitianForm::from_factor(CMat::from_element(1, 2, one)).unwrap(),
        }];
        let q = linear_problem([C64::new(0.0, 0.0), one], mask);
        let mut theta = CVec::from_vec(vec![one, C64::new(0.3, 0.2)]);
        assert_eq!(settle_off_codebook(&q, &mut theta, 1.0, 4), 1);
        assert_eq!(theta[1], -one);
        assert!(max_mask_power(&theta, &q.mask) <= 1.0);
    }
}
