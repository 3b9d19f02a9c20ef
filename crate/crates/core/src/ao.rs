//! Alternating optimization over receive filters, precoders and RIS phases.

use std::time::Instant;

use log::{debug, info};
use rand::Rng;
use ris_conic::{refine, solve, ConicSolution, Domain, MaxMinQP, QuadConstraint, SolveStatus, SolverSettings};
use serde::{Deserialize, Serialize};

use crate::channel::{gaussian_matrix, matrix_rng, ChannelSet};
use crate::discrete::project_mask;
use crate::objective::{
    build_joint_precoder_quadratics, build_precoder_quadratics, build_theta_quadratics, devectorize, mask_constraints, max_mask_power, objective_f,
    rates, total_power, update_filters, vectorize, AuxiliaryFilters,
};
use crate::scene::Scenario;
use crate::{BeamError, CMat, CVec, C64};

pub use crate::objective::objective_f as surrogate_objective;

/// RNG stream used for initial points; channel matrices use streams `0..=N`.
const INIT_STREAM: u64 = 1 << 20;

#[derive(Clone, Copy, Debug)]
pub struct AoOptions {
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub mask_enabled: bool,
    /// Follow each max-min sub-problem with a pass that raises the
    /// non-binding rates while holding the minimum.
    pub tie_break: bool,
    pub precoder_update: PrecoderUpdate,
    pub solver: SolverSettings,
}

/// How the precoders are refreshed inside one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderUpdate {
    /// One receiver at a time, each within the budget the others leave.
    Sequential,
    /// All precoders in one problem under the total budget.
    Joint,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_outer_iters: 100,
            mask_enabled: false,
            tie_break: false,
            precoder_update: PrecoderUpdate::Joint,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    /// The objective dropped; the previous iterate was restored.
    RolledBack,
    IterationCap,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub theta: CVec,
    pub f: Vec<CMat>,
    pub objective_trace: Vec<f64>,
    pub rates: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub stop: StopReason,
}

impl Solution {
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn total_power(&self) -> f64 {
        total_power(&self.f)
    }
}

/// Random unit-modulus phases and random precoders carrying `P_max / 2`
/// split equally across receivers.
pub fn initial_point(s: &Scenario, cs: &ChannelSet) -> (CVec, Vec<CMat>) {
    let mut rng = matrix_rng(s.seed, INIT_STREAM);
    let theta = CVec::from_fn(cs.n_ris(), |_, _| {
        C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
    });
    let share = s.P_max_w / 2.0 / cs.n_receivers() as f64;
    let f = (0..cs.n_receivers())
        .map(|i| {
            let m = gaussian_matrix(cs.n_t(), cs.n_r(i), &mut rng);
            let p = m.norm_squared();
            m * C64::new((share / p).sqrt(), 0.0)
        })
        .collect();
    (theta, f)
}

/// Re-optimizes precoder `i` with the other precoders fixed. Keeps the old
/// precoder unless the solver strictly improves the sub-problem objective.
fn precoder_step(
    cs: &ChannelSet,
    theta: &CVec,
    f: &mut [CMat],
    filters: &AuxiliaryFilters,
    sigma2: f64,
    p_max: f64,
    i: usize,
    opts: &AoOptions,
) -> Result<bool, BeamError> {
    let q = match build_precoder_quadratics(filters, cs, theta, f, sigma2, p_max, i) {
        Ok(q) => q,
        Err(BeamError::Infeasible(msg)) => {
            debug!("skipping precoder {i}: {msg}");
            return Ok(false);
        }
        Err(e) => return Err(e),
    };
    let qp = MaxMinQP {
        dim: cs.n_t() * f[i].ncols(),
        pieces: q.pieces,
        constraints: vec![],
        domain: Domain::PowerBall(q.residual_power),
    };
    let stage = format!("precoder {i}");
    let candidates = solve_sub(&qp, opts, &stage)?;
    let current = qp.value(&vectorize(&f[i]));
    if let Some(sol) = candidates.into_iter().find(|c| c.objective > current) {
        f[i] = devectorize(&sol.x, cs.n_t(), f[i].ncols())?;
        return Ok(true);
    }
    Ok(false)
}

/// Re-optimizes all precoders together under the total budget.
fn joint_precoder_step(
    cs: &ChannelSet,
    theta: &CVec,
    f: &mut [CMat],
    filters: &AuxiliaryFilters,
    sigma2: f64,
    p_max: f64,
    opts: &AoOptions,
) -> Result<bool, BeamError> {
    let pieces = build_joint_precoder_quadratics(filters, cs, theta, f, sigma2)?;
    let stacked = CVec::from_iterator(
        pieces[0].linear.len(),
        f.iter().flat_map(|m| vectorize(m).iter().copied().collect::<Vec<_>>()),
    );
    let qp = MaxMinQP {
        dim: stacked.len(),
        pieces,
        constraints: vec![],
        domain: Domain::PowerBall(p_max),
    };
    let candidates = solve_sub(&qp, opts, "joint precoder")?;
    let current = qp.value(&stacked);
    if let Some(sol) = candidates.into_iter().find(|c| c.objective > current) {
        let mut at = 0;
        for m in f.iter_mut() {
            let len = cs.n_t() * m.ncols();
            *m = devectorize(&sol.x.rows(at, len).into_owned(), cs.n_t(), m.ncols())?;
            at += len;
        }
        return Ok(true);
    }
    Ok(false)
}

/// One precoder update per `opts.precoder_update`; returns the refreshed filters.
pub(crate) fn update_precoders(
    cs: &ChannelSet,
    theta: &CVec,
    f: &mut [CMat],
    mut filters: AuxiliaryFilters,
    sigma2: f64,
    p_max: f64,
    opts: &AoOptions,
) -> Result<AuxiliaryFilters, BeamError> {
    match opts.precoder_update {
        PrecoderUpdate::Sequential => {
            for i in 0..cs.n_receivers() {
                if precoder_step(cs, theta, f, &filters, sigma2, p_max, i, opts)? {
                    filters = update_filters(cs, theta, f, sigma2)?;
                }
            }
        }
        PrecoderUpdate::Joint => {
            if joint_precoder_step(cs, theta, f, &filters, sigma2, p_max, opts)? {
                filters = update_filters(cs, theta, f, sigma2)?;
            }
        }
    }
    Ok(filters)
}

/// Solves a sub-problem; with tie-breaking on, the refined point comes first.
fn solve_sub(qp: &MaxMinQP, opts: &AoOptions, stage: &str) -> Result<Vec<ConicSolution>, BeamError> {
    let wrap = |e| BeamError::Solver {
        stage: stage.to_string(),
        source: e,
    };
    let base = solve(qp, &opts.solver).map_err(wrap)?;
    if base.status == SolveStatus::Infeasible {
        return Err(BeamError::Infeasible(format!("{stage} sub-problem")));
    }
    let mut out = Vec::with_capacity(2);
    if opts.tie_break {
        if let Some(r) = refine(qp, &base, &opts.solver).map_err(wrap)? {
            out.push(r);
        }
    }
    out.push(base);
    Ok(out)
}

/// Re-optimizes the phases with precoders fixed, under the relaxed
/// `|theta_n| <= 1` and the mask constraints when given.
pub(crate) fn theta_step(
    cs: &ChannelSet,
    theta: &mut CVec,
    f: &[CMat],
    filters: &AuxiliaryFilters,
    sigma2: f64,
    mask: Option<(&[f64], f64)>,
    opts: &AoOptions,
) -> Result<bool, BeamError> {
    let (angles, rho) = mask.unwrap_or((&[], 0.0));
    let tq = build_theta_quadratics(filters, cs, f, sigma2, angles)?;
    let qp = MaxMinQP {
        dim: cs.n_ris(),
        pieces: tq.pieces,
        constraints: tq
            .mask
            .into_iter()
            .map(|m| QuadConstraint { form: m.form, bound: rho })
            .collect(),
        domain: Domain::UnitBox,
    };
    let tol = 1e-9 * rho.max(f64::MIN_POSITIVE);
    let mut candidates = Vec::new();
    if !qp.constraints.is_empty() {
        // An optimum of the unmasked problem that already meets the mask is
        // optimal for the masked one, and keeps the path identical while the
        // mask is inactive.
        let free = MaxMinQP {
            constraints: vec![],
            ..qp.clone()
        };
        let sols = solve_sub(&free, opts, "phase")?;
        if qp.violation(&sols[0].x) <= tol {
            candidates = sols.into_iter().filter(|c| qp.violation(&c.x) <= tol).collect();
        }
    }
    if candidates.is_empty() {
        candidates = solve_sub(&qp, opts, "phase")?;
    }
    let current_ok = qp.violation(theta) <= tol;
    if !current_ok {
        *theta = candidates.swap_remove(0).x;
        return Ok(true);
    }
    let current = qp.value(theta);
    if let Some(sol) = candidates.into_iter().find(|c| c.objective > current) {
        *theta = sol.x;
        return Ok(true);
    }
    Ok(false)
}

pub fn optimize_uacp(s: &Scenario, cs: &ChannelSet, opts: &AoOptions) -> Result<Solution, BeamError> {
    let (mut theta, f) = initial_point(s, cs);
    if opts.mask_enabled {
        let angles = s.mask_spec().grid();
        theta = project_mask(&theta, &mask_constraints(cs, &f, &angles), s.rho_w);
    }
    optimize_uacp_from(s, cs, opts, theta, f)
}

/// Runs the alternating loop from a given starting point.
pub fn optimize_uacp_from(
    s: &Scenario,
    cs: &ChannelSet,
    opts: &AoOptions,
    mut theta: CVec,
    mut f: Vec<CMat>,
) -> Result<Solution, BeamError> {
    if !(opts.epsilon > 0.0) {
        return Err(BeamError::InvalidScenario("epsilon must be positive".into()));
    }
    let start = Instant::now();
    let sigma2 = s.sigma2_w;
    let angles = if opts.mask_enabled { s.mask_spec().grid() } else { Vec::new() };
    let mask = opts.mask_enabled.then_some((angles.as_slice(), s.rho_w));
    if total_power(&f) > s.P_max_w * (1.0 + 1e-12) {
        return Err(BeamError::Infeasible("initial precoders exceed the power budget".into()));
    }
    if opts.mask_enabled && max_mask_power(&theta, &mask_constraints(cs, &f, &angles)) > s.rho_w * (1.0 + 1e-9) {
        return Err(BeamError::Infeasible("initial phases violate the mask".into()));
    }

    let mut filters = update_filters(cs, &theta, &f, sigma2)?;
    let mut f_prev = objective_f(&filters, cs, &theta, &f, sigma2)?;
    let mut trace = vec![f_prev];
    let mut stop = StopReason::IterationCap;
    let mut iterations = 0;
    for t in 1..=opts.max_outer_iters {
        let saved = (theta.clone(), f.clone());
        filters = update_precoders(cs, &theta, &mut f, filters, sigma2, s.P_max_w, opts)?;
        theta_step(cs, &mut theta, &f, &filters, sigma2, mask, opts)?;
        filters = update_filters(cs, &theta, &f, sigma2)?;
        let f_new = objective_f(&filters, cs, &theta, &f, sigma2)?;
        iterations = t;
        if opts.mask_enabled || log::log_enabled!(log::Level::Debug) {
            let peak = if opts.mask_enabled {
                max_mask_power(&theta, &mask_constraints(cs, &f, &angles))
            } else {
                0.0
            };
            debug!("ao iter={t} f={f_new:.12e} max_mask_w={peak:.6e}");
        }
        if f_new < f_prev {
            (theta, f) = saved;
            stop = StopReason::RolledBack;
            break;
        }
        trace.push(f_new);
        if (f_new - f_prev).abs() <= opts.epsilon {
            stop = StopReason::Converged;
            break;
        }
        f_prev = f_new;
    }
    let rates = rates(cs, &theta, &f, sigma2)?;
    info!(
        "ao finished: iterations={iterations} stop={stop:?} min_rate={:.6e}",
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
    use crate::channel::assemble_channels;
    use crate::scene::build_geometry;

    fn small_scenario() -> Scenario {
        let mut s = Scenario::reference();
        s.ris_rows = 4;
        s.ris_cols = 4;
        s.N_t = 4;
        s
    }

    #[test]
    fn initial_point_uses_half_the_budget() {
        let s = small_scenario();
        let cs = assemble_channels(&s, &build_geometry(&s).unwrap());
        let (theta, f) = initial_point(&s, &cs);
        assert!(theta.iter().all(|t| (t.norm() - 1.0).abs() < 1e-12));
        assert!((total_power(&f) - s.P_max_w / 2.0).abs() < 1e-12);
    }

    #[test]
    fn trace_is_monotone_and_power_feasible() {
        let s = small_scenario();
        let cs = assemble_channels(&s, &build_geometry(&s).unwrap());
        let opts = AoOptions {
            max_outer_iters: 15,
            ..AoOptions::default()
        };
        let sol = optimize_uacp(&s, &cs, &opts).unwrap();
        assert!(sol.objective_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(sol.total_power() <= s.P_max_w * (1.0 + 1e-9));
        assert!(sol.theta.iter().all(|t| t.norm() <= 1.0 + 1e-12));
        assert!(sol.min_rate() >= sol.objective_trace[0]);
    }
}
