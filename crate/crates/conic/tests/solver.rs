use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_conic::form::{complex_from_real, real_embed_vec};
use ris_conic::{solve, CMat, CVec, Domain, HermitianForm, MaxMinQP, QuadConstraint, QuadPiece, SolveStatus, SolverSettings, C64};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_problem(seed: u64, dim: usize, pieces: usize, domain: Domain) -> MaxMinQP {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pieces = (0..pieces)
        .map(|_| {
            let l = random_matrix(&mut rng, 2, dim);
            QuadPiece {
                form: HermitianForm::from_factor(l).unwrap(),
                linear: random_vec(&mut rng, dim) * C64::new(2.0, 0.0),
                constant: rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    MaxMinQP {
        dim,
        pieces,
        constraints: vec![],
        domain,
    }
}

/// Projected subgradient ascent on the min of the pieces over the unit box.
fn subgradient_oracle(p: &MaxMinQP, iters: usize) -> f64 {
    let dense: Vec<CMat> = p.pieces.iter().map(|q| q.form.to_dense()).collect();
    let mut x = CVec::zeros(p.dim);
    let mut best = p.value(&x);
    for t in 1..=iters {
        let (k, _) = p
            .pieces
            .iter()
            .enumerate()
            .map(|(k, q)| (k, q.value(&x)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let grad = (&p.pieces[k].linear - &dense[k] * &x) * C64::new(2.0, 0.0);
        let step = 0.05 / (t as f64).sqrt();
        x += grad * C64::new(step, 0.0);
        for v in x.iter_mut() {
            let r = v.norm();
            if r > 1.0 {
                *v /= C64::new(r, 0.0);
            }
        }
        best = best.max(p.value(&x));
    }
    best
}

#[test]
fn matches_subgradient_oracle_on_six_dims() {
    for seed in 0..4 {
        let p = random_problem(seed, 6, 3, Domain::UnitBox);
        let s = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(p.violation(&s.x) <= 1e-12);
        let oracle = subgradient_oracle(&p, 200_000);
        let scale = 1.0 + oracle.abs();
        assert!(s.objective >= oracle - 1e-9 * scale, "seed {seed}: solver {} below oracle {}", s.objective, oracle);
        assert!(s.objective - oracle <= 1e-3 * scale, "seed {seed}: solver {} oracle {}", s.objective, oracle);
    }
}

#[test]
fn ball_domain_stays_feasible() {
    let p = random_problem(11, 5, 2, Domain::PowerBall(3.0));
    let s = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert!(s.x.norm_squared() <= 3.0 + 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn looser_power_cap_never_hurts(seed in 0u64..1000, lo in 0.01f64..1.0, extra in 0.0f64..2.0) {
        let mut p = random_problem(seed, 4, 2, Domain::UnitBox);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let cap = HermitianForm::from_factor(random_matrix(&mut rng, 1, 4)).unwrap();
        p.constraints.push(QuadConstraint { form: cap.clone(), bound: lo });
        let tight = solve(&p, &SolverSettings::default()).unwrap();
        p.constraints[0].bound = lo + extra;
        let loose = solve(&p, &SolverSettings::default()).unwrap();
        prop_assert!(cap.quad(&tight.x) <= lo * (1.0 + 1e-12));
        let scale = 1.0 + tight.objective.abs();
        prop_assert!(loose.objective >= tight.objective - 1e-6 * scale,
            "tight {} loose {}", tight.objective, loose.objective);
    }

    #[test]
    fn real_embedding_round_trips(pairs in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..12)) {
        let x = CVec::from_iterator(pairs.len(), pairs.iter().map(|&(re, im)| C64::new(re, im)));
        prop_assert_eq!(complex_from_real(&real_embed_vec(&x)), x);
        let r = DVector::from_iterator(2 * pairs.len(), pairs.iter().map(|p| p.0).chain(pairs.iter().map(|p| p.1)));
        prop_assert_eq!(real_embed_vec(&complex_from_real(&r)), r);
    }
}
