//! Property tests over randomly drawn scenarios and operating points.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ris_beam::channel::assemble_channels;
use ris_beam::discrete::{codebook, greedy_pass};
use ris_beam::neural::AngleEncoding;
use ris_beam::objective::{achievable_rate, build_theta_quadratics, objective_f, surrogate_value, update_filters};
use ris_beam::scene::{build_geometry, build_mask_set, path_loss_from_parts, Scenario};
use ris_beam::{CMat, CVec, C64};

/// Strictly increasing reflection angles in [10, 60] with at least a degree between neighbours.
fn sorted_refs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(10.0f64..60.0, 1..4).prop_filter_map("angles too close", |mut v| {
        v.sort_by(f64::total_cmp);
        v.windows(2).all(|w| w[1] - w[0] >= 1.0).then_some(v)
    })
}

fn small(seed: u64, refs: &[f64]) -> Scenario {
    let mut s = Scenario::reference();
    s.ris_rows = 3;
    s.ris_cols = 3;
    s.N_t = 3;
    s.K_r = 1.0;
    s.seed = seed;
    s.theta_ref_deg = refs.to_vec();
    s.N_r = vec![2; refs.len()];
    s
}

fn point(n_ris: usize, n_t: usize, n_r: &[usize], seed: u64) -> (CVec, Vec<CMat>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let theta = CVec::from_fn(n_ris, |_, _| c());
    let f = n_r.iter().map(|&r| CMat::from_fn(n_t, r, |_, _| c())).collect();
    (theta, f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_bands_stay_in_range_and_clear_the_beams(refs in sorted_refs()) {
        for iv in build_mask_set(&refs) {
            prop_assert!(iv.lo >= -89.0 && iv.hi <= 89.0 && iv.lo <= iv.hi);
            for &r in &refs {
                prop_assert!(r <= iv.lo - 10.0 + 1e-9 || r >= iv.hi + 10.0 - 1e-9, "beam {r} inside {iv:?}");
            }
        }
    }

    #[test]
    fn path_loss_falls_with_distance(d2 in 1.0f64..500.0, extra in 0.1f64..100.0, c2 in 0.05f64..1.0) {
        let near = path_loss_from_parts(0.011, 0.9, c2, 50.0, d2);
        let far = path_loss_from_parts(0.011, 0.9, c2, 50.0, d2 + extra);
        prop_assert!(far < near);
    }

    #[test]
    fn surrogate_never_exceeds_the_rate(seed in 0u64..1000, other in 0u64..1000, refs in sorted_refs()) {
        let s = small(seed, &refs);
        let cs = assemble_channels(&s, &build_geometry(&s).unwrap());
        let (theta, f) = point(cs.n_ris(), cs.n_t(), &s.N_r, seed);
        let (theta_b, f_b) = point(cs.n_ris(), cs.n_t(), &s.N_r, other + 5000);
        let mismatched = update_filters(&cs, &theta_b, &f_b, s.sigma2_w).unwrap();
        for i in 0..cs.n_receivers() {
            let rate = achievable_rate(&cs, &theta, &f, s.sigma2_w, i).unwrap();
            let bound = surrogate_value(&mismatched, &cs, &theta, &f, s.sigma2_w, i).unwrap();
            prop_assert!(bound <= rate + 1e-9 * rate.abs().max(1e-12), "surrogate {bound} above rate {rate}");
        }
    }

    #[test]
    fn greedy_never_lowers_the_objective(seed in 0u64..1000, levels in 2usize..6) {
        let mut s = small(seed, &[30.0, 50.0]);
        s.sigma2_w = 1e-15;
        let cs = assemble_channels(&s, &build_geometry(&s).unwrap());
        let (_, f) = point(cs.n_ris(), cs.n_t(), &s.N_r, seed);
        let book = codebook(levels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = CVec::from_fn(cs.n_ris(), |_, _| book[rng.random_range(0..levels)]);
        let filters = update_filters(&cs, &start, &f, s.sigma2_w).unwrap();
        let q = build_theta_quadratics(&filters, &cs, &f, s.sigma2_w, &[]).unwrap();
        let before = objective_f(&filters, &cs, &start, &f, s.sigma2_w).unwrap();
        let mut theta = start.clone();
        let out = greedy_pass(&q, &mut theta, 1.0, levels, 1e-12, 50);
        let after = objective_f(&filters, &cs, &theta, &f, s.sigma2_w).unwrap();
        prop_assert!(out.on_codebook);
        prop_assert!(theta.iter().all(|t| book.contains(t)));
        prop_assert!(after >= before - 1e-9 * before.abs().max(1e-12));
    }

    #[test]
    fn encoding_has_one_entry_in_the_unit_band(angle in 10.0f64..=60.0) {
        let y = AngleEncoding::default().encode(angle).unwrap();
        let nonzero: Vec<f64> = y.iter().copied().filter(|v| *v != 0.0).collect();
        prop_assert_eq!(y.len(), 101);
        prop_assert_eq!(nonzero.len(), 1);
        prop_assert!(nonzero[0] >= 1.0 && nonzero[0] < 2.0);
    }

    #[test]
    fn scenario_files_round_trip(seed in any::<u64>(), refs in sorted_refs(), inc in 10.0f64..60.0) {
        let mut s = small(seed, &refs);
        s.theta_inc_deg = inc;
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("s.toml");
        let json_path = dir.path().join("s.json");
        std::fs::write(&toml_path, toml::to_string(&s).unwrap()).unwrap();
        std::fs::write(&json_path, serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(&Scenario::from_path(&toml_path).unwrap(), &s);
        prop_assert_eq!(&Scenario::from_path(&json_path).unwrap(), &s);
    }
}
