mod common;

use common::gini_pairwise;
use grouped_sae::baseline::gini;
use grouped_sae::datamodel::{read_areas, FittedModel};
use grouped_sae::eis::{kish_ess, normalized_weights, sir, AreaTarget, ProposalParams};
use grouped_sae::gibbs::{summarize, GibbsSampler};
use grouped_sae::likelihood::group_probs;
use grouped_sae::{AreaRecord, GroupedSample, Grouping, Hyperparameters, Thresholds};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn thresholds() -> Thresholds {
    Thresholds::new(vec![1.0, 2.0, 4.0, 8.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loaded_counts_sum_to_n(rows in prop::collection::vec(
        (prop::collection::vec(0u64..40, 5), 0u64..100, -5.0f64..5.0, any::<bool>()), 1..12)
    ) {
        let mut text = String::from("area_id,N_pop,x_1,x_2,y_1,y_2,y_3,y_4,y_5\n");
        for (i, (counts, extra, x2, observed)) in rows.iter().enumerate() {
            let n: u64 = counts.iter().sum();
            let cells: Vec<String> = if *observed {
                counts.iter().map(|c| c.to_string()).collect()
            } else {
                vec![String::new(); 5]
            };
            text.push_str(&format!("r{i},{},1,{x2},{}\n", n + extra, cells.join(",")));
        }
        let areas = read_areas(text.as_bytes(), &thresholds()).unwrap();
        prop_assert_eq!(areas.len(), rows.len());
        for (area, (counts, _, x2, observed)) in areas.iter().zip(&rows) {
            prop_assert_eq!(area.x[1], *x2);
            match &area.sample {
                Some(y) => {
                    prop_assert!(*observed);
                    prop_assert_eq!(y.counts(), &counts[..]);
                    prop_assert_eq!(y.n(), counts.iter().sum::<u64>());
                    prop_assert!(y.n() <= area.n_pop);
                }
                None => prop_assert!(!*observed),
            }
        }
    }

    #[test]
    fn model_json_round_trip_is_exact(
        beta in prop::collection::vec(-1e3f64..1e3, 1..5),
        tau2 in 1e-8f64..1e3,
        lambda in 1e-3f64..1e6,
        kappa in -2.0f64..2.0,
        shift in -10.0f64..0.0,
    ) {
        let psi = Hyperparameters {
            gamma: beta.iter().map(|b| b / 7.0).collect(),
            beta,
            tau2,
            lambda,
            kappa,
        };
        let mut model = FittedModel::new(&psi, &thresholds());
        model.shift = shift;
        let back = FittedModel::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.hyperparameters(), psi);
        prop_assert_eq!(back.shift.to_bits(), shift.to_bits());
        prop_assert_eq!(back, model);
    }

    #[test]
    fn gini_is_scale_and_permutation_invariant(
        z in prop::collection::vec(0.01f64..1e4, 1..80),
        a in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let g = gini(&z).unwrap();
        let scaled: Vec<f64> = z.iter().map(|v| a * v).collect();
        prop_assert!((gini(&scaled).unwrap() - g).abs() <= 1e-12);
        let mut shuffled = z.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((gini(&shuffled).unwrap() - g).abs() <= 1e-12);
        prop_assert!((0.0..1.0).contains(&g));
    }

    #[test]
    fn shifting_log_weights_changes_nothing(
        steps in prop::collection::vec(-4096i32..4096, 1..200),
        shift in -1_000_000i32..1_000_000,
    ) {
        // dyadic values keep every sum exact, so equality must be bitwise
        let lw: Vec<f64> = steps.iter().map(|&k| k as f64 / 1024.0).collect();
        let moved: Vec<f64> = lw.iter().map(|v| v + shift as f64).collect();
        let p = normalized_weights(&lw).unwrap();
        let q = normalized_weights(&moved).unwrap();
        prop_assert!(p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(kish_ess(&p).to_bits(), kish_ess(&q).to_bits());
    }

    // For kappa < 0 the top class is bounded by -1/kappa and mass beyond it is
    // lost, so a mean past that bound can lower the top probability. Likewise
    // for kappa > 0 at the bottom. The property is checked where both end
    // classes are effectively unbounded relative to mu.
    #[test]
    fn raising_mu_moves_mass_to_the_top(
        mu in -0.9f64..3.0,
        step in 0.01f64..1.0,
        sigma in 0.1f64..2.0,
        kappa in 0.0f64..0.5,
    ) {
        let th = thresholds();
        let lo = group_probs(mu, sigma * sigma, kappa, &th);
        let hi = group_probs(mu + step, sigma * sigma, kappa, &th);
        let g = th.groups();
        // strictness is only visible while neither end class has saturated in f64
        prop_assume!(hi[0] > 1e-290 && lo[g - 1] < 1.0 - 1e-12);
        prop_assert!(hi[0] < lo[0]);
        prop_assert!(hi[g - 1] > lo[g - 1]);
    }

    #[test]
    fn gibbs_draws_respect_classes_and_gini_identity(
        counts in prop::collection::vec(0u64..6, 5),
        extra in 0u64..8,
        kappa in -0.4f64..0.4,
        seed in any::<u64>(),
    ) {
        let n: u64 = counts.iter().sum();
        prop_assume!(n > 0);
        let psi = Hyperparameters {
            beta: vec![1.0],
            tau2: 0.2,
            lambda: 10.0,
            kappa,
            gamma: vec![0.5f64.ln()],
        };
        let grouping = Grouping::new(thresholds());
        let area = AreaRecord {
            id: "a".into(),
            x: vec![1.0],
            n_pop: n + extra,
            sample: Some(GroupedSample::new(counts.clone())),
        };
        let sampler = GibbsSampler::new(&area, &psi, &grouping).unwrap();
        let h = sampler.transform();
        let bounds = grouping.bounds(kappa);
        let mut state = sampler.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = Vec::new();
        for _ in 0..20 {
            sampler.step(&mut state, &mut rng).unwrap();
            let mut start = 0;
            for (g, &c) in counts.iter().enumerate() {
                for &v in &state.v_in[start..start + c as usize] {
                    prop_assert!(v >= bounds[g] && v < bounds[g + 1], "v={} not in class {}", v, g);
                }
                start += c as usize;
            }
            let all: Vec<f64> = state.v_in.iter().chain(&state.v_out).copied().collect();
            let (mean, g) = summarize(&h, all.iter().copied(), &mut buf);
            let z: Vec<f64> = all.iter().map(|&v| h.inverse_unchecked(v)).collect();
            prop_assert!((g - gini_pairwise(&z)).abs() <= 1e-10);
            prop_assert!((mean - z.iter().sum::<f64>() / z.len() as f64).abs() <= 1e-12 * mean.abs());
        }
    }

    #[test]
    fn unit_order_within_a_class_does_not_matter(
        values in prop::collection::vec(-1.5f64..3.0, 2..60),
        seed in any::<u64>(),
    ) {
        let h = grouped_sae::BoxCox::new(0.2);
        let mut buf = Vec::new();
        let (m1, g1) = summarize(&h, values.iter().copied(), &mut buf);
        let mut permuted = values.clone();
        permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (m2, g2) = summarize(&h, permuted.iter().copied(), &mut buf);
        prop_assert_eq!(g1.to_bits(), g2.to_bits());
        prop_assert!((m1 - m2).abs() <= 1e-12 * m1.abs());
    }
}

#[test]
fn empty_sample_posterior_is_the_prior() {
    let psi = Hyperparameters {
        beta: vec![0.7],
        tau2: 0.3,
        lambda: 12.0,
        kappa: 0.1,
        gamma: vec![0.0],
    };
    let grouping = Grouping::new(thresholds());
    let y = GroupedSample::new(vec![0; 5]);
    let target = AreaTarget::new("empty", &y, &[1.0], &psi, &grouping);
    let prior = ProposalParams::prior(&psi, &[1.0]);
    let s1 = 10_000;
    let mut draw_rng = ChaCha8Rng::seed_from_u64(1);
    let mut resample_rng = ChaCha8Rng::seed_from_u64(2);
    let (resampled, diag) = sir(&target, &prior, s1, s1, &mut draw_rng, &mut resample_rng).unwrap();
    assert!((diag.ess - s1 as f64).abs() < 1e-6 * s1 as f64, "ess {}", diag.ess);
    let b: Vec<f64> = resampled.iter().map(|u| u.b).collect();
    let mean = b.iter().sum::<f64>() / s1 as f64;
    let second = b.iter().map(|v| v * v).sum::<f64>() / s1 as f64;
    let se_mean = (psi.tau2 / s1 as f64).sqrt();
    // b^2 / tau2 is chi-square(1) with variance 2; resampling S1 of the S1
    // draws with replacement doubles the variance of any average
    let se_second = psi.tau2 * (2.0 / s1 as f64).sqrt();
    assert!(mean.abs() <= 4.0 * se_mean * 2f64.sqrt(), "mean {mean}");
    assert!((second - psi.tau2).abs() <= 4.0 * se_second * 2f64.sqrt(), "E b^2 {second}");
}
