mod common;

use num_traits::{One, Zero};
use pmc_core::case1::{analyze_bsccs, botfin, escape_bound, qualitative_case1};
use pmc_core::case2::{project_counter, solve_g_matrix, step_matrices, GOptions};
use pmc_core::coverability::witness_is_safe;
use pmc_core::model::transition_distribution;
use pmc_core::sim::{estimate_probability, Simulator};
use pmc_core::{
    classify_criterion, parse_pmc, serialize_pmc, zero_set, Configuration, CriterionClass, Rational, StoppingCriterion,
    UndecidableReason, Verdict,
};
use proptest::prelude::*;

use common::*;

fn config(n: usize, d: usize, seed: u64) -> Configuration {
    Configuration::new((seed as usize) % n, (0..d).map(|k| (seed >> (3 * k)) % 4).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn successor_distribution_is_exact(seed: u64, n in 1usize..5, d in 1usize..4) {
        let pmc = random_pmc(&mut rng(seed), n, d, 3);
        let cfg = config(n, d, seed);
        let dist = transition_distribution(&pmc, &cfg).unwrap();
        let total: Rational = dist.iter().map(|t| t.prob.clone()).sum();
        prop_assert!(total.is_one());
        for t in &dist {
            prop_assert!(t.prob > Rational::zero());
            if let Some(r) = t.rule {
                let rule = &pmc.rules()[r];
                prop_assert_eq!(rule.src, cfg.state);
                prop_assert_eq!(rule.zero_test, zero_set(&cfg));
                for k in 0..d {
                    prop_assert_eq!(t.target.counters[k] as i64, cfg.counters[k] as i64 + rule.delta[k] as i64);
                }
            } else {
                prop_assert_eq!(&t.target, &cfg);
            }
        }
    }

    #[test]
    fn text_round_trip(seed: u64, n in 1usize..5, d in 1usize..4) {
        let pmc = random_pmc(&mut rng(seed), n, d, 2);
        let text = serialize_pmc(&pmc);
        let back = parse_pmc(&text).unwrap();
        prop_assert_eq!(&back, &pmc);
        prop_assert_eq!(serialize_pmc(&back), text);
    }

    #[test]
    fn trend_is_mu_weighted_change(seed: u64, n in 1usize..5, d in 1usize..4) {
        let pmc = random_pmc(&mut rng(seed), n, d, 2);
        let (_, analyses) = analyze_bsccs(&pmc).unwrap();
        prop_assert!(!analyses.is_empty());
        for a in &analyses {
            let mass: Rational = a.mu.iter().sum();
            prop_assert!(mass.is_one());
            prop_assert!(a.mu.iter().all(|m| *m > Rational::zero()));
            for i in 0..d {
                let t: Rational = a.mu.iter().zip(&a.change).map(|(m, c)| m * &c[i]).sum();
                prop_assert_eq!(&t, &a.trend[i]);
            }
        }
    }

    #[test]
    fn finite_botfin_is_at_most_component_size(seed: u64, n in 1usize..6, extra in 0usize..5) {
        let pmc = random_component(&mut rng(seed), n, 2, extra);
        let comp: Vec<usize> = (0..n).collect();
        for i in 1..=2 {
            let b = botfin(&pmc, &comp, i);
            // Either all entries are infinite or none is.
            prop_assert!(b.iter().all(|v| v.is_none()) || b.iter().all(|v| v.is_some()));
            for v in b.iter().flatten() {
                prop_assert!(*v as usize <= n);
                prop_assert!(*v >= 1);
            }
        }
    }

    #[test]
    fn g_matrix_is_substochastic(seed: u64, n in 1usize..4) {
        let pmc = random_pmc_masks(&mut rng(seed), n, 2, 2, &[0, 2]);
        let m = step_matrices(&project_counter(&pmc, 2).unwrap());
        let g = solve_g_matrix(&m, &GOptions::default()).unwrap();
        for r in 0..n {
            let mut sum = 0.0;
            for c in 0..n {
                let v = g.g[(r, c)];
                prop_assert!((-1e-12..=1.0 + 1e-9).contains(&v));
                sum += v;
            }
            prop_assert!(sum <= 1.0 + 1e-9);
            prop_assert!((g.up[r] - (1.0 - sum).max(0.0)).abs() <= 1e-9);
        }
        prop_assert!(g.residual <= 1e-8);
    }

    #[test]
    fn criterion_classification(d in 1usize..6, raw in prop::collection::vec(1u64..64, 1..5)) {
        let sets: Vec<u64> = raw.iter().map(|s| s & ((1 << d) - 1)).filter(|&s| s != 0).collect();
        prop_assume!(!sets.is_empty());
        let z = StoppingCriterion::new(sets.clone());
        let comparable = sets.iter().enumerate().any(|(a, x)| sets.iter().enumerate().any(|(b, y)| a != b && x & y == *x));
        if comparable {
            prop_assert!(classify_criterion(d, &z).is_err());
            return Ok(());
        }
        let touched = sets.iter().fold(0, |m, s| m | s);
        let want = if sets.iter().any(|s| s.count_ones() > 1) {
            CriterionClass::Undecidable(UndecidableReason::A)
        } else if touched.count_ones() as usize == d {
            CriterionClass::CaseI
        } else if touched.count_ones() as usize == d - 1 {
            CriterionClass::CaseII((1..=d).find(|i| touched >> (i - 1) & 1 == 0).unwrap())
        } else {
            CriterionClass::Undecidable(UndecidableReason::B)
        };
        prop_assert_eq!(classify_criterion(d, &z).unwrap(), want);
    }

    #[test]
    fn escape_bound_is_a_decreasing_probability(seed: u64, n in 1usize..5) {
        let pmc = random_pmc(&mut rng(seed), n, 2, 2);
        let mut last = 1.0;
        for k in 0..40 {
            let b = escape_bound(&pmc, k);
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!(b <= last);
            last = b;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_reproducible(seed: u64, n in 1usize..4, d in 1usize..3, run in 0u64..1000) {
        let pmc = random_pmc(&mut rng(seed), n, d, 2);
        let start = config(n, d, seed);
        let sim = Simulator::new(&pmc).unwrap();
        let z = StoppingCriterion::all(d);
        let a = sim.run(&start, Some(&z), 500, seed, run, true).unwrap();
        let b = sim.run(&start, Some(&z), 500, seed, run, true).unwrap();
        prop_assert_eq!(&a.final_config, &b.final_config);
        prop_assert_eq!(&a.trace, &b.trace);
        // Every step of the trace is a possible transition.
        let trace = a.trace.unwrap();
        for w in trace.windows(2) {
            prop_assert!(transition_distribution(&pmc, &w[0]).unwrap().iter().any(|t| t.target == w[1]));
        }
    }

    #[test]
    fn estimate_interval_is_ordered(seed: u64, n in 1usize..4) {
        let pmc = random_pmc(&mut rng(seed), n, 1, 2);
        let start = config(n, 1, seed);
        let e = estimate_probability(&pmc, &start, &StoppingCriterion::all(1), 200, 200, seed).unwrap();
        prop_assert!(0.0 <= e.ci_low && e.ci_low <= e.estimate && e.estimate <= e.ci_high && e.ci_high <= 1.0);
        prop_assert_eq!(e.stopped as f64 / e.runs as f64, e.estimate);
        prop_assert!(e.stopped + e.censored <= e.runs);
    }

    #[test]
    fn case1_witnesses_are_safe(seed: u64, n in 1usize..4, d in 1usize..3) {
        let pmc = random_pmc(&mut rng(seed), n, d, 2);
        let start = Configuration::new(0, vec![1; d]);
        let q = qualitative_case1(&pmc, &start).unwrap();
        if q.verdict == Verdict::NotAlmostSure {
            let w = q.witness.expect("negative verdicts carry a witness");
            if let Some(path) = &w.path {
                prop_assert_eq!(&path[0], &start);
                prop_assert!(witness_is_safe(&pmc, path).unwrap());
                prop_assert_eq!(path.last().unwrap().state, w.state);
            }
            prop_assert!(w.component.contains(&w.state));
        }
    }
}
