//! Structural properties of the solvers over seeded random instances.

use mcbf::conic::Tolerances;
use mcbf::fair::{rescale_to_pac, solve_fr, solve_qr, solve_relaxed, solve_spc, PowerBudget, SolverSettings};
use mcbf::linalg::CVec;
use mcbf::model::{
    complex_normal, gen_rayleigh, min_weighted_sinr, per_antenna_power, GroupPartition, PrecoderSet, ProblemInstance,
};
use mcbf::randomization::{draw_candidates, solve_fair_pipeline};
use mcbf::robust::{worst_case_sinr_relaxed, RobustSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS_BIS: f64 = 1e-3;
const EPS_CLAIM: f64 = 1e-2;
const EPS_FEAS: f64 = 1e-7;

fn instance(seed: u64, nt: usize, nu: usize, g: usize, p_tot: f64) -> ProblemInstance {
    ProblemInstance::equal_split(gen_rayleigh(nt, nu, seed), GroupPartition::contiguous(nu, g).unwrap(), p_tot).unwrap()
}

fn random_precoders(seed: u64, nt: usize, g: usize) -> PrecoderSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PrecoderSet::new((0..g).map(|_| CVec::from_fn(nt, |_, _| complex_normal(&mut rng))).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn qr_is_monotone_in_targets(seed in 0u64..10_000, t1 in 0.05f64..2.0, gap in 0.0f64..2.0) {
        let inst = instance(seed, 4, 4, 2, 4.0);
        let tol = Tolerances::default();
        let r1 = solve_qr(&inst, &[t1; 4], &tol).unwrap().unwrap().r_star;
        let r2 = solve_qr(&inst, &[t1 + gap; 4], &tol).unwrap().unwrap().r_star;
        prop_assert!(r1 <= r2 * (1.0 + 1e-6) + 1e-9);
    }

    #[test]
    fn weight_scaling_is_covariant(seed in 0u64..10_000, c in 0.25f64..4.0) {
        let inst = instance(seed, 4, 4, 2, 4.0);
        let settings = SolverSettings::default();
        let base = solve_fr(&inst, &settings).unwrap().t_star;
        let scaled = solve_fr(&inst.with_targets(vec![c; 4]).unwrap(), &settings).unwrap().t_star;
        prop_assert!((scaled * c / base - 1.0).abs() <= 2.0 * EPS_CLAIM);
    }

    #[test]
    fn spc_dominates_pac(seed in 0u64..10_000) {
        let inst = instance(seed, 4, 4, 2, 4.0);
        let settings = SolverSettings::default();
        let pac = solve_fr(&inst, &settings).unwrap();
        let spc = solve_spc(&inst, inst.total_power(), &settings).unwrap();
        prop_assert!(spc.t_star >= pac.t_star * (1.0 - EPS_CLAIM));
    }

    #[test]
    fn relaxed_output_is_feasible_and_bracketed(seed in 0u64..10_000) {
        let inst = instance(seed, 5, 4, 2, 10.0);
        let fr = solve_fr(&inst, &SolverSettings::default()).unwrap();
        let per_antenna = fr.covariances.per_antenna_power();
        for (used, p) in per_antenna.iter().zip(inst.pac()) {
            prop_assert!(*used <= p * (1.0 + EPS_FEAS));
        }
        prop_assert!(fr.covariances.min_weighted_sinr(&inst) >= fr.t_star * (1.0 - 1e-9));
        prop_assert!(fr.t_star <= fr.upper_bound);
        prop_assert!(fr.upper_bound - fr.t_star <= EPS_BIS * fr.upper_bound * (1.0 + 1e-9));
        // feasible steps sit below the bracket, the rest at or above it
        for &(t, r) in &fr.bisection_trace {
            if r < 1.0 {
                prop_assert!(t <= fr.t_star * (1.0 + 1e-9));
            } else {
                prop_assert!(t >= fr.upper_bound * (1.0 - 1e-6));
            }
        }
    }

    #[test]
    fn pipeline_never_beats_the_relaxation(seed in 0u64..10_000) {
        let inst = instance(seed, 5, 6, 2, 10.0);
        let (w, report) = solve_fair_pipeline(&inst, 30, seed, &SolverSettings::default()).unwrap();
        let t = min_weighted_sinr(&w, &inst).unwrap();
        prop_assert!((t - report.achieved_t).abs() <= 1e-9 * t.max(1.0));
        prop_assert!(t <= report.upper_bound * (1.0 + 1e-6));
        let load = PowerBudget::per_antenna(&inst).precoder_load(&w);
        prop_assert!((1.0 - 1e-3..=1.0 + EPS_FEAS).contains(&load));
    }

    #[test]
    fn rescaling_restores_feasibility(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let w = random_precoders(seed, 4, 3).with_group_powers(&[scale; 3]);
        let pac = vec![1.0; 4];
        let before = per_antenna_power(&w);
        let out = rescale_to_pac(&w, &pac);
        let after = per_antenna_power(&out);
        for n in 0..4 {
            prop_assert!(after[n] <= pac[n] * (1.0 + 1e-12));
            if before[n] <= pac[n] {
                prop_assert!((after[n] - before[n]).abs() <= 1e-15 * before[n].max(1.0));
            } else {
                prop_assert!((after[n] - pac[n]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn antenna_powers_sum_to_total(seed in 0u64..10_000) {
        let w = random_precoders(seed, 5, 3);
        let per = per_antenna_power(&w);
        prop_assert!(per.iter().all(|p| *p >= 0.0));
        prop_assert!((per.iter().sum::<f64>() - w.total_power()).abs() <= 1e-12 * w.total_power());
    }

    #[test]
    fn candidate_streams_are_nested(seed in 0u64..10_000, n in 1usize..20) {
        let inst = instance(seed, 3, 4, 2, 3.0);
        let fr = solve_fr(&inst, &SolverSettings::default()).unwrap();
        let short = draw_candidates(&fr.covariances, n, seed);
        let long = draw_candidates(&fr.covariances, n + 5, seed);
        prop_assert_eq!(&short.candidates[..], &long.candidates[..n]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 3, ..ProptestConfig::default() })]

    #[test]
    fn robust_level_degrades_monotonically(seed in 0u64..10_000) {
        let inst = instance(seed, 3, 4, 2, 10.0);
        let settings = SolverSettings::default();
        let budget = PowerBudget::per_antenna(&inst);
        let mut prev = f64::INFINITY;
        for sigma in [0.0, 0.05, 0.1, 0.2] {
            let spec = RobustSpec::sphere(sigma).unwrap();
            let fr = solve_relaxed(&inst, &budget, &spec, &settings).unwrap();
            prop_assert!(fr.t_star <= prev * (1.0 + 2.0 * EPS_BIS));
            // the certified level is the exact worst case of the returned covariances
            let wc = worst_case_sinr_relaxed(&fr.covariances, &inst, &spec).unwrap();
            let level = wc.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!((level - fr.t_star).abs() <= 1e-9 * level.max(1.0));
            prev = fr.t_star;
        }
    }
}
