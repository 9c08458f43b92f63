use std::collections::HashSet;

use proptest::prelude::*;

use mlqmc_core::estimators::{
    allocate_samples, mimc_run, miqmc_run, mlmc_combination_run, mlmc_run, Estimator, LevelKey, PdeEvaluator, Rounding,
};
use mlqmc_core::index::{combination_value, shell, truncated_sum, IndexSet, MultiIndex};
use mlqmc_core::sampler::{LatticeProvider, Purpose, ShiftSet, StreamKey};
use mlqmc_core::{Driver, Error, EstimatorParams, ProblemSpec, SolverConfig};

fn params(seed: u64) -> EstimatorParams {
    EstimatorParams {
        seed,
        ..EstimatorParams::default()
    }
}

#[test]
fn drivers_reach_the_reference_value_in_one_dimension() {
    let spec = ProblemSpec::builtin(1, 4, 0.9).unwrap();
    let reference = 8.4591e-2;
    let lattice = LatticeProvider::korobov(spec.s, 64);
    let eps = 5e-4;
    for report in [
        mlmc_run(&spec, eps, &params(3)).unwrap(),
        mimc_run(&spec, eps, &params(3)).unwrap(),
        mlmc_combination_run(&spec, eps, &params(3)).unwrap(),
        miqmc_run(&spec, &lattice, eps, &params(3)).unwrap(),
    ] {
        assert!(report.within_budget, "{}", report.driver);
        assert!((report.estimate - reference).abs() < 4.0 * eps, "{} {}", report.driver, report.estimate);
    }
}

#[test]
fn results_do_not_depend_on_the_worker_count() {
    let spec = ProblemSpec::builtin(2, 4, 0.9).unwrap();
    let solver = SolverConfig::default();
    let lattice = LatticeProvider::korobov(spec.s, 64);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            Estimator::new(&spec, &solver, Driver::Miqmc, params(9))
                .with_lattice(&lattice)
                .estimate(1e-3)
                .unwrap()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn qmc_driver_with_a_file_vector() {
    let spec = ProblemSpec::builtin(2, 4, 0.9).unwrap();
    let lattice = LatticeProvider::from_file_text("max_n 65536\n1\n19463\n29759\n3561\n", spec.s).unwrap();
    let report = miqmc_run(&spec, &lattice, 1e-3, &params(1)).unwrap();
    assert!(report.within_budget);
    assert!((report.estimate - 3.5438e-2).abs() < 4e-3);
    assert!(matches!(
        LatticeProvider::from_file_text("1\n2\n3\n5\n", 4),
        Err(Error::Config(_))
    ));
}

#[test]
fn combination_and_truncated_sum_agree_on_pde_values() {
    let spec = ProblemSpec::builtin(2, 4, 0.9).unwrap();
    let solver = SolverConfig::default();
    let eval = PdeEvaluator::new(&spec, &solver);
    let y = [0.3, -0.2, 0.45, -0.5];
    for level in 2..=6 {
        let (pair, _) = eval
            .with_memo(&y, |ev| (combination_value(&mut *ev, level, 2), truncated_sum(&mut *ev, level, 2)))
            .unwrap();
        assert!((pair.0 - pair.1).abs() <= 1e-12 * pair.0.abs(), "level {level}: {pair:?}");
    }
}

#[test]
fn shifts_are_reproducible_and_distinct_per_replica() {
    let a = ShiftSet::generate(4, 8, StreamKey::new(1, Purpose::Shift, 3, 0));
    let b = ShiftSet::generate(4, 8, StreamKey::new(1, Purpose::Shift, 3, 0));
    let c = ShiftSet::generate(4, 8, StreamKey::new(1, Purpose::Shift, 3, 1));
    assert_eq!(a.shifts, b.shifts);
    assert_ne!(a.shifts, c.shifts);
}

proptest! {
    #[test]
    fn simplex_sizes_are_binomial(d in 1usize..=3, level in 0usize..=6) {
        let set = IndexSet::simplex(d, level);
        let mut want = 1u64;
        for k in 1..=d as u64 {
            want = want * (level as u64 + k) / k;
        }
        prop_assert_eq!(set.len() as u64, want);
        let total: usize = (0..=level).map(|k| shell(k, d).len()).sum();
        prop_assert_eq!(total, set.len());
    }

    #[test]
    fn stream_slots_are_unique_within_a_simplex(d in 1usize..=3, level in 0usize..=8) {
        let slots: HashSet<u64> = IndexSet::simplex(d, level)
            .members()
            .iter()
            .map(|m| LevelKey::Index(m.clone()).slot())
            .collect();
        prop_assert_eq!(slots.len(), IndexSet::simplex(d, level).len());
        prop_assert!(slots.iter().all(|&s| s >= 1 << 62));
        let iso = LevelKey::Level(level as u32).slot();
        prop_assert!(iso < 1 << 32);
    }

    #[test]
    fn allocation_meets_the_variance_target(
        v in proptest::collection::vec(1e-8f64..1.0, 1..6),
        eps in 1e-4f64..0.3,
        p in 1.0f64..2.0,
    ) {
        let c: Vec<f64> = (0..v.len()).map(|l| 2f64.powi(l as i32)).collect();
        for rounding in [Rounding::Integer, Rounding::PowerOfTwo] {
            let a = allocate_samples(&v, &c, eps, p, rounding).unwrap();
            let var: f64 = v.iter().zip(&a.counts).map(|(v, &n)| v / (n as f64).powf(p)).sum();
            prop_assert!(var <= eps * eps / 2.0 * (1.0 + 1e-9));
            if rounding == Rounding::PowerOfTwo {
                prop_assert!(a.counts.iter().all(|n| n.is_power_of_two()));
            }
        }
    }

    #[test]
    fn multi_index_display_round_trips_through_levels(levels in proptest::collection::vec(0i32..20, 1..=3)) {
        let m = MultiIndex::new(levels.clone());
        let text = m.to_string();
        let parsed: Vec<i32> = text.trim_matches(|c| c == '(' || c == ')').split(',').map(|t| t.parse().unwrap()).collect();
        prop_assert_eq!(parsed, levels);
    }
}
