//! Reference expectations of the built-in problem, used to freeze the
//! constants of the acceptance tests.
//!
//! `oracle d1 <samples>`: plain MC, `E[P_l]` for `l = 1..=9` and the
//! Richardson value `(4 P_9 - P_8) / 3`.
//! `oracle d2 <log2 N> <shifts>`: shifted-lattice QMC, isotropic `E[P_l]` for
//! `l = 1..=7`, combination `E[P_L]` for `L = 2..=12`, and Richardson values.

use rayon::prelude::*;

use mlqmc_core::estimators::PdeEvaluator;
use mlqmc_core::sampler::{mc_point, shift_statistics, LatticeProvider, Purpose, ShiftSet, StreamKey};
use mlqmc_core::{ProblemSpec, SolverConfig};

const SEED: u64 = 20_240_601;

fn mean_se(rows: &[Vec<f64>], j: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn d1(samples: u64) {
    let spec = ProblemSpec::builtin(1, 4, 0.9).unwrap();
    let solver = SolverConfig::default();
    let eval = PdeEvaluator::new(&spec, &solver);
    let key = StreamKey::new(SEED, Purpose::Oracle, 1, 0);
    let rows: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let y = mc_point(spec.s, &key, i);
            let mut v: Vec<f64> = (1..=9).map(|l| eval.isotropic(l, &y).unwrap()).collect();
            v.push((4.0 * v[8] - v[7]) / 3.0);
            v
        })
        .collect();
    for l in 1..=9 {
        let (m, se) = mean_se(&rows, l - 1);
        println!("d1 iso {l}: {m:.15e} se {se:.3e}");
    }
    let (m, se) = mean_se(&rows, 9);
    println!("d1 richardson: {m:.15e} se {se:.3e}");
}

fn d2(log2n: u32, r: usize) {
    let spec = ProblemSpec::builtin(2, 4, 0.9).unwrap();
    let solver = SolverConfig::default();
    let eval = PdeEvaluator::new(&spec, &solver);
    let lattice = LatticeProvider::korobov(spec.s, 64);
    let rule = lattice.rule_for(1 << log2n).unwrap();
    let shifts = ShiftSet::generate(spec.s, r, StreamKey::new(SEED, Purpose::Oracle, 2, 0));
    let iso = 1..=7i64;
    let comb = 2..=12i64;
    let width = iso.clone().count() + comb.clone().count() + 2;
    let per_shift: Vec<Vec<f64>> = shifts
        .shifts
        .iter()
        .map(|shift| {
            let sums = (0..rule.n)
                .into_par_iter()
                .map(|i| {
                    let mut y = vec![0.0; spec.s];
                    rule.point_into(i, shift, &mut y);
                    let mut v: Vec<f64> = iso.clone().map(|l| eval.isotropic(l, &y).unwrap()).collect();
                    let (c, _) = eval
                        .with_memo(&y, |ev| {
                            comb.clone()
                                .map(|l| mlqmc_core::index::combination_value(&mut *ev, l, 2))
                                .collect::<Vec<f64>>()
                        })
                        .unwrap();
                    v.push((4.0 * v[6] - v[5]) / 3.0);
                    v.push((4.0 * c[10] - c[9]) / 3.0);
                    v.extend(c);
                    v
                })
                .reduce(
                    || vec![0.0; width],
                    |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
                );
            sums.into_iter().map(|s| s / rule.n as f64).collect()
        })
        .collect();
    let stat = |j: usize| {
        let q: Vec<f64> = per_shift.iter().map(|v| v[j]).collect();
        let (m, v) = shift_statistics(&q).unwrap();
        (m, v.sqrt())
    };
    for (j, l) in iso.enumerate() {
        let (m, se) = stat(j);
        println!("d2 iso {l}: {m:.15e} se {se:.3e}");
    }
    let (m, se) = stat(7);
    println!("d2 iso richardson: {m:.15e} se {se:.3e}");
    let (m, se) = stat(8);
    println!("d2 comb richardson: {m:.15e} se {se:.3e}");
    for (j, l) in comb.enumerate() {
        let (m, se) = stat(9 + j);
        println!("d2 comb {l}: {m:.15e} se {se:.3e}");
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    match args.get(1).map(String::as_str) {
        Some("d1") => d1(args.get(2).map_or(1_000_000, |s| s.parse().unwrap())),
        Some("d2") => d2(
            args.get(2).map_or(12, |s| s.parse().unwrap()),
            args.get(3).map_or(16, |s| s.parse().unwrap()),
        ),
        _ => eprintln!("usage: oracle d1 [samples] | oracle d2 [log2 N] [shifts]"),
    }
}
