//! Deterministic identity suite of the combination technique and the
//! telescoping estimators, plus reduced-scale statistical checks.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{Driver, Estimator, EstimatorParams, LevelKey, PdeEvaluator, Term, TermKind};
use crate::grid::SolverConfig;
use crate::index::{
    box_indices, combination_value, mixed_difference_dyn, shell, summation_identity_check_with, truncated_sum_with,
    MixedDifferenceFn, MultiIndex,
};
use crate::model::ProblemSpec;
use crate::sampler::{korobov_search, mc_point, shift_statistics, LatticeProvider, Purpose, ShiftSet, StreamKey};

pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub dims: Vec<usize>,
    /// Largest index component (and level) checked.
    pub max_component: i32,
    /// Random tables per dimension for the synthetic evaluator.
    pub synthetic_tables: usize,
    /// Random coefficient samples per dimension for the PDE evaluator.
    pub pde_samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub statistical: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            dims: vec![1, 2, 3],
            max_component: 4,
            synthetic_tables: 3,
            pde_samples: 2,
            seed: 0,
            tolerance: IDENTITY_TOLERANCE,
            statistical: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub identity: String,
    pub d: usize,
    pub evaluator: String,
    pub checks: usize,
    /// Largest `|lhs - rhs|` relative to the largest evaluator value involved.
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticalOutcome {
    pub name: String,
    pub z_score: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub identities: Vec<CheckOutcome>,
    pub statistical: Vec<StatisticalOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.identities.iter().all(|c| c.passed) && self.statistical.iter().all(|s| s.passed)
    }

    /// One line per failed check.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .identities
            .iter()
            .filter(|c| !c.passed)
            .map(|c| {
                format!(
                    "{} violated (d = {}, {} evaluator): relative error {:.3e}",
                    c.identity, c.d, c.evaluator, c.max_relative_error
                )
            })
            .collect();
        out.extend(
            self.statistical
                .iter()
                .filter(|s| !s.passed)
                .map(|s| format!("{} failed: |z| = {:.2} exceeds {}", s.name, s.z_score.abs(), s.threshold)),
        );
        out
    }
}

type Table = HashMap<MultiIndex, f64>;

fn lookup(table: &Table) -> impl FnMut(&MultiIndex) -> f64 + '_ {
    move |m: &MultiIndex| {
        if !m.is_nonnegative() {
            return 0.0;
        }
        *table.get(m).unwrap_or_else(|| panic!("index {m} outside the verification box"))
    }
}

fn synthetic_table(d: usize, max: i32, key: &StreamKey) -> Table {
    let mut rng = key.rng(0);
    box_indices(&MultiIndex::isotropic(d, max))
        .into_iter()
        .map(|m| (m, rng.gen::<f64>() * 2.0 - 1.0))
        .collect()
}

fn pde_table(eval: &PdeEvaluator<'_>, d: usize, max: i32, y: &[f64]) -> Result<Table> {
    box_indices(&MultiIndex::isotropic(d, max))
        .into_iter()
        .map(|m| eval.value(&m, y).map(|v| (m, v)))
        .collect()
}

struct Accumulator {
    checks: usize,
    worst: f64,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator { checks: 0, worst: 0.0 }
    }

    fn add(&mut self, lhs: f64, rhs: f64, scale: f64) {
        self.checks += 1;
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(scale).max(1e-300);
        // NaN must fail
        if !(rel <= self.worst) {
            self.worst = if rel.is_nan() { f64::INFINITY } else { rel };
        }
    }
}

/// Runs the four identities on one value table.
fn table_identities(md: MixedDifferenceFn, table: &Table, d: usize, max: i32) -> Vec<(&'static str, Accumulator)> {
    let scale = table.values().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut summation = Accumulator::new();
    for ell in box_indices(&MultiIndex::isotropic(d, max)) {
        let c = summation_identity_check_with(md, lookup(table), &ell);
        summation.add(c.lhs, c.rhs, scale);
    }
    let mut truncated = Accumulator::new();
    let mut telescoping = Accumulator::new();
    let mut shells = Accumulator::new();
    for level in 0..=max as i64 {
        let trunc = truncated_sum_with(md, lookup(table), level, d);
        let comb = combination_value(lookup(table), level, d);
        truncated.add(trunc, comb, scale);

        let mut f = lookup(table);
        let iso = |l: i64, f: &mut dyn FnMut(&MultiIndex) -> f64| {
            if l < 0 {
                0.0
            } else {
                f(&MultiIndex::isotropic(d, l as i32))
            }
        };
        let tele: f64 = (0..=level).map(|l| iso(l, &mut f) - iso(l - 1, &mut f)).sum();
        telescoping.add(tele, iso(level, &mut f), scale);

        let mut f = lookup(table);
        let shell_sum: f64 = shell(level as usize, d).iter().map(|m| md(&mut f, m)).sum();
        let prev = combination_value(lookup(table), level - 1, d);
        shells.add(shell_sum, comb - prev, scale);
    }
    vec![
        ("summation identity", summation),
        ("truncated sum vs binomial combination", truncated),
        ("isotropic telescoping", telescoping),
        ("per-sample shell identity", shells),
    ]
}

/// Checks the estimator integrands themselves: MLMC differences telescope to
/// `P_L(y)` and combination-driver samples equal differences of combination
/// values.
fn integrand_identities(eval: &PdeEvaluator<'_>, max: i32, y: &[f64]) -> Result<Vec<(&'static str, Accumulator)>> {
    let mut tele = Accumulator::new();
    let mut shells = Accumulator::new();
    let mut sum = 0.0;
    let mut prev_comb = 0.0;
    for level in 0..=max as u32 {
        let t = Term::new(LevelKey::Level(level), TermKind::IsoDifference).sample(eval, y)?;
        sum += t.value;
        let direct = eval.isotropic(level as i64, y)?;
        tele.add(sum, direct, direct.abs());
        let s = Term::new(LevelKey::Level(level), TermKind::ShellDifference).sample(eval, y)?;
        let comb = eval.combination(level as i64, y)?;
        shells.add(s.value, comb - prev_comb, comb.abs().max(prev_comb.abs()));
        prev_comb = comb;
    }
    Ok(vec![
        ("estimator telescoping", tele),
        ("estimator shell identity", shells),
    ])
}

/// The identity suite with an injectable mixed difference.
pub fn identity_suite_with(md: MixedDifferenceFn, cfg: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![];
    let solver = SolverConfig::default();
    for &d in &cfg.dims {
        let mut merged: Vec<(String, String, Accumulator)> = vec![];
        let mut merge = |evaluator: &str, results: Vec<(&'static str, Accumulator)>| {
            for (name, acc) in results {
                match merged.iter_mut().find(|(n, e, _)| n == name && e == evaluator) {
                    Some((_, _, m)) => {
                        m.checks += acc.checks;
                        if !(acc.worst <= m.worst) {
                            m.worst = acc.worst;
                        }
                    }
                    None => merged.push((name.to_string(), evaluator.to_string(), acc)),
                }
            }
        };
        for t in 0..cfg.synthetic_tables {
            let key = StreamKey::new(cfg.seed, Purpose::Test, d as u64, t as u64);
            let table = synthetic_table(d, cfg.max_component, &key);
            merge("synthetic", table_identities(md, &table, d, cfg.max_component));
        }
        let spec = ProblemSpec::builtin(d, 4, crate::model::DEFAULT_KAPPA)?;
        let eval = PdeEvaluator::new(&spec, &solver);
        let key = StreamKey::new(cfg.seed, Purpose::Test, 100 + d as u64, 0);
        for i in 0..cfg.pde_samples {
            let y = mc_point(spec.s, &key, i as u64);
            let table = pde_table(&eval, d, cfg.max_component, &y)?;
            merge("pde", table_identities(md, &table, d, cfg.max_component));
            merge("pde", integrand_identities(&eval, cfg.max_component, &y)?);
        }
        for (identity, evaluator, acc) in merged {
            out.push(CheckOutcome {
                identity,
                d,
                evaluator,
                checks: acc.checks,
                max_relative_error: acc.worst,
                passed: acc.worst <= cfg.tolerance,
            });
        }
    }
    Ok(out)
}

pub fn identity_suite(cfg: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    identity_suite_with(mixed_difference_dyn, cfg)
}

fn z_outcome(name: &str, diff: f64, se: f64) -> StatisticalOutcome {
    let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    StatisticalOutcome {
        name: name.into(),
        z_score: z,
        threshold: 4.0,
        passed: z.abs() <= 4.0,
    }
}

/// Lattice unbiasedness on a product integrand with known integral, and
/// fixed-level MLMC against a direct lattice estimate of `E[P_L]`.
pub fn statistical_checks(seed: u64) -> Result<Vec<StatisticalOutcome>> {
    let mut out = vec![];

    let s = 4;
    let rule = korobov_search(s, 256, 64)?.rule;
    let shifts = ShiftSet::generate(s, 100, StreamKey::new(seed, Purpose::Test, 1, 0));
    let f = |y: &[f64]| y.iter().map(|&t| 1.0 + 0.5 * t * t).product::<f64>();
    let exact = (1.0 + 0.5 / 12.0f64).powi(s as i32);
    let mut y = vec![0.0; s];
    let q: Vec<f64> = shifts
        .shifts
        .iter()
        .map(|sh| {
            (0..rule.n)
                .map(|i| {
                    rule.point_into(i, sh, &mut y);
                    f(&y)
                })
                .sum::<f64>()
                / rule.n as f64
        })
        .collect();
    let (mean, var) = shift_statistics(&q)?;
    out.push(z_outcome("shifted lattice unbiasedness", mean - exact, var.sqrt()));

    let spec = ProblemSpec::builtin(1, 4, crate::model::DEFAULT_KAPPA)?;
    let solver = SolverConfig::default();
    let level = 3;
    let lattice = LatticeProvider::korobov(spec.s, 64);
    let reference = {
        let eval = PdeEvaluator::new(&spec, &solver);
        let rule = lattice.rule_for(1024)?;
        let shifts = ShiftSet::generate(spec.s, 8, StreamKey::new(seed, Purpose::Test, 2, 0));
        let mut y = vec![0.0; spec.s];
        let mut q = vec![];
        for sh in &shifts.shifts {
            let mut acc = 0.0;
            for i in 0..rule.n {
                rule.point_into(i, sh, &mut y);
                acc += eval.isotropic(level, &y)?;
            }
            q.push(acc / rule.n as f64);
        }
        shift_statistics(&q)?
    };
    let reps = 20;
    let mut est = vec![];
    for rep in 0..reps {
        let params = EstimatorParams {
            seed,
            replica: rep,
            fixed_level: Some(level as usize),
            ..EstimatorParams::default()
        };
        let e = Estimator::new(&spec, &solver, Driver::Mlmc, params);
        est.push(e.estimate(2e-3)?.estimate);
    }
    let n = reps as f64;
    let m = est.iter().sum::<f64>() / n;
    let v = est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0);
    out.push(z_outcome(
        "fixed-level MLMC unbiasedness",
        m - reference.0,
        (v / n + reference.1).sqrt(),
    ));
    Ok(out)
}

pub fn verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    verify_with(mixed_difference_dyn, cfg)
}

pub fn verify_with(md: MixedDifferenceFn, cfg: &VerifyConfig) -> Result<VerifyReport> {
    let identities = identity_suite_with(md, cfg)?;
    let statistical = if cfg.statistical { statistical_checks(cfg.seed)? } else { vec![] };
    Ok(VerifyReport { identities, statistical })
}

/// Mixed difference with the sign of the odd corners flipped, for fault
/// injection.
pub fn tampered_mixed_difference(evaluator: &mut dyn FnMut(&MultiIndex) -> f64, ell: &MultiIndex) -> f64 {
    let d = ell.dim();
    let mut total = 0.0;
    for mask in 0u32..(1 << d) {
        let idx = ell.minus_corner(mask);
        if idx.is_nonnegative() {
            total += evaluator(&idx);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyConfig {
        VerifyConfig {
            dims: vec![1, 2],
            max_component: 3,
            synthetic_tables: 2,
            pde_samples: 1,
            statistical: false,
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn identities_hold() {
        let out = identity_suite(&quick()).unwrap();
        assert!(out.iter().all(|c| c.passed), "{out:?}");
        assert!(out.iter().any(|c| c.evaluator == "pde"));
    }

    #[test]
    fn tampered_sign_is_caught_by_name() {
        let report = verify_with(tampered_mixed_difference, &quick()).unwrap();
        assert!(!report.passed());
        let failures = report.failures();
        assert!(failures.iter().any(|f| f.contains("summation identity")));
        assert!(failures.iter().all(|f| !f.contains("isotropic telescoping")));
    }
}
