//! Screening, level selection, allocation and the main sampling loop shared
//! by all drivers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SolverConfig;
use crate::index::{IndexSet, MultiIndex};
use crate::model::ProblemSpec;
use crate::rates::{fit_qmc_exponent, fit_rates_windowed, Abscissa, Rate, RateFit};
use crate::sampler::{mc_point, LatticeProvider, Purpose, ShiftSet, StreamKey, MAX_LOG2_POINTS};

use super::allocation::{allocate_samples, select_finest_level, BiasModel, Rounding, VARIANCE_FLOOR};
use super::evaluator::{PdeEvaluator, Term, TermKind, TermSample};
use super::{Driver, EstimatorParams, EstimatorReport, LevelKey, LevelRecord, VarianceBudget};

const SCREEN_SHIFT_FLAG: u64 = 1 << 61;
const P_FIT_FLAG: u64 = 1 << 60;

/// Pilot-phase output: per-term statistics and the fitted rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screening {
    pub driver: Driver,
    pub max_level: usize,
    pub records: Vec<LevelRecord>,
    /// Variance of the finest-grid value `P_l` per record (isotropic terms).
    pub fine_variances: Vec<f64>,
    pub fit: Option<RateFit>,
    /// QMC variance-of-mean versus `N` behind the `p` fit.
    pub p_points: Vec<(u64, f64)>,
    /// Exponent used for allocation: the fitted `p` clamped to `[1, 2]`, or
    /// 1 for MC drivers.
    pub p: f64,
    pub bias_model: Option<BiasModel>,
    pub cost: f64,
    pub notes: Vec<String>,
}

/// Drives one estimator on one problem.
#[derive(Debug, Clone)]
pub struct Estimator<'a> {
    pub spec: &'a ProblemSpec,
    pub solver: &'a SolverConfig,
    pub lattice: Option<&'a LatticeProvider>,
    pub driver: Driver,
    pub params: EstimatorParams,
}

struct TermStats {
    mean: f64,
    raw_variance: f64,
    variance_of_mean: f64,
    cost: f64,
}

fn sample_stats(samples: &[TermSample]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.value).sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let cost = samples.iter().map(|s| s.cost).sum::<f64>() / n;
    (mean, var, cost)
}

fn fine_variance(samples: &[TermSample]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.fine).sum::<f64>() / n;
    samples.iter().map(|s| (s.fine - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

impl<'a> Estimator<'a> {
    pub fn new(spec: &'a ProblemSpec, solver: &'a SolverConfig, driver: Driver, params: EstimatorParams) -> Self {
        Estimator {
            spec,
            solver,
            lattice: None,
            driver,
            params,
        }
    }

    pub fn with_lattice(mut self, lattice: &'a LatticeProvider) -> Self {
        self.lattice = Some(lattice);
        self
    }

    fn evaluator(&self) -> PdeEvaluator<'a> {
        PdeEvaluator::new(self.spec, self.solver)
    }

    fn screen_kind(&self) -> TermKind {
        match self.driver {
            Driver::Mc | Driver::Mlmc | Driver::Mlqmc => TermKind::IsoDifference,
            Driver::Mimc | Driver::Miqmc => TermKind::MixedDifference,
            Driver::MlmcCombination => TermKind::ShellDifference,
        }
    }

    fn main_kind(&self) -> TermKind {
        match self.driver {
            Driver::Mc => TermKind::IsoValue,
            _ => self.screen_kind(),
        }
    }

    pub fn abscissa(&self) -> Abscissa {
        if self.driver.is_multi_index() {
            Abscissa::Order1Norm
        } else {
            Abscissa::ScalarLevel
        }
    }

    /// Terms of the estimator with finest level `level`.
    pub fn terms(&self, level: usize, kind: TermKind) -> Vec<Term> {
        match kind {
            TermKind::IsoValue => vec![Term::new(LevelKey::Level(level as u32), kind)],
            TermKind::MixedDifference => IndexSet::simplex(self.spec.d, level)
                .members()
                .iter()
                .map(|m| Term::new(LevelKey::Index(m.clone()), kind))
                .collect(),
            _ => (0..=level as u32).map(|l| Term::new(LevelKey::Level(l), kind)).collect(),
        }
    }

    fn lattice(&self) -> Result<&'a LatticeProvider> {
        self.lattice
            .ok_or_else(|| Error::Config(format!("driver {} needs a lattice rule source", self.driver)))
    }

    fn key(&self, purpose: Purpose, slot: u64) -> StreamKey {
        StreamKey::new(self.params.seed, purpose, slot, self.params.replica)
    }

    /// Evaluates `term` at the pseudo-random points `range` of stream `key`.
    fn mc_samples(&self, term: &Term, key: StreamKey, range: std::ops::Range<u64>) -> Result<Vec<TermSample>> {
        let eval = self.evaluator();
        let s = self.spec.s;
        range
            .into_par_iter()
            .map(|i| term.sample(&eval, &mc_point(s, &key, i)))
            .collect()
    }

    /// Evaluates `term` on `n` lattice points under every shift; returns the
    /// samples grouped by shift.
    fn qmc_samples(&self, term: &Term, n: u64, shifts: &ShiftSet) -> Result<Vec<Vec<TermSample>>> {
        let rule = self.lattice()?.rule_for(n)?;
        let eval = self.evaluator();
        let s = self.spec.s;
        let r = shifts.len() as u64;
        let flat: Vec<TermSample> = (0..r * n)
            .into_par_iter()
            .map(|idx| {
                let mut y = vec![0.0; s];
                rule.point_into(idx % n, &shifts.shifts[(idx / n) as usize], &mut y);
                term.sample(&eval, &y)
            })
            .collect::<Result<_>>()?;
        Ok(flat.chunks(n as usize).map(|c| c.to_vec()).collect())
    }

    fn qmc_stats(groups: &[Vec<TermSample>]) -> Result<TermStats> {
        let per_shift: Vec<f64> = groups.iter().map(|g| g.iter().map(|s| s.value).sum::<f64>() / g.len() as f64).collect();
        let (mean, variance_of_mean) = crate::sampler::shift_statistics(&per_shift)?;
        let all: Vec<TermSample> = groups.iter().flatten().copied().collect();
        let (_, raw_variance, cost) = sample_stats(&all);
        Ok(TermStats {
            mean,
            raw_variance,
            variance_of_mean,
            cost,
        })
    }

    fn check_ready(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        if self.driver.is_qmc() {
            self.lattice()?;
        }
        Ok(())
    }

    /// Pilot run over the terms up to the screening level.
    pub fn screen(&self) -> Result<Screening> {
        self.check_ready()?;
        let d = self.spec.d;
        let level = self.params.screen_level(d, self.driver);
        let kind = self.screen_kind();
        let mut records = vec![];
        let mut fine_variances = vec![];
        let mut cost = 0.0;
        let mut notes = vec![];
        for term in self.terms(level, kind) {
            if term.is_structurally_zero(d) {
                records.push(LevelRecord::structural_zero(term.key.clone()));
                fine_variances.push(0.0);
                continue;
            }
            let slot = term.key.slot();
            let mut rec = if self.driver.is_qmc() {
                let n = 1u64 << self.params.screen_log2_points;
                let shifts = ShiftSet::generate(
                    self.spec.s,
                    self.params.screen_shifts,
                    self.key(Purpose::Screening, slot | SCREEN_SHIFT_FLAG),
                );
                let groups = self.qmc_samples(&term, n, &shifts)?;
                let st = Self::qmc_stats(&groups)?;
                let all: Vec<TermSample> = groups.concat();
                fine_variances.push(fine_variance(&all));
                let mut rec = LevelRecord::new(term.key.clone(), st.mean, st.raw_variance, st.cost, n, shifts.len() as u64);
                rec.variance_of_mean = st.variance_of_mean;
                rec
            } else {
                let n = self.params.screen_samples as u64;
                let samples = self.mc_samples(&term, self.key(Purpose::Screening, slot), 0..n)?;
                fine_variances.push(fine_variance(&samples));
                let (mean, var, c) = sample_stats(&samples);
                LevelRecord::new(term.key.clone(), mean, var, c, n, 1)
            };
            rec.modeled_cost_per_sample = term.modeled_cost(d);
            cost += rec.total_cost;
            records.push(rec);
        }

        let nonzero: Vec<LevelRecord> = records.iter().filter(|r| r.n * r.r > 1).cloned().collect();
        let mut fit = match fit_rates_windowed(&nonzero, self.abscissa(), self.params.fit_window) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("rates not fitted: {e}"));
                None
            }
        };

        let mut p = 1.0;
        let mut p_points = vec![];
        if self.driver.is_qmc() {
            let term = self
                .terms(level, kind)
                .into_iter()
                .find(|t| !t.is_structurally_zero(d))
                .ok_or_else(|| Error::Estimator("no non-trivial term to fit the QMC exponent on".into()))?;
            let shifts = ShiftSet::generate(
                self.spec.s,
                self.params.screen_shifts,
                self.key(Purpose::Screening, term.key.slot() | P_FIT_FLAG),
            );
            let (lo, hi) = self.params.p_log2_range;
            for m in lo..=hi {
                let n = 1u64 << m;
                let groups = self.qmc_samples(&term, n, &shifts)?;
                let st = Self::qmc_stats(&groups)?;
                cost += st.cost * (n * shifts.len() as u64) as f64;
                p_points.push((n, st.variance_of_mean));
            }
            match fit_qmc_exponent(&p_points) {
                Ok(q) => {
                    p = q.p.value.clamp(1.0, 2.0);
                    if q.inflated {
                        notes.push("QMC variance is not monotone in N; p standard error doubled".into());
                    }
                    if let Some(f) = fit.as_mut() {
                        f.p = Some(q.p);
                    }
                }
                Err(e) => notes.push(format!("p not fitted ({e}); allocation uses p = 1")),
            }
        }

        let bias_model = match BiasModel::fit(self.level_contributions(&records), self.params.bias_tail_points) {
            Ok(m) => Some(m),
            Err(e) => {
                notes.push(format!("no bias model: {e}"));
                None
            }
        };
        Ok(Screening {
            driver: self.driver,
            max_level: level,
            records,
            fine_variances,
            fit,
            p_points,
            p,
            bias_model,
            cost,
            notes,
        })
    }

    /// `M_k = sum |mean|` over the records with abscissa value `k`.
    fn level_contributions(&self, records: &[LevelRecord]) -> Vec<(i64, f64)> {
        let mut out: Vec<(i64, f64)> = vec![];
        for r in records {
            let k = r.key.order1();
            match out.iter_mut().find(|(x, _)| *x == k) {
                Some(e) => e.1 += r.mean.abs(),
                None => out.push((k, r.mean.abs())),
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// Variance constant of `term` in allocation units: `V[Y]` for MC and
    /// `var_of_mean N^p R` for QMC, extrapolated with the fitted `beta`
    /// beyond the screened terms.
    fn variance_constant(&self, screening: &Screening, term: &Term) -> Result<f64> {
        let unit = |i: usize| {
            let r = &screening.records[i];
            if self.driver.is_qmc() {
                r.variance_of_mean * (r.n as f64).powf(screening.p) * r.r as f64
            } else {
                r.raw_variance
            }
        };
        let find = |key: &LevelKey| screening.records.iter().position(|r| &r.key == key);
        if term.kind == TermKind::IsoValue {
            let l = term.key.scalar_level().min(screening.max_level as i64) as u32;
            let i = find(&LevelKey::Level(l)).expect("screened level");
            return Ok(screening.fine_variances[i]);
        }
        if let Some(i) = find(&term.key) {
            return Ok(unit(i));
        }
        let top = screening.max_level as i64;
        let parent = match &term.key {
            LevelKey::Level(_) => LevelKey::Level(top as u32),
            LevelKey::Index(m) => {
                let mut levels = m.levels().to_vec();
                while levels.iter().map(|&l| l as i64).sum::<i64>() > top {
                    let (j, _) = levels.iter().enumerate().fold((0, i32::MIN), |b, (j, &l)| if l > b.1 { (j, l) } else { b });
                    levels[j] -= 1;
                }
                LevelKey::Index(MultiIndex::new(levels))
            }
        };
        let beta = screening
            .fit
            .as_ref()
            .and_then(|f| f.beta)
            .ok_or_else(|| Error::Estimator(format!("cannot extrapolate the variance of term {}: beta not fitted", term.key)))?;
        let i = find(&parent).expect("parent term was screened");
        let gap = (term.key.order1() - parent.order1()) as f64;
        Ok(unit(i) * 2f64.powf(-beta.value.max(0.0) * gap))
    }

    /// Full run at accuracy `eps` using a previous pilot.
    pub fn run(&self, screening: &Screening, eps: f64) -> Result<EstimatorReport> {
        self.check_ready()?;
        if !(eps > 0.0 && eps < (-1f64).exp()) {
            return Err(Error::Config(format!("eps must lie in (0, 1/e), got {eps}")));
        }
        let d = self.spec.d;
        let qmc = self.driver.is_qmc();
        let mut notes = screening.notes.clone();
        let level = match self.params.fixed_level {
            Some(l) => l,
            None => {
                let model = screening
                    .bias_model
                    .as_ref()
                    .ok_or_else(|| Error::Estimator(format!("cannot choose L: {}", screening.notes.join("; "))))?;
                select_finest_level(model, eps, self.params.min_level, self.params.max_level)?
            }
        };
        let terms = self.terms(level, self.main_kind());
        let active: Vec<usize> = (0..terms.len()).filter(|&i| !terms[i].is_structurally_zero(d)).collect();
        let r = if qmc { self.params.shifts as u64 } else { 1 };
        let p = if qmc { screening.p } else { 1.0 };

        let mut v = vec![];
        let mut c = vec![];
        for &i in &active {
            v.push(self.variance_constant(screening, &terms[i])?.max(VARIANCE_FLOOR) / r as f64);
            c.push(terms[i].modeled_cost(d) * r as f64);
        }
        let mut counts = vec![1u64; terms.len()];
        let mut planned_modeled_cost = 0.0;
        if !active.is_empty() {
            let rounding = if qmc { Rounding::PowerOfTwo } else { Rounding::Integer };
            let alloc = allocate_samples(&v, &c, eps, p, rounding)?;
            planned_modeled_cost = alloc.modeled_cost;
            for (k, &i) in active.iter().enumerate() {
                counts[i] = alloc.counts[k];
                if qmc && counts[i] > 1 << MAX_LOG2_POINTS {
                    notes.push(format!("term {} capped at 2^{MAX_LOG2_POINTS} points", terms[i].key));
                    counts[i] = 1 << MAX_LOG2_POINTS;
                }
            }
        }

        let mut stats: Vec<Option<TermStats>> = (0..terms.len()).map(|_| None).collect();
        if qmc {
            let mut shift_sets = vec![];
            for &i in &active {
                let shifts = ShiftSet::generate(self.spec.s, r as usize, self.key(Purpose::Shift, terms[i].key.slot()));
                stats[i] = Some(Self::qmc_stats(&self.qmc_samples(&terms[i], counts[i], &shifts)?)?);
                shift_sets.push(shifts);
            }
            let target = 0.5 * eps * eps;
            let mut doublings = 0;
            loop {
                let total: f64 = stats.iter().flatten().map(|s| s.variance_of_mean).sum();
                if total <= target {
                    break;
                }
                let pick = active
                    .iter()
                    .enumerate()
                    .filter(|&(_, &i)| counts[i] < 1 << MAX_LOG2_POINTS)
                    .map(|(k, &i)| {
                        let st = stats[i].as_ref().unwrap();
                        (k, i, st.variance_of_mean / (c[k] * counts[i] as f64))
                    })
                    .filter(|e| e.2 > 0.0)
                    .max_by(|a, b| a.2.total_cmp(&b.2));
                let Some((k, i, _)) = pick else { break };
                if doublings >= self.params.max_doublings {
                    notes.push(format!(
                        "variance {total:.3e} still above the target {target:.3e} after {doublings} doublings"
                    ));
                    break;
                }
                counts[i] *= 2;
                doublings += 1;
                stats[i] = Some(Self::qmc_stats(&self.qmc_samples(&terms[i], counts[i], &shift_sets[k])?)?);
            }
        } else {
            let mut samples: Vec<Vec<TermSample>> = vec![vec![]; terms.len()];
            for &i in &active {
                samples[i] = self.mc_samples(&terms[i], self.key(Purpose::Estimate, terms[i].key.slot()), 0..counts[i])?;
            }
            for _ in 0..if active.is_empty() { 0 } else { self.params.topup_rounds } {
                let v_hat: Vec<f64> = active
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let (_, var, _) = sample_stats(&samples[i]);
                        match samples[i].len() {
                            0 | 1 => v[k],
                            n if n < 20 => var.max(v[k]),
                            _ => var,
                        }
                    })
                    .collect();
                let alloc = allocate_samples(&v_hat, &c, eps, 1.0, Rounding::Integer)?;
                let mut grew = false;
                for (k, &i) in active.iter().enumerate() {
                    let want = alloc.counts[k];
                    if want > counts[i] {
                        let key = self.key(Purpose::Estimate, terms[i].key.slot());
                        let more = self.mc_samples(&terms[i], key, counts[i]..want)?;
                        samples[i].extend(more);
                        counts[i] = want;
                        grew = true;
                    }
                }
                if !grew {
                    break;
                }
            }
            for (k, &i) in active.iter().enumerate() {
                let (mean, var, cost) = sample_stats(&samples[i]);
                let n = samples[i].len() as f64;
                let raw_variance = if samples[i].len() > 1 { var } else { v[k] };
                stats[i] = Some(TermStats {
                    mean,
                    raw_variance,
                    variance_of_mean: raw_variance / n,
                    cost,
                });
            }
        }

        let mut levels = vec![];
        for (i, term) in terms.iter().enumerate() {
            let rec = match &stats[i] {
                None => LevelRecord::structural_zero(term.key.clone()),
                Some(st) => {
                    let mut rec = LevelRecord::new(term.key.clone(), st.mean, st.raw_variance, st.cost, counts[i], r);
                    rec.variance_of_mean = st.variance_of_mean;
                    rec.modeled_cost_per_sample = term.modeled_cost(d);
                    rec
                }
            };
            levels.push(rec);
        }

        let estimate = levels.iter().map(|r| r.mean).sum();
        let variance: f64 = levels.iter().map(|r| r.variance_of_mean).sum();
        let bias_estimate = match &screening.bias_model {
            Some(m) => m.tail(level as i64),
            None => {
                notes.push("bias estimate limited to screened levels".into());
                self.level_contributions(&screening.records)
                    .iter()
                    .filter(|&&(k, _)| k > level as i64)
                    .map(|&(_, m)| m)
                    .sum()
            }
        };
        let eps_sq = eps * eps;
        let budget = VarianceBudget {
            bias_sq: bias_estimate * bias_estimate,
            variance,
            eps_sq,
        };
        let mut fitted_rates = screening.fit.clone();
        if let (Some(f), false) = (fitted_rates.as_mut(), qmc) {
            f.p = Some(Rate::exact(1.0));
        }
        Ok(EstimatorReport {
            driver: self.driver,
            eps,
            estimate,
            finest_level: level,
            bias_estimate,
            within_budget: budget.bias_sq + budget.variance <= eps_sq,
            variance_budget: budget,
            total_cost: levels.iter().map(|r| r.total_cost).sum(),
            modeled_cost: levels.iter().map(|r| r.modeled_total_cost()).sum(),
            planned_modeled_cost,
            screening_cost: screening.cost,
            p,
            fitted_rates,
            bias_model: screening.bias_model.clone(),
            levels,
            notes,
            config_echo: self.params.clone(),
        })
    }

    /// Pilot followed by the main run.
    pub fn estimate(&self, eps: f64) -> Result<EstimatorReport> {
        let screening = self.screen()?;
        self.run(&screening, eps)
    }
}

fn run_driver(
    spec: &ProblemSpec,
    lattice: Option<&LatticeProvider>,
    driver: Driver,
    eps: f64,
    params: &EstimatorParams,
) -> Result<EstimatorReport> {
    let solver = SolverConfig::default();
    let mut est = Estimator::new(spec, &solver, driver, params.clone());
    est.lattice = lattice;
    est.estimate(eps)
}

/// Single-level Monte Carlo on the isotropic grid chosen by the bias rule.
pub fn mc_run(spec: &ProblemSpec, eps: f64, params: &EstimatorParams) -> Result<EstimatorReport> {
    run_driver(spec, None, Driver::Mc, eps, params)
}

pub fn mlmc_run(spec: &ProblemSpec, eps: f64, params: &EstimatorParams) -> Result<EstimatorReport> {
    run_driver(spec, None, Driver::Mlmc, eps, params)
}

pub fn mimc_run(spec: &ProblemSpec, eps: f64, params: &EstimatorParams) -> Result<EstimatorReport> {
    run_driver(spec, None, Driver::Mimc, eps, params)
}

pub fn mlmc_combination_run(spec: &ProblemSpec, eps: f64, params: &EstimatorParams) -> Result<EstimatorReport> {
    run_driver(spec, None, Driver::MlmcCombination, eps, params)
}

pub fn mlqmc_run(
    spec: &ProblemSpec,
    lattice: &LatticeProvider,
    eps: f64,
    params: &EstimatorParams,
) -> Result<EstimatorReport> {
    run_driver(spec, Some(lattice), Driver::Mlqmc, eps, params)
}

pub fn miqmc_run(
    spec: &ProblemSpec,
    lattice: &LatticeProvider,
    eps: f64,
    params: &EstimatorParams,
) -> Result<EstimatorReport> {
    run_driver(spec, Some(lattice), Driver::Miqmc, eps, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin(d: usize) -> ProblemSpec {
        ProblemSpec::builtin(d, 4, 0.9).unwrap()
    }

    #[test]
    fn large_eps_gives_single_level() {
        let spec = builtin(1);
        let r = mlmc_run(&spec, 0.3, &EstimatorParams::default()).unwrap();
        assert_eq!(r.finest_level, 0);
        assert_eq!(r.levels.len(), 1);
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn mlmc_d1_is_accurate_and_budgeted() {
        let spec = builtin(1);
        let r = mlmc_run(&spec, 1e-3, &EstimatorParams::default()).unwrap();
        assert!(r.finest_level >= 2);
        assert!((r.estimate - 1.0 / 12.0).abs() < 0.02, "{}", r.estimate);
        for rec in &r.levels {
            assert!((rec.total_cost - (rec.n * rec.r) as f64 * rec.cost_per_sample).abs() <= 1e-9 * rec.total_cost.max(1.0));
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let spec = builtin(2);
        let p = EstimatorParams {
            seed: 7,
            ..EstimatorParams::default()
        };
        let a = mimc_run(&spec, 2e-3, &p).unwrap();
        let b = mimc_run(&spec, 2e-3, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn combination_equals_mlmc_in_one_dimension() {
        let spec = builtin(1);
        let p = EstimatorParams::default();
        let a = mlmc_run(&spec, 1e-3, &p).unwrap();
        let b = mlmc_combination_run(&spec, 1e-3, &p).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.finest_level, b.finest_level);
    }

    #[test]
    fn qmc_needs_a_lattice() {
        let spec = builtin(1);
        let solver = SolverConfig::default();
        let est = Estimator::new(&spec, &solver, Driver::Mlqmc, EstimatorParams::default());
        assert!(matches!(est.screen(), Err(Error::Config(_))));
    }

    #[test]
    fn miqmc_meets_variance_target() {
        let spec = builtin(2);
        let lattice = LatticeProvider::korobov(spec.s, 64);
        let eps = 2e-3;
        let r = miqmc_run(&spec, &lattice, eps, &EstimatorParams::default()).unwrap();
        assert!(r.variance_budget.variance <= 0.5 * eps * eps * 1.05);
        assert!(r.levels.iter().all(|l| l.n.is_power_of_two()));
        assert!((1.0..=2.0).contains(&r.p));
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let spec = builtin(1);
        assert!(matches!(mlmc_run(&spec, 0.5, &EstimatorParams::default()), Err(Error::Config(_))));
    }

    #[test]
    fn constant_integrand_allocates_minimum() {
        let spec = ProblemSpec::poisson_constant(1).unwrap();
        let lattice = LatticeProvider::korobov(spec.s, 16);
        let params = EstimatorParams {
            fixed_level: Some(3),
            ..EstimatorParams::default()
        };
        let r = mlqmc_run(&spec, &lattice, 1e-3, &params).unwrap();
        assert!(r.levels.iter().all(|l| l.n == 1 && l.variance_of_mean < 1e-30), "{:?}", r.levels);
        assert!((r.estimate - (1.0 / 12.0 - 1.0 / 12.0 / 64.0)).abs() < 1e-12);
    }
}
