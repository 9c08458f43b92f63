//! The four subcommands. Each writes its result files and returns the
//! process status plus a human summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mlqmc_core::estimators::{Estimator, Screening};
use mlqmc_core::rates::{fit_rates_windowed, linear_fit, theorem_verdict, Abscissa, FitWindow, TheoremVerdict};
use mlqmc_core::sampler::LatticeProvider;
use mlqmc_core::verify::{self, VerifyConfig};
use mlqmc_core::index::{mixed_difference_dyn, MixedDifferenceFn};
use mlqmc_core::{Driver, Error, EstimatorReport, LevelKey, ProblemSpec, SolverConfig};

use crate::config::RunConfig;
use crate::output::{self, BundleRecord};
use crate::{CliResult, Status};

pub struct Outcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Setup {
    driver: Driver,
    spec: ProblemSpec,
    solver: SolverConfig,
    params: mlqmc_core::EstimatorParams,
    lattice: Option<LatticeProvider>,
}

fn setup(config: &RunConfig) -> CliResult<Setup> {
    let driver = config.driver()?;
    let spec = config.problem()?;
    let params = config.params()?;
    let solver = config.solver()?;
    let lattice = if driver.is_qmc() { Some(config.lattice(spec.s)?) } else { None };
    Ok(Setup {
        driver,
        spec,
        solver,
        params,
        lattice,
    })
}

impl Setup {
    fn estimator(&self) -> Estimator<'_> {
        let est = Estimator::new(&self.spec, &self.solver, self.driver, self.params.clone());
        match &self.lattice {
            Some(l) => est.with_lattice(l),
            None => est,
        }
    }
}

fn finish(config: &RunConfig, name: &str, records: &[BundleRecord], mut files: Vec<PathBuf>) -> CliResult<Vec<PathBuf>> {
    if output::wants_jsonl(config) {
        files.insert(0, output::write_bundle(&config.output.dir, name, records)?);
    }
    Ok(files)
}

fn failed(config: &RunConfig, name: &str, mut records: Vec<BundleRecord>, stage: &str, err: Error, summary: String) -> CliResult<Outcome> {
    records.push(output::failure(stage, &err));
    let files = finish(config, name, &records, vec![])?;
    Ok(Outcome {
        status: Status::Estimator,
        files,
        summary: format!("{summary}{stage} failed: {err}\n"),
    })
}

fn screening_summary(s: &Screening) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "screening {} up to level {} ({} terms, cost {:.4e})", s.driver, s.max_level, s.records.len(), s.cost);
    let _ = writeln!(out, "{:>12} {:>13} {:>12} {:>12} {:>6} {:>4}", "key", "mean", "raw_var", "cost", "N", "R");
    for r in &s.records {
        let _ = writeln!(
            out,
            "{:>12} {:>13.5e} {:>12.4e} {:>12.4e} {:>6} {:>4}",
            r.key.to_string(),
            r.mean,
            r.raw_variance,
            r.cost_per_sample,
            r.n,
            r.r
        );
    }
    if let Some(fit) = &s.fit {
        let show = |name: &str, r: &Option<mlqmc_core::rates::Rate>| match r {
            Some(r) => format!("{name} = {:.3} +- {:.3}", r.value, r.std_error),
            None => format!("{name} = n/a"),
        };
        let _ = writeln!(
            out,
            "rates: {}, {}, {}, {}",
            show("alpha", &fit.alpha),
            show("beta", &fit.beta),
            show("gamma", &fit.gamma),
            show("p", &fit.p)
        );
    }
    for n in &s.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

fn report_summary(r: &EstimatorReport) -> String {
    format!(
        "eps {:.3e}: estimate {:.8e}, L = {}, bias^2 {:.3e} + var {:.3e} {} eps^2 {:.3e}, modeled cost {:.4e}, measured cost {:.4e}\n",
        r.eps,
        r.estimate,
        r.finest_level,
        r.variance_budget.bias_sq,
        r.variance_budget.variance,
        if r.within_budget { "<=" } else { ">" },
        r.variance_budget.eps_sq,
        r.modeled_cost,
        r.total_cost
    )
}

fn verdict_summary(v: &TheoremVerdict) -> String {
    let slope = v
        .measured_cost_slope
        .map(|s| format!(", measured cost slope {s:.3}"))
        .unwrap_or_default();
    format!(
        "verdict: {:?} regime (margin {:.3} +- {:.3}), predicted cost eps^-{:.3} |log eps|^{:.2}{slope}\n",
        v.regime, v.margin, v.band, v.predicted_exponent, v.log_power
    )
}

/// Slope of `log modeled cost` against `log eps`; needs two distinct values.
pub fn cost_slope(reports: &[EstimatorReport]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| r.modeled_cost > 0.0)
        .map(|r| (r.eps.ln(), r.modeled_cost.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&xs, &ys).ok().map(|f| f.slope)
}

pub fn screen(config: &RunConfig) -> CliResult<Outcome> {
    let setup = setup(config)?;
    let mut records = vec![output::header("screen", config)];
    let screening = match setup.estimator().screen() {
        Ok(s) => s,
        Err(e) => return failed(config, "screen", records, "screening", e, String::new()),
    };
    let mut files = vec![];
    if output::wants_csv(config) {
        let path = config.output.dir.join(format!("screen_{}.csv", setup.driver));
        output::write_table(&path, &screening.records)?;
        files.push(path);
    }
    let summary = screening_summary(&screening);
    records.push(BundleRecord::Screening(Box::new(screening)));
    let files = finish(config, "screen", &records, files)?;
    Ok(Outcome {
        status: Status::Success,
        files,
        summary,
    })
}

pub fn run(config: &RunConfig) -> CliResult<Outcome> {
    let setup = setup(config)?;
    let eps_list = config.eps_list()?;
    let est = setup.estimator();
    let mut records = vec![output::header("run", config)];
    let screening = match est.screen() {
        Ok(s) => s,
        Err(e) => return failed(config, "run", records, "screening", e, String::new()),
    };
    let mut summary = screening_summary(&screening);
    let mut files = vec![];
    let mut reports = vec![];
    for (i, &eps) in eps_list.iter().enumerate() {
        match est.run(&screening, eps) {
            Ok(r) => {
                summary.push_str(&report_summary(&r));
                if output::wants_csv(config) {
                    let path = config.output.dir.join(format!("run_{}_{i}.csv", setup.driver));
                    output::write_table(&path, &r.levels)?;
                    files.push(path);
                }
                reports.push(r);
            }
            Err(e) => {
                records.push(BundleRecord::Screening(Box::new(screening)));
                records.extend(reports.into_iter().map(|r| BundleRecord::Report(Box::new(r))));
                return failed(config, "run", records, &format!("run at eps {eps:e}"), e, summary);
            }
        }
    }
    let verdict = screening.fit.as_ref().map(|fit| theorem_verdict(fit, setup.spec.d, setup.driver));
    records.push(BundleRecord::Screening(Box::new(screening)));
    let slope = cost_slope(&reports);
    records.extend(reports.into_iter().map(|r| BundleRecord::Report(Box::new(r))));
    match verdict {
        Some(Ok(mut v)) => {
            v.measured_cost_slope = slope;
            summary.push_str(&verdict_summary(&v));
            records.push(BundleRecord::Verdict(Box::new(v)));
        }
        Some(Err(e)) => {
            let _ = writeln!(summary, "no verdict: {e}");
        }
        None => summary.push_str("no verdict: rates were not fitted\n"),
    }
    let files = finish(config, "run", &records, files)?;
    Ok(Outcome {
        status: Status::Success,
        files,
        summary,
    })
}

pub fn verify(config: &RunConfig, inject_fault: bool) -> CliResult<Outcome> {
    let cfg = VerifyConfig {
        seed: config.estimator.seed.unwrap_or(0),
        ..VerifyConfig::default()
    };
    let md: MixedDifferenceFn = if inject_fault {
        verify::tampered_mixed_difference
    } else {
        mixed_difference_dyn
    };
    let report = verify::verify_with(md, &cfg)?;
    let mut summary = String::new();
    for c in &report.identities {
        let _ = writeln!(
            summary,
            "{} {} (d = {}, {}, {} checks): max relative error {:.2e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.identity,
            c.d,
            c.evaluator,
            c.checks,
            c.max_relative_error
        );
    }
    for s in &report.statistical {
        let _ = writeln!(
            summary,
            "{} {}: z = {:.2} (threshold {})",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.z_score,
            s.threshold
        );
    }
    let status = if report.passed() {
        Status::Success
    } else {
        summary.push_str("verification failed:\n");
        for f in report.failures() {
            let _ = writeln!(summary, "  - {f}");
        }
        Status::Verify
    };
    let records = vec![output::header("verify", config), BundleRecord::Verify(Box::new(report))];
    let files = finish(config, "verify", &records, vec![])?;
    Ok(Outcome { status, files, summary })
}

/// Re-fits the rates of a saved table; the verdict needs `driver` and, for
/// QMC drivers, cannot be formed since `p` is not part of the table.
pub fn rates(config: &RunConfig, table: &Path) -> CliResult<Outcome> {
    let recs = output::read_table(table)?;
    let abscissa = match recs.first().map(|r| &r.key) {
        Some(LevelKey::Index(_)) => Abscissa::Order1Norm,
        _ => Abscissa::ScalarLevel,
    };
    let window = FitWindow {
        min_level: config.estimator.fit_min_level.unwrap_or(FitWindow::default().min_level),
        max_levels: config.estimator.fit_max_levels.unwrap_or(FitWindow::default().max_levels),
    };
    let fit = fit_rates_windowed(&recs, abscissa, window)?;
    let mut summary = format!("{} rows from {}\n", recs.len(), table.display());
    let mut records = vec![output::header("rates", config)];
    let show = |r: &Option<mlqmc_core::rates::Rate>| {
        r.map(|r| format!("{:.4} +- {:.4}", r.value, r.std_error)).unwrap_or_else(|| "n/a".into())
    };
    let _ = writeln!(
        summary,
        "alpha {}, beta {}, gamma {} on levels {:?}",
        show(&fit.alpha),
        show(&fit.beta),
        show(&fit.gamma),
        fit.levels_used
    );
    for n in &fit.notes {
        let _ = writeln!(summary, "note: {n}");
    }
    records.push(BundleRecord::Rates(Box::new(fit.clone())));
    if let Some(driver) = config.estimator.driver {
        let d = match &recs[0].key {
            LevelKey::Index(m) => m.dim(),
            LevelKey::Level(_) => config.problem.d,
        };
        match theorem_verdict(&fit, d, driver) {
            Ok(v) => {
                summary.push_str(&verdict_summary(&v));
                records.push(BundleRecord::Verdict(Box::new(v)));
            }
            Err(e) => {
                let _ = writeln!(summary, "no verdict: {e}");
            }
        }
    }
    let files = finish(config, "rates", &records, vec![])?;
    Ok(Outcome {
        status: Status::Success,
        files,
        summary,
    })
}
