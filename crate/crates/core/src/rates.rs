//! Log-linear rate fits for the multilevel cost theorems and the verdicts
//! derived from them.
//!
//! With per-level data `|E[dP_l]| ~ 2^{-alpha l}`, `V[dP_l] ~ 2^{-beta l}`,
//! `cost_l ~ 2^{gamma l}` and QMC variance `~ N^{-p}`, the asymptotic cost to
//! reach r.m.s. accuracy `eps` is `eps^{-r}` with `r` depending on the regime
//! `beta` vs `p gamma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Driver, LevelRecord};

/// Unweighted least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for exactly collinear data.
    pub slope_se: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::Argument("abscissa and ordinate lengths differ".into()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Argument(format!("a line fit needs at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("abscissa values are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
        points: n,
    })
}

/// A fitted rate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub std_error: f64,
    /// Fitted `log2` intercept, for extrapolation.
    pub log2_intercept: f64,
}

impl Rate {
    pub fn exact(value: f64) -> Self {
        Rate {
            value,
            std_error: 0.0,
            log2_intercept: 0.0,
        }
    }

    /// Model value `2^{intercept + sign * value * x}` for a decay (`sign = -1`)
    /// or growth (`sign = +1`) rate.
    pub fn extrapolate(&self, x: f64, sign: f64) -> f64 {
        2f64.powf(self.log2_intercept + sign * self.value * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    /// The scalar level `l` (isotropic grids or combination levels).
    ScalarLevel,
    /// The order-1 norm `|l|_1` of a multi-index.
    Order1Norm,
}

/// Which levels enter a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    /// Levels below this are pre-asymptotic and skipped.
    pub min_level: i64,
    /// Only the finest `max_levels` eligible levels are used.
    pub max_levels: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow {
            min_level: 1,
            max_levels: 6,
        }
    }
}

/// Fitted `(alpha, beta, gamma, p)`. Any rate without three usable points is
/// left unset and explained in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RateFit {
    pub alpha: Option<Rate>,
    pub beta: Option<Rate>,
    pub gamma: Option<Rate>,
    pub p: Option<Rate>,
    pub levels_used: Vec<i64>,
    /// Means change sign between levels; alpha was fitted on `|mean|`.
    pub sign_alternating: bool,
    pub notes: Vec<String>,
}

impl RateFit {
    /// Fit with exactly known rates, for theorem-facing predictions.
    pub fn exact(alpha: f64, beta: f64, gamma: f64, p: f64) -> Self {
        RateFit {
            alpha: Some(Rate::exact(alpha)),
            beta: Some(Rate::exact(beta)),
            gamma: Some(Rate::exact(gamma)),
            p: Some(Rate::exact(p)),
            ..RateFit::default()
        }
    }
}

/// Per-level aggregate used by the fits. Several multi-indices sharing an
/// abscissa value are combined by the maximum, matching per-index bounds of
/// the form `c 2^{-alpha |l|_1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LevelAggregate {
    x: i64,
    abs_mean: f64,
    signed_mean: f64,
    mean_se: f64,
    variance: f64,
    cost: f64,
}

fn aggregate(records: &[LevelRecord], abscissa: Abscissa) -> Vec<LevelAggregate> {
    let mut out: Vec<LevelAggregate> = vec![];
    for rec in records {
        let x = match abscissa {
            Abscissa::ScalarLevel => rec.key.scalar_level(),
            Abscissa::Order1Norm => rec.key.order1(),
        };
        let candidate = LevelAggregate {
            x,
            abs_mean: rec.mean.abs(),
            signed_mean: rec.mean,
            mean_se: rec.variance_of_mean.max(0.0).sqrt(),
            variance: rec.raw_variance,
            cost: rec.cost_per_sample,
        };
        match out.iter_mut().find(|a| a.x == x) {
            Some(a) => {
                if candidate.abs_mean > a.abs_mean {
                    a.abs_mean = candidate.abs_mean;
                    a.signed_mean = candidate.signed_mean;
                    a.mean_se = candidate.mean_se;
                }
                a.variance = a.variance.max(candidate.variance);
                a.cost = a.cost.max(candidate.cost);
            }
            None => out.push(candidate),
        }
    }
    out.sort_by_key(|a| a.x);
    out
}

fn rate_from(points: &[(f64, f64)], sign: f64) -> Option<Rate> {
    if points.len() < 3 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, v)| (x, v.log2())).unzip();
    let fit = linear_fit(&xs, &ys).ok()?;
    Some(Rate {
        value: sign * fit.slope,
        std_error: fit.slope_se,
        log2_intercept: fit.intercept,
    })
}

/// Fits `alpha` (decay of `|mean|`), `beta` (decay of `raw_variance`) and
/// `gamma` (growth of `cost_per_sample`) against the chosen abscissa.
pub fn fit_rates(records: &[LevelRecord], abscissa: Abscissa) -> Result<RateFit> {
    fit_rates_windowed(records, abscissa, FitWindow::default())
}

pub fn fit_rates_windowed(records: &[LevelRecord], abscissa: Abscissa, window: FitWindow) -> Result<RateFit> {
    let levels = aggregate(records, abscissa);
    if levels.len() < 3 {
        return Err(Error::Argument(format!(
            "rate fits need records on at least 3 levels, got {}",
            levels.len()
        )));
    }
    let eligible: Vec<LevelAggregate> = levels.into_iter().filter(|a| a.x >= window.min_level).collect();
    let start = eligible.len().saturating_sub(window.max_levels);
    let used = &eligible[start..];
    let mut fit = RateFit {
        levels_used: used.iter().map(|a| a.x).collect(),
        ..RateFit::default()
    };

    let signs: Vec<f64> = used.iter().filter(|a| a.signed_mean != 0.0).map(|a| a.signed_mean.signum()).collect();
    fit.sign_alternating = signs.windows(2).any(|w| w[0] != w[1]);
    if fit.sign_alternating {
        fit.notes.push("means change sign across levels; alpha fitted on |mean|".into());
    }

    let mut mean_pts = vec![];
    for a in used {
        if a.abs_mean > 0.0 && a.abs_mean >= 10.0 * a.mean_se {
            mean_pts.push((a.x as f64, a.abs_mean));
        } else if a.abs_mean > 0.0 || a.mean_se > 0.0 {
            fit.notes.push(format!(
                "level {} excluded from alpha: |mean| {:.3e} is below 10 standard errors ({:.3e})",
                a.x, a.abs_mean, a.mean_se
            ));
        }
    }
    let var_pts: Vec<(f64, f64)> = used.iter().filter(|a| a.variance > 0.0).map(|a| (a.x as f64, a.variance)).collect();
    let cost_pts: Vec<(f64, f64)> = used.iter().filter(|a| a.cost > 0.0).map(|a| (a.x as f64, a.cost)).collect();

    fit.alpha = rate_from(&mean_pts, -1.0);
    fit.beta = rate_from(&var_pts, -1.0);
    fit.gamma = rate_from(&cost_pts, 1.0);
    for (name, rate, n) in [
        ("alpha", &fit.alpha, mean_pts.len()),
        ("beta", &fit.beta, var_pts.len()),
        ("gamma", &fit.gamma, cost_pts.len()),
    ] {
        if rate.is_none() {
            fit.notes.push(format!("{name} not fitted: only {n} usable levels"));
        }
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcExponentFit {
    pub p: Rate,
    /// Variance increased somewhere along `N`; the standard error was doubled.
    pub inflated: bool,
}

/// `p` from `variance_of_mean ~ N^{-p}` over power-of-two `N`.
pub fn fit_qmc_exponent(variance_vs_n: &[(u64, f64)]) -> Result<QmcExponentFit> {
    if variance_vs_n.len() < 3 {
        return Err(Error::Argument(format!(
            "the QMC exponent fit needs at least 3 point counts, got {}",
            variance_vs_n.len()
        )));
    }
    let mut pts = variance_vs_n.to_vec();
    pts.sort_by_key(|&(n, _)| n);
    if let Some(&(n, v)) = pts.iter().find(|&&(n, v)| !n.is_power_of_two() || !(v > 0.0)) {
        return Err(Error::Argument(format!(
            "QMC exponent fit needs power-of-two N and positive variances, got ({n}, {v})"
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|&(n, _)| (n as f64).log2()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, v)| v.log2()).collect();
    let line = linear_fit(&xs, &ys)?;
    let inflated = pts.windows(2).any(|w| w[1].1 > w[0].1);
    Ok(QmcExponentFit {
        p: Rate {
            value: -line.slope,
            std_error: if inflated { 2.0 * line.slope_se } else { line.slope_se },
            log2_intercept: line.intercept,
        },
        inflated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `beta > p gamma`: cost dominated by the coarsest levels.
    VarianceDominated,
    /// `beta = p gamma` within the tolerance band.
    Balanced,
    /// `beta < p gamma`: cost dominated by the finest levels.
    CostDominated,
}

/// Predicted cost `eps^{-exponent} |log eps|^{log_power}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdict {
    pub driver: Driver,
    pub d: usize,
    pub regime: Regime,
    /// `beta - p gamma` and the half-width of the band treated as equality.
    pub margin: f64,
    pub band: f64,
    pub predicted_exponent: f64,
    pub log_power: f64,
    pub measured_cost_slope: Option<f64>,
    pub fit: RateFit,
}

/// Classifies the cost regime and predicts the cost exponent for `driver`.
pub fn theorem_verdict(fit: &RateFit, d: usize, driver: Driver) -> Result<TheoremVerdict> {
    let get = |r: &Option<Rate>, name: &str| {
        r.ok_or_else(|| Error::Argument(format!("theorem verdict needs a fitted {name}")))
    };
    let alpha = get(&fit.alpha, "alpha")?;
    let beta = get(&fit.beta, "beta")?;
    let gamma = get(&fit.gamma, "gamma")?;
    let qmc = driver.is_qmc();
    let p = if qmc { get(&fit.p, "p")? } else { Rate::exact(1.0) };
    let (a, b, g, pv) = (alpha.value, beta.value, gamma.value, p.value);

    let margin = b - pv * g;
    let band = 2.0
        * (beta.std_error.powi(2) + (pv * gamma.std_error).powi(2) + (g * p.std_error).powi(2)).sqrt();
    let regime = if margin.abs() <= band {
        Regime::Balanced
    } else if margin > 0.0 {
        Regime::VarianceDominated
    } else {
        Regime::CostDominated
    };
    let df = d as f64;
    let sharp = a > 0.5 * b;
    let (exponent, log_power) = match driver {
        Driver::Mc => (2.0 + g / a, 0.0),
        Driver::Mlmc => match regime {
            Regime::VarianceDominated => (2.0, 0.0),
            Regime::Balanced => (2.0, 2.0),
            Regime::CostDominated => (2.0 + (g - b) / a, 0.0),
        },
        Driver::Mimc => match regime {
            Regime::VarianceDominated => (2.0, 0.0),
            Regime::Balanced => (2.0, if sharp { 2.0 * df } else { (2.0 * df).max(3.0 * (df - 1.0)) }),
            Regime::CostDominated => (
                2.0 + (g - b) / a,
                if sharp {
                    (df - 1.0) * (2.0 + (g - b) / a)
                } else {
                    (df - 1.0) * (1.0 + g / a)
                },
            ),
        },
        // same rates as MIMC up to arbitrarily small delta losses
        Driver::MlmcCombination => match regime {
            Regime::VarianceDominated => (2.0, 0.0),
            Regime::Balanced | Regime::CostDominated => (2.0 + (g - b) / a, 0.0),
        },
        Driver::Mlqmc => match regime {
            Regime::VarianceDominated => (2.0 / pv, 0.0),
            Regime::Balanced => (2.0 / pv, (pv + 1.0) / pv),
            Regime::CostDominated => (2.0 / pv + (pv * g - b) / (pv * a), 0.0),
        },
        Driver::Miqmc => match regime {
            Regime::VarianceDominated => (2.0 / pv, 0.0),
            Regime::Balanced => (
                2.0 / pv,
                if sharp {
                    df * (pv + 1.0) / pv
                } else {
                    (df * (pv + 1.0) / pv).max((df - 1.0) * (1.0 + g / a))
                },
            ),
            Regime::CostDominated => (
                2.0 / pv + (pv * g - b) / (pv * a),
                if sharp {
                    (df - 1.0) * ((pv + 1.0) / pv + (pv * g - b) / (pv * a))
                } else {
                    (df - 1.0) * (1.0 + g / a)
                },
            ),
        },
    };
    Ok(TheoremVerdict {
        driver,
        d,
        regime,
        margin,
        band,
        predicted_exponent: exponent,
        log_power,
        measured_cost_slope: None,
        fit: fit.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::LevelKey;
    use crate::index::MultiIndex;

    fn synthetic(levels: std::ops::RangeInclusive<u32>, a: f64, b: f64, g: f64, scale: f64) -> Vec<LevelRecord> {
        levels
            .map(|l| {
                let lf = l as f64;
                let mut rec = LevelRecord::new(
                    LevelKey::Level(l),
                    scale * 2f64.powf(-a * lf),
                    scale * 2f64.powf(-b * lf),
                    scale * 2f64.powf(g * lf),
                    1000,
                    1,
                );
                // exact means
                rec.variance_of_mean = 0.0;
                rec
            })
            .collect()
    }

    #[test]
    fn exact_log_linear_data() {
        let fit = fit_rates(&synthetic(0..=6, 2.0, 4.0, 1.0, 1.0), Abscissa::ScalarLevel).unwrap();
        let (a, b, g) = (fit.alpha.unwrap(), fit.beta.unwrap(), fit.gamma.unwrap());
        assert!((a.value - 2.0).abs() < 1e-10 && a.std_error < 1e-10);
        assert!((b.value - 4.0).abs() < 1e-10 && b.std_error < 1e-10);
        assert!((g.value - 1.0).abs() < 1e-10 && g.std_error < 1e-10);
        assert_eq!(fit.levels_used, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn too_few_levels() {
        let recs = synthetic(0..=0, 2.0, 4.0, 1.0, 1.0);
        assert!(matches!(fit_rates(&recs, Abscissa::ScalarLevel), Err(Error::Argument(_))));
    }

    #[test]
    fn shells_aggregate_by_maximum() {
        let mut recs = vec![];
        for k in 0..=5u32 {
            for m in crate::index::shell(k as usize, 2) {
                let scale = if m.levels()[0] == 0 { 0.5 } else { 1.0 };
                let kf = k as f64;
                recs.push(LevelRecord::new(
                    LevelKey::Index(m),
                    scale * 2f64.powf(-2.0 * kf),
                    scale * 2f64.powf(-4.0 * kf),
                    2f64.powf(kf),
                    100,
                    1,
                ));
            }
        }
        let fit = fit_rates(&recs, Abscissa::Order1Norm).unwrap();
        assert!((fit.alpha.unwrap().value - 2.0).abs() < 1e-10);
        assert!((fit.beta.unwrap().value - 4.0).abs() < 1e-10);
        let _ = MultiIndex::zeros(2);
    }

    #[test]
    fn noisy_means_are_excluded() {
        let mut recs = synthetic(0..=6, 2.0, 4.0, 1.0, 1.0);
        recs[6].mean = 1e-9;
        recs[6].variance_of_mean = 1e-12;
        let fit = fit_rates(&recs, Abscissa::ScalarLevel).unwrap();
        assert!((fit.alpha.unwrap().value - 2.0).abs() < 1e-10);
        assert!(fit.notes.iter().any(|n| n.contains("level 6")));
    }

    #[test]
    fn qmc_exponent_examples() {
        let pts2: Vec<(u64, f64)> = (5..=11).map(|m| (1u64 << m, 2f64.powi(-2 * m as i32))).collect();
        assert!((fit_qmc_exponent(&pts2).unwrap().p.value - 2.0).abs() < 1e-12);
        let pts1: Vec<(u64, f64)> = (5..=11).map(|m| (1u64 << m, 3.0 * 2f64.powi(-(m as i32)))).collect();
        assert!((fit_qmc_exponent(&pts1).unwrap().p.value - 1.0).abs() < 1e-12);
        let bumpy = vec![(32, 1e-3), (64, 2e-3), (128, 1e-4)];
        assert!(fit_qmc_exponent(&bumpy).unwrap().inflated);
        assert!(fit_qmc_exponent(&[(32, 1.0), (64, 0.5)]).is_err());
    }

    #[test]
    fn verdict_examples() {
        let v = theorem_verdict(&RateFit::exact(2.0, 4.0, 1.0, 2.0), 2, Driver::Miqmc).unwrap();
        assert_eq!(v.regime, Regime::VarianceDominated);
        assert_eq!(v.predicted_exponent, 1.0);

        let v = theorem_verdict(&RateFit::exact(2.0, 4.0, 4.0, 1.0), 4, Driver::Mlmc).unwrap();
        assert_eq!(v.regime, Regime::Balanced);
        assert_eq!((v.predicted_exponent, v.log_power), (2.0, 2.0));

        let v = theorem_verdict(&RateFit::exact(2.0, 4.0, 6.0, 1.0), 6, Driver::Mlmc).unwrap();
        assert_eq!(v.regime, Regime::CostDominated);
        assert_eq!(v.predicted_exponent, 3.0);

        let v = theorem_verdict(&RateFit::exact(2.0, 4.0, 2.0, 1.0), 2, Driver::Mlmc).unwrap();
        assert_eq!(v.predicted_exponent, 2.0);
    }

    #[test]
    fn verdict_band_uses_standard_errors() {
        let mut fit = RateFit::exact(2.0, 4.1, 2.0, 2.0);
        let v = theorem_verdict(&fit, 2, Driver::Mlqmc).unwrap();
        assert_eq!(v.regime, Regime::VarianceDominated);
        fit.beta.as_mut().unwrap().std_error = 0.1;
        let v = theorem_verdict(&fit, 2, Driver::Mlqmc).unwrap();
        assert_eq!(v.regime, Regime::Balanced);
        assert!((v.band - 0.2).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rates_recovered_and_scale_invariant(
                a in 0.5f64..4.0, b in 0.5f64..6.0, g in 0.2f64..3.0,
                scale in 1e-6f64..1e6,
            ) {
                let base = fit_rates(&synthetic(0..=7, a, b, g, 1.0), Abscissa::ScalarLevel).unwrap();
                let scaled = fit_rates(&synthetic(0..=7, a, b, g, scale), Abscissa::ScalarLevel).unwrap();
                for (x, y, want) in [
                    (base.alpha, scaled.alpha, a),
                    (base.beta, scaled.beta, b),
                    (base.gamma, scaled.gamma, g),
                ] {
                    prop_assert!((x.unwrap().value - want).abs() < 1e-10);
                    prop_assert!((y.unwrap().value - want).abs() < 1e-10);
                }
            }
        }
    }
}
