//! Cost-optimal sample counts and bias-controlled choice of the finest level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Level variances below this are floored so the allocation stays finite.
pub const VARIANCE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Round up to the next integer (at least 1).
    Integer,
    /// Round up to the next power of two (at least `2^0`).
    PowerOfTwo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Real-valued optimum before rounding.
    pub real: Vec<f64>,
    pub counts: Vec<u64>,
    pub lambda: f64,
    /// `sum_l v_l N_l^{-p}` with the rounded counts.
    pub modeled_variance: f64,
    /// `sum_l N_l c_l` with the rounded counts.
    pub modeled_cost: f64,
}

/// Relative slack when rounding up, so that values that are integers up to
/// floating-point noise are not bumped to the next integer.
const ROUND_SLACK: f64 = 1e-9;

fn round_up(x: f64, rounding: Rounding) -> u64 {
    let x = x * (1.0 - ROUND_SLACK);
    match rounding {
        Rounding::Integer => (x.ceil() as u64).max(1),
        Rounding::PowerOfTwo => {
            let n = (x.ceil() as u64).max(1);
            n.next_power_of_two()
        }
    }
}

/// Minimizes `sum N_l c_l` subject to `sum v_l N_l^{-p} = eps^2 / 2`:
/// `N_l = (lambda p v_l / c_l)^{1/(p+1)}`, then rounds each `N_l` up.
pub fn allocate_samples(v: &[f64], c: &[f64], eps: f64, p: f64, rounding: Rounding) -> Result<Allocation> {
    if v.is_empty() {
        return Err(Error::Argument("allocation needs at least one level".into()));
    }
    if v.len() != c.len() {
        return Err(Error::Argument("variance and cost vectors differ in length".into()));
    }
    if !(eps > 0.0) || !(p >= 1.0) {
        return Err(Error::Argument(format!("allocation needs eps > 0 and p >= 1, got eps = {eps}, p = {p}")));
    }
    if let Some(l) = c.iter().position(|&cl| !(cl > 0.0 && cl.is_finite())) {
        return Err(Error::Argument(format!("cost of level {l} must be positive, got {}", c[l])));
    }
    let v: Vec<f64> = v.iter().map(|&vl| if vl.is_finite() { vl.max(VARIANCE_FLOOR) } else { vl }).collect();
    if let Some(l) = v.iter().position(|vl| !vl.is_finite()) {
        return Err(Error::Argument(format!("variance of level {l} is not finite")));
    }
    let target = 0.5 * eps * eps;
    let q = 1.0 / (p + 1.0);
    // N_l = lambda^q (p v_l / c_l)^q, so sum v_l (p v_l / c_l)^{-pq} = target lambda^{pq}
    let log_ratio: Vec<f64> = v.iter().zip(c).map(|(vl, cl)| (p * vl / cl).ln()).collect();
    let terms: Vec<f64> = v.iter().zip(&log_ratio).map(|(vl, lr)| vl.ln() - p * q * lr).collect();
    let max_t = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max_t + terms.iter().map(|t| (t - max_t).exp()).sum::<f64>().ln();
    let log_lambda = (log_sum - target.ln()) / (p * q);
    let real: Vec<f64> = log_ratio.iter().map(|lr| (q * (log_lambda + lr)).exp()).collect();
    let counts: Vec<u64> = real.iter().map(|&x| round_up(x, rounding)).collect();
    let modeled_variance = v.iter().zip(&counts).map(|(vl, &n)| vl * (n as f64).powf(-p)).sum();
    let modeled_cost = c.iter().zip(&counts).map(|(cl, &n)| cl * n as f64).sum();
    Ok(Allocation {
        real,
        counts,
        lambda: log_lambda.exp(),
        modeled_variance,
        modeled_cost,
    })
}

/// Geometric model `M_k ~ 2^{log2_intercept - alpha k}` of the level (or
/// shell) contributions `M_k = sum_{|l|_1 = k} |E[dP_l]|`, together with the
/// measured values it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    pub alpha: f64,
    pub log2_intercept: f64,
    /// Measured `(k, M_k)` for the screened levels.
    pub measured: Vec<(i64, f64)>,
}

impl BiasModel {
    /// Fits the model to the last `tail_points` positive measurements.
    pub fn fit(measured: Vec<(i64, f64)>, tail_points: usize) -> Result<Self> {
        let positive: Vec<(i64, f64)> = measured.iter().copied().filter(|&(_, m)| m > 0.0).collect();
        if positive.len() < 2 {
            return Err(Error::Estimator(format!(
                "bias extrapolation needs at least 2 non-zero level contributions, got {measured:?}"
            )));
        }
        let used = &positive[positive.len().saturating_sub(tail_points.max(2))..];
        let xs: Vec<f64> = used.iter().map(|&(k, _)| k as f64).collect();
        let ys: Vec<f64> = used.iter().map(|&(_, m)| m.log2()).collect();
        let line = crate::rates::linear_fit(&xs, &ys)?;
        Ok(BiasModel {
            alpha: -line.slope,
            log2_intercept: line.intercept,
            measured,
        })
    }

    /// Model value of `M_k`.
    pub fn contribution(&self, k: i64) -> f64 {
        2f64.powf(self.log2_intercept - self.alpha * k as f64)
    }

    /// Estimated `sum_{k > level} M_k`: measured values where screened, then
    /// the geometric tail of the model beyond the last measurement.
    pub fn tail(&self, level: i64) -> f64 {
        let last = self.measured.iter().map(|&(k, _)| k).max().unwrap_or(level).max(level);
        let measured: f64 = self.measured.iter().filter(|&&(k, _)| k > level).map(|&(_, m)| m).sum();
        let ratio = 2f64.powf(-self.alpha);
        measured + self.contribution(last + 1) / (1.0 - ratio)
    }
}

/// Smallest `L` in `[min_level, max_level]` whose estimated bias satisfies
/// `tail(L) <= eps / sqrt(2)`.
pub fn select_finest_level(model: &BiasModel, eps: f64, min_level: usize, max_level: usize) -> Result<usize> {
    if !(model.alpha > 0.0) {
        return Err(Error::Estimator(format!(
            "fitted weak rate alpha = {:.3} is not positive; cannot extrapolate the bias (levels {:?})",
            model.alpha, model.measured
        )));
    }
    let target = eps / 2f64.sqrt();
    for level in min_level..=max_level {
        if model.tail(level as i64) <= target * (1.0 + 1e-12) {
            return Ok(level);
        }
    }
    Err(Error::Estimator(format!(
        "bias target {target:.3e} not reached by level {max_level} (estimated bias {:.3e}, alpha {:.3})",
        model.tail(max_level as i64),
        model.alpha
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost(c: &[f64], n: &[f64]) -> f64 {
        c.iter().zip(n).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn two_level_hand_example() {
        let a = allocate_samples(&[1.0, 0.25], &[1.0, 2.0], 1.0, 1.0, Rounding::Integer).unwrap();
        assert!((a.real[0] - (1.0 + 0.5f64.sqrt()) * 2.0).abs() < 1e-12);
        assert!((a.real[0] - 3.414).abs() < 1e-3 && (a.real[1] - 1.207).abs() < 1e-3);
        assert_eq!(a.counts, vec![4, 2]);
        assert!(a.modeled_variance <= 0.5);
    }

    #[test]
    fn single_level_qmc_exponent() {
        let a = allocate_samples(&[1.0], &[1.0], 0.02f64.sqrt(), 2.0, Rounding::Integer);
        let a = a.unwrap();
        assert_eq!(a.counts, vec![10]);
        let b = allocate_samples(&[1.0], &[1.0], 0.02f64.sqrt(), 2.0, Rounding::PowerOfTwo)
            .unwrap();
        assert_eq!(b.counts, vec![16]);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        assert!(matches!(allocate_samples(&[], &[], 0.1, 1.0, Rounding::Integer), Err(Error::Argument(_))));
        assert!(allocate_samples(&[1.0], &[0.0], 0.1, 1.0, Rounding::Integer).is_err());
        assert!(allocate_samples(&[1.0], &[1.0], 0.1, 0.5, Rounding::Integer).is_err());
    }

    #[test]
    fn zero_variance_hits_minimum() {
        let a = allocate_samples(&[0.0, 0.0], &[1.0, 4.0], 1e-3, 1.0, Rounding::PowerOfTwo).unwrap();
        assert_eq!(a.counts, vec![1, 1]);
    }

    #[test]
    fn finest_level_from_exact_geometric_tail() {
        let c = 0.3;
        let measured: Vec<(i64, f64)> = (1..=4).map(|k| (k, c * 2f64.powi(-2 * k as i32))).collect();
        let model = BiasModel::fit(measured, 3).unwrap();
        assert!((model.alpha - 2.0).abs() < 1e-12);
        // tail beyond 5: c 4^-6 / (1 - 1/4)
        let tail5 = c * 4f64.powi(-6) / 0.75;
        assert!((model.tail(5) - tail5).abs() < 1e-15);
        let eps = tail5 * 2f64.sqrt();
        assert_eq!(select_finest_level(&model, eps, 0, 20).unwrap(), 5);
        assert_eq!(select_finest_level(&model, eps * 0.999, 0, 20).unwrap(), 6);
        assert!(select_finest_level(&model, eps * 1e-12, 0, 8).is_err());
    }

    #[test]
    fn non_positive_rate_is_rejected() {
        let model = BiasModel::fit(vec![(1, 0.1), (2, 0.2), (3, 0.4)], 3).unwrap();
        assert!(model.alpha < 0.0);
        assert!(matches!(select_finest_level(&model, 1e-3, 0, 10), Err(Error::Estimator(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rounded_allocation_meets_budget(
                v in prop::collection::vec(1e-12f64..1.0, 1..8),
                seed_c in prop::collection::vec(0.5f64..1e4, 8),
                eps in 1e-4f64..0.3,
                p in 1.0f64..2.0,
                pow2 in any::<bool>(),
            ) {
                let c = &seed_c[..v.len()];
                let rounding = if pow2 { Rounding::PowerOfTwo } else { Rounding::Integer };
                let a = allocate_samples(&v, c, eps, p, rounding).unwrap();
                prop_assert!(a.modeled_variance <= 0.5 * eps * eps * (1.0 + 1e-8));
                let real_var: f64 = v.iter().zip(&a.real).map(|(vl, n)| vl * n.powf(-p)).sum();
                prop_assert!((real_var / (0.5 * eps * eps) - 1.0).abs() < 1e-9);
            }

            #[test]
            fn real_optimum_is_first_order_optimal(
                v in prop::collection::vec(1e-8f64..1.0, 2..6),
                seed_c in prop::collection::vec(0.5f64..1e3, 6),
                eps in 1e-3f64..0.1,
                p in 1.0f64..2.0,
                which in 0usize..6,
                up in any::<bool>(),
            ) {
                let c = &seed_c[..v.len()];
                let a = allocate_samples(&v, c, eps, p, Rounding::Integer).unwrap();
                let mut n = a.real.clone();
                let j = which % n.len();
                n[j] *= if up { 1.1 } else { 0.9 };
                // rescale uniformly to restore the variance constraint
                let var: f64 = v.iter().zip(&n).map(|(vl, x)| vl * x.powf(-p)).sum();
                let t = (var / (0.5 * eps * eps)).powf(1.0 / p);
                let n: Vec<f64> = n.iter().map(|x| x * t).collect();
                prop_assert!(cost(c, &n) >= cost(c, &a.real) * (1.0 - 0.005));
            }

            #[test]
            fn larger_eps_never_needs_a_finer_level(alpha in 0.5f64..3.0, c0 in 1e-3f64..1.0, eps in 1e-6f64..0.1) {
                let measured: Vec<(i64, f64)> = (1..=4).map(|k| (k, c0 * 2f64.powf(-alpha * k as f64))).collect();
                let model = BiasModel::fit(measured, 3).unwrap();
                let a = select_finest_level(&model, eps, 0, 60).unwrap();
                let b = select_finest_level(&model, 2.0 * eps, 0, 60).unwrap();
                prop_assert!(b <= a);
            }
        }
    }
}
