//! The parameterized elliptic problem
//!
//! `-div(a(x, y) grad u) = f(x)` on the unit cube `[0,1]^d` with homogeneous
//! Dirichlet data, where the coefficient is affine in the stochastic
//! parameters, `a(x, y) = a_0(x) + sum_j y_j a_j(x)`, `y_j` uniform on
//! `[-1/2, 1/2]`. The quantity of interest is `P(u) = int g u dx`.
//!
//! Spatial functions come from a small closed catalog ([`Field`]) rather
//! than parsed expressions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default amplitude of the built-in coefficient modes.
pub const DEFAULT_KAPPA: f64 = 0.9;

/// Scalar function on `[0,1]^d` drawn from the built-in catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Field {
    Constant { value: f64 },
    /// `kappa * j^-2 * prod_k sin(j pi x_k)`
    SineMode { j: usize, kappa: f64 },
    /// `scale * prod_k sin(pi x_k)`
    SineProduct { scale: f64 },
}

impl Field {
    pub fn constant(value: f64) -> Self {
        Field::Constant { value }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter().fold(self.prefactor(), |acc, &xk| acc * self.factor(xk))
    }

    /// Every catalog field is a product `prefactor * prod_k factor(x_k)`.
    #[inline]
    pub fn prefactor(&self) -> f64 {
        match *self {
            Field::Constant { value } => value,
            Field::SineMode { j, kappa } => kappa / (j as f64 * j as f64),
            Field::SineProduct { scale } => scale,
        }
    }

    #[inline]
    pub fn factor(&self, xk: f64) -> f64 {
        match *self {
            Field::Constant { .. } => 1.0,
            Field::SineMode { j, .. } => (j as f64 * PI * xk).sin(),
            Field::SineProduct { .. } => (PI * xk).sin(),
        }
    }

    /// Supremum of `|self|` over the unit cube.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            Field::Constant { value } => value.abs(),
            Field::SineMode { j, kappa } => kappa.abs() / (j as f64 * j as f64),
            Field::SineProduct { scale } => scale.abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_abs() == 0.0
    }
}

/// One instance of the random elliptic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub d: usize,
    pub s: usize,
    pub a0: Field,
    pub modes: Vec<Field>,
    pub f: Field,
    pub g: Field,
    pub a_min: f64,
    pub a_max: f64,
}

impl ProblemSpec {
    /// Builds a problem with explicitly supplied ellipticity bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        d: usize,
        a0: Field,
        modes: Vec<Field>,
        f: Field,
        g: Field,
        a_min: f64,
        a_max: f64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("spatial dimension d must be at least 1".into()));
        }
        if modes.is_empty() {
            return Err(Error::Config("stochastic dimension s must be at least 1".into()));
        }
        if !(a_min > 0.0 && a_min <= a_max && a_max.is_finite()) {
            return Err(Error::Config(format!(
                "ellipticity bounds must satisfy 0 < a_min <= a_max < inf, got [{a_min}, {a_max}]"
            )));
        }
        Ok(Self {
            name: name.into(),
            d,
            s: modes.len(),
            a0,
            modes,
            f,
            g,
            a_min,
            a_max,
        })
    }

    /// Like [`ProblemSpec::new`] but with the bounds taken from the
    /// worst-case envelope `a0 -/+ (1/2) sum_j sup|a_j|`.
    pub fn with_envelope_bounds(
        name: impl Into<String>,
        d: usize,
        a0: Field,
        modes: Vec<Field>,
        f: Field,
        g: Field,
    ) -> Result<Self> {
        let spread = 0.5 * modes.iter().map(Field::sup_abs).sum::<f64>();
        let (lo, hi) = match a0 {
            Field::Constant { value } => (value, value),
            _ => (0.0, a0.sup_abs()),
        };
        let a_min = lo - spread;
        if a_min <= 0.0 {
            return Err(Error::Config(format!(
                "coefficient is not uniformly elliptic: a0 - (1/2) sum sup|a_j| = {a_min} <= 0"
            )));
        }
        Self::new(name, d, a0, modes, f, g, a_min, hi + spread)
    }

    /// Default family: `a0 = 1`, `a_j = kappa j^-2 prod sin(j pi x_k)`,
    /// `f = 1`, `g = 1`.
    pub fn builtin(d: usize, s: usize, kappa: f64) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("stochastic dimension s must be at least 1".into()));
        }
        let modes = (1..=s).map(|j| Field::SineMode { j, kappa }).collect();
        Self::with_envelope_bounds(
            "builtin",
            d,
            Field::constant(1.0),
            modes,
            Field::constant(1.0),
            Field::constant(1.0),
        )
    }

    /// Constant-coefficient Poisson problem `-lap u = 1` (a single inert mode).
    pub fn poisson_constant(d: usize) -> Result<Self> {
        Self::new(
            "poisson",
            d,
            Field::constant(1.0),
            vec![Field::constant(0.0)],
            Field::constant(1.0),
            Field::constant(1.0),
            1.0,
            1.0,
        )
    }

    /// `a = 1` with forcing chosen so that `u = prod_k sin(pi x_k)`.
    pub fn manufactured_sine(d: usize) -> Result<Self> {
        Self::new(
            "manufactured_sine",
            d,
            Field::constant(1.0),
            vec![Field::constant(0.0)],
            Field::SineProduct { scale: d as f64 * PI * PI },
            Field::constant(1.0),
            1.0,
            1.0,
        )
    }

    /// Looks a problem up in the catalog by name.
    pub fn from_catalog(name: &str, d: usize, s: usize, kappa: f64) -> Result<Self> {
        match name {
            "builtin" => Self::builtin(d, s, kappa),
            "poisson" => Self::poisson_constant(d),
            "manufactured_sine" => Self::manufactured_sine(d),
            other => Err(Error::Config(format!(
                "unknown problem '{other}' (expected builtin, poisson or manufactured_sine)"
            ))),
        }
    }

    /// Exact `P(u)` where the catalog knows it in closed form.
    pub fn exact_functional(&self) -> Option<f64> {
        let g_is_one = self.g == Field::constant(1.0);
        let deterministic = self.a0 == Field::constant(1.0) && self.modes.iter().all(Field::is_zero);
        if !(g_is_one && deterministic) {
            return None;
        }
        match self.f {
            // int prod sin(pi x_k) dx = (2/pi)^d
            Field::SineProduct { scale } if scale == self.d as f64 * PI * PI => {
                Some((2.0 / PI).powi(self.d as i32))
            }
            Field::Constant { value } if self.d == 1 => Some(value / 12.0),
            _ => None,
        }
    }

    /// `a(x, y)` without range checks; the solver validates `y` once per solve.
    #[inline]
    pub(crate) fn coefficient_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut a = self.a0.eval(x);
        for (mode, &yj) in self.modes.iter().zip(y) {
            if yj != 0.0 {
                a += yj * mode.eval(x);
            }
        }
        a
    }

    pub fn check_stochastic_point(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.s {
            return Err(Error::Domain(format!(
                "stochastic point has {} components, expected s = {}",
                y.len(),
                self.s
            )));
        }
        for (j, &yj) in y.iter().enumerate() {
            if !(-0.5..=0.5).contains(&yj) {
                return Err(Error::Domain(format!(
                    "stochastic component y_{} = {yj} lies outside [-1/2, 1/2]",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Evaluates `a(x, y) = a0(x) + sum_j y_j a_j(x)`.
    pub fn coefficient_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::Domain(format!(
                "spatial point has {} components, expected d = {}",
                x.len(),
                self.d
            )));
        }
        if let Some(k) = x.iter().position(|xk| !(0.0..=1.0).contains(xk)) {
            return Err(Error::Domain(format!(
                "spatial component x_{} = {} lies outside [0, 1]",
                k + 1,
                x[k]
            )));
        }
        self.check_stochastic_point(y)?;
        Ok(self.coefficient_unchecked(x, y))
    }

    /// Scans a uniform grid of `grid_resolution^d` points and returns the
    /// observed envelope `(min, max)` of `a` under worst-case signs
    /// `y_j = -/+ sign(a_j(x)) / 2`.
    pub fn validate_ellipticity(&self, grid_resolution: usize) -> Result<(f64, f64)> {
        if grid_resolution < 2 {
            return Err(Error::Argument("grid_resolution must be at least 2".into()));
        }
        let total = grid_resolution
            .checked_pow(self.d as u32)
            .ok_or_else(|| Error::Argument("ellipticity scan grid is too large".into()))?;
        let step = 1.0 / (grid_resolution - 1) as f64;
        let mut x = vec![0.0; self.d];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for flat in 0..total {
            let mut rem = flat;
            for xk in x.iter_mut() {
                *xk = (rem % grid_resolution) as f64 * step;
                rem /= grid_resolution;
            }
            let base = self.a0.eval(&x);
            let spread = 0.5 * self.modes.iter().map(|m| m.eval(&x).abs()).sum::<f64>();
            let (amin, amax) = (base - spread, base + spread);
            if amin <= 0.0 {
                return Err(Error::Config(format!(
                    "coefficient is not uniformly elliptic: worst-case a = {amin:.6} at x = {x:?}"
                )));
            }
            lo = lo.min(amin);
            hi = hi.max(amax);
        }
        Ok((lo, hi))
    }
}
