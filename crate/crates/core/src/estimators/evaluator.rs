//! Per-sample integrands of the estimator terms.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::grid::{functional, SolverConfig};
use crate::index::{combination_value, mixed_difference, shell, Memo, MultiIndex};
use crate::model::ProblemSpec;

use super::LevelKey;

/// Functional values `P_l(y)` of grid solves.
#[derive(Debug, Clone)]
pub struct PdeEvaluator<'a> {
    pub spec: &'a ProblemSpec,
    pub solver: &'a SolverConfig,
}

impl<'a> PdeEvaluator<'a> {
    pub fn new(spec: &'a ProblemSpec, solver: &'a SolverConfig) -> Self {
        PdeEvaluator { spec, solver }
    }

    pub fn value(&self, ell: &MultiIndex, y: &[f64]) -> Result<f64> {
        Ok(self.value_and_cost(ell, y)?.0)
    }

    /// Zero at zero cost for grids without interior nodes.
    pub fn value_and_cost(&self, ell: &MultiIndex, y: &[f64]) -> Result<(f64, f64)> {
        if !ell.is_nonnegative() || ell.is_degenerate() {
            return Ok((0.0, 0.0));
        }
        functional(self.spec, ell, y, self.solver)
    }

    /// `P_l(y)` on the isotropic grid of spacing `2^-l`.
    pub fn isotropic(&self, level: i64, y: &[f64]) -> Result<f64> {
        if level < 0 {
            return Ok(0.0);
        }
        self.value(&MultiIndex::isotropic(self.spec.d, level as i32), y)
    }

    /// Sparse combination value `P_l(y)`.
    pub fn combination(&self, level: i64, y: &[f64]) -> Result<f64> {
        self.with_memo(y, |eval| combination_value(eval, level, self.spec.d)).map(|(v, _)| v)
    }

    /// Runs `f` with a memoized evaluator at `y`; returns its value and the
    /// summed solver work.
    pub fn with_memo<T>(&self, y: &[f64], f: impl FnOnce(&mut dyn FnMut(&MultiIndex) -> f64) -> T) -> Result<(T, f64)> {
        let mut cost = 0.0;
        let mut failure: Option<Error> = None;
        let out = {
            let mut memo = Memo::new(|m: &MultiIndex| {
                if failure.is_some() {
                    return f64::NAN;
                }
                match self.value_and_cost(m, y) {
                    Ok((v, c)) => {
                        cost += c;
                        v
                    }
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            });
            f(&mut |m: &MultiIndex| memo.get(m))
        };
        match failure {
            Some(e) => Err(e),
            None => Ok((out, cost)),
        }
    }
}

/// What one evaluation of a term computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    /// `P_L` on the isotropic grid (single-level MC).
    IsoValue,
    /// `P_l - P_{l-1}` on isotropic grids.
    IsoDifference,
    /// Mixed difference `DeltaP_l` of a multi-index.
    MixedDifference,
    /// `sum_{|l|_1 = level} DeltaP_l` with all members at the same sample.
    ShellDifference,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub key: LevelKey,
    pub kind: TermKind,
}

/// One evaluation of a term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermSample {
    pub value: f64,
    /// Functional on the finest grid involved (`P_l` for isotropic terms).
    pub fine: f64,
    pub cost: f64,
}

impl Term {
    pub fn new(key: LevelKey, kind: TermKind) -> Self {
        Term { key, kind }
    }

    fn level(&self) -> i64 {
        self.key.scalar_level()
    }

    /// Distinct grids with non-negative indices that one evaluation touches.
    pub fn grids(&self, d: usize) -> Vec<MultiIndex> {
        let mut set = BTreeSet::new();
        let l = self.level();
        let corners = |m: &MultiIndex, set: &mut BTreeSet<MultiIndex>| {
            for mask in 0u32..(1 << d) {
                let g = m.minus_corner(mask);
                if g.is_nonnegative() {
                    set.insert(g);
                }
            }
        };
        match (&self.kind, &self.key) {
            (TermKind::IsoValue, _) => {
                set.insert(MultiIndex::isotropic(d, l as i32));
            }
            (TermKind::IsoDifference, _) => {
                set.insert(MultiIndex::isotropic(d, l as i32));
                if l >= 1 {
                    set.insert(MultiIndex::isotropic(d, l as i32 - 1));
                }
            }
            (TermKind::MixedDifference, LevelKey::Index(m)) => corners(m, &mut set),
            (TermKind::MixedDifference, LevelKey::Level(_)) => corners(&MultiIndex::new(vec![l as i32]), &mut set),
            (TermKind::ShellDifference, _) => {
                for m in shell(l as usize, d) {
                    corners(&m, &mut set);
                }
            }
        }
        set.into_iter().collect()
    }

    /// Every grid the term touches is empty, so it is identically zero.
    pub fn is_structurally_zero(&self, d: usize) -> bool {
        self.grids(d).iter().all(|g| g.is_degenerate())
    }

    /// Idealized work `sum 2^{|g|_1}` over the non-empty grids touched.
    pub fn modeled_cost(&self, d: usize) -> f64 {
        self.grids(d)
            .iter()
            .filter(|g| !g.is_degenerate())
            .map(|g| 2f64.powi(g.norm1() as i32))
            .sum()
    }

    pub fn sample(&self, eval: &PdeEvaluator<'_>, y: &[f64]) -> Result<TermSample> {
        let d = eval.spec.d;
        let l = self.level();
        let ((value, fine), cost) = match (&self.kind, &self.key) {
            (TermKind::IsoValue, _) => eval.with_memo(y, |e| {
                let v = e(&MultiIndex::isotropic(d, l as i32));
                (v, v)
            })?,
            (TermKind::IsoDifference, _) => eval.with_memo(y, |e| {
                let fine = e(&MultiIndex::isotropic(d, l as i32));
                let coarse = if l >= 1 { e(&MultiIndex::isotropic(d, l as i32 - 1)) } else { 0.0 };
                (fine - coarse, fine)
            })?,
            (TermKind::MixedDifference, key) => {
                let m = match key {
                    LevelKey::Index(m) => m.clone(),
                    LevelKey::Level(_) => MultiIndex::new(vec![l as i32]),
                };
                eval.with_memo(y, |e| {
                    let v = mixed_difference(|g: &MultiIndex| e(g), &m);
                    (v, v)
                })?
            }
            (TermKind::ShellDifference, _) => eval.with_memo(y, |e| {
                let v: f64 = shell(l as usize, d).iter().map(|m| mixed_difference(|g: &MultiIndex| e(g), m)).sum();
                (v, v)
            })?,
        };
        Ok(TermSample { value, fine, cost })
    }
}
