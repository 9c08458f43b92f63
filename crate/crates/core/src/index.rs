//! Multi-indices, mixed differences and the sparse combination technique.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Per-direction refinement levels `(l_1, ..., l_d)`; grid spacing in
/// direction `j` is `2^-l_j`.
///
/// Negative components are representable: such an index denotes the empty
/// approximation whose value is zero by convention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<i32>);

impl MultiIndex {
    pub fn new(levels: Vec<i32>) -> Self {
        assert!(!levels.is_empty(), "multi-index needs at least one direction");
        MultiIndex(levels)
    }

    pub fn zeros(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    /// Isotropic index `(level, ..., level)`.
    pub fn isotropic(d: usize, level: i32) -> Self {
        MultiIndex(vec![level; d])
    }

    /// Unit index `e_j`.
    pub fn unit(d: usize, j: usize) -> Self {
        let mut v = vec![0; d];
        v[j] = 1;
        MultiIndex(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn levels(&self) -> &[i32] {
        &self.0
    }

    pub fn norm1(&self) -> i64 {
        self.0.iter().map(|&l| l as i64).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&l| l >= 0)
    }

    /// True when some direction has no interior grid nodes (`l_j <= 0`), so
    /// the discrete solution and its functional vanish identically.
    pub fn is_degenerate(&self) -> bool {
        self.0.iter().any(|&l| l <= 0)
    }

    /// `self - b` for a corner `b` of `{0,1}^d` encoded as a bit mask.
    pub fn minus_corner(&self, mask: u32) -> MultiIndex {
        MultiIndex(
            self.0
                .iter()
                .enumerate()
                .map(|(j, &l)| l - ((mask >> j) & 1) as i32)
                .collect(),
        )
    }

    pub fn sub(&self, other: &MultiIndex) -> MultiIndex {
        assert_eq!(self.dim(), other.dim());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }
}

impl From<Vec<i32>> for MultiIndex {
    fn from(v: Vec<i32>) -> Self {
        MultiIndex::new(v)
    }
}

impl<const N: usize> From<[i32; N]> for MultiIndex {
    fn from(v: [i32; N]) -> Self {
        MultiIndex::new(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

/// Binomial coefficient `C(n, k)`; zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// All multi-indices with `|l|_1 = level` in lexicographic order.
pub fn shell(level: usize, d: usize) -> Vec<MultiIndex> {
    assert!(d >= 1);
    let mut out = Vec::with_capacity(binomial((level + d - 1) as u64, (d - 1) as u64) as usize);
    let mut current = vec![0i32; d];
    fill_shell(level, 0, &mut current, &mut out);
    out
}

fn fill_shell(remaining: usize, pos: usize, current: &mut Vec<i32>, out: &mut Vec<MultiIndex>) {
    let d = current.len();
    if pos == d - 1 {
        current[pos] = remaining as i32;
        out.push(MultiIndex(current.clone()));
        return;
    }
    for v in 0..=remaining {
        current[pos] = v as i32;
        fill_shell(remaining - v, pos + 1, current, out);
    }
}

/// Downward-closed total-degree set `{l >= 0 : |l|_1 <= L}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    pub d: usize,
    pub level: usize,
    members: Vec<MultiIndex>,
}

impl IndexSet {
    /// Members are ordered shell by shell, lexicographically within a shell.
    pub fn simplex(d: usize, level: usize) -> Self {
        let members = (0..=level).flat_map(|k| shell(k, d)).collect();
        IndexSet { d, level, members }
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, ell: &MultiIndex) -> bool {
        ell.dim() == self.d && ell.is_nonnegative() && ell.norm1() <= self.level as i64
    }
}

/// `(prod_j Delta_j) P` at `ell`: the alternating sum over the `2^d` corners
/// below `ell`. Indices with a negative component contribute zero.
pub fn mixed_difference<F>(mut evaluator: F, ell: &MultiIndex) -> f64
where
    F: FnMut(&MultiIndex) -> f64,
{
    let d = ell.dim();
    let mut total = 0.0;
    for mask in 0u32..(1u32 << d) {
        let idx = ell.minus_corner(mask);
        if !idx.is_nonnegative() {
            continue;
        }
        let v = evaluator(&idx);
        if mask.count_ones() % 2 == 0 {
            total += v;
        } else {
            total -= v;
        }
    }
    total
}

/// Signature shared by [`mixed_difference`] and deliberately broken variants
/// used for fault injection in the verification suite.
pub type MixedDifferenceFn = fn(&mut dyn FnMut(&MultiIndex) -> f64, &MultiIndex) -> f64;

/// [`mixed_difference`] behind the [`MixedDifferenceFn`] signature.
pub fn mixed_difference_dyn(evaluator: &mut dyn FnMut(&MultiIndex) -> f64, ell: &MultiIndex) -> f64 {
    mixed_difference(evaluator, ell)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub max_abs_diff: f64,
}

impl IdentityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        IdentityCheck {
            lhs,
            rhs,
            max_abs_diff: (lhs - rhs).abs(),
        }
    }

    /// Discrepancy relative to `max(|lhs|, |rhs|, 1e-300)`.
    pub fn relative(&self) -> f64 {
        self.max_abs_diff / self.lhs.abs().max(self.rhs.abs()).max(1e-300)
    }
}

/// Every `l` with `0 <= l <= upper` componentwise, in lexicographic order.
pub fn box_indices(upper: &MultiIndex) -> Vec<MultiIndex> {
    let d = upper.dim();
    let mut out = vec![];
    if !upper.is_nonnegative() {
        return out;
    }
    let mut cur = vec![0i32; d];
    loop {
        out.push(MultiIndex(cur.clone()));
        let mut j = d;
        loop {
            if j == 0 {
                return out;
            }
            j -= 1;
            if cur[j] < upper.0[j] {
                cur[j] += 1;
                for c in cur.iter_mut().skip(j + 1) {
                    *c = 0;
                }
                break;
            }
        }
    }
}

/// Compares `P_{l'}` with `sum_{0 <= l <= l'} DeltaP_l`.
pub fn summation_identity_check<F>(evaluator: F, ell_prime: &MultiIndex) -> IdentityCheck
where
    F: FnMut(&MultiIndex) -> f64,
{
    summation_identity_check_with(mixed_difference_dyn, evaluator, ell_prime)
}

pub fn summation_identity_check_with<F>(md: MixedDifferenceFn, mut evaluator: F, ell_prime: &MultiIndex) -> IdentityCheck
where
    F: FnMut(&MultiIndex) -> f64,
{
    let lhs = evaluator(ell_prime);
    let rhs = box_indices(ell_prime)
        .iter()
        .map(|ell| md(&mut evaluator, ell))
        .sum();
    IdentityCheck::new(lhs, rhs)
}

/// Shell sum `S_level = sum_{|l|_1 = level} P_l`, zero for negative levels.
pub fn shell_sum<F>(mut evaluator: F, level: i64, d: usize) -> f64
where
    F: FnMut(&MultiIndex) -> f64,
{
    if level < 0 {
        return 0.0;
    }
    shell(level as usize, d).iter().map(&mut evaluator).sum()
}

/// Sparse combination value via binomially weighted shell sums,
/// `P_level = sum_{k=0}^{d-1} (-1)^k C(d-1, k) S_{level-k}`.
pub fn combination_value<F>(mut evaluator: F, level: i64, d: usize) -> f64
where
    F: FnMut(&MultiIndex) -> f64,
{
    let mut total = 0.0;
    for k in 0..d {
        let w = binomial((d - 1) as u64, k as u64) as f64;
        let s = shell_sum(&mut evaluator, level - k as i64, d);
        if k % 2 == 0 {
            total += w * s;
        } else {
            total -= w * s;
        }
    }
    total
}

/// Sparse combination value as the truncated mixed-difference sum
/// `sum_{|l|_1 <= level} DeltaP_l`.
pub fn truncated_sum<F>(evaluator: F, level: i64, d: usize) -> f64
where
    F: FnMut(&MultiIndex) -> f64,
{
    truncated_sum_with(mixed_difference_dyn, evaluator, level, d)
}

pub fn truncated_sum_with<F>(md: MixedDifferenceFn, mut evaluator: F, level: i64, d: usize) -> f64
where
    F: FnMut(&MultiIndex) -> f64,
{
    if level < 0 {
        return 0.0;
    }
    IndexSet::simplex(d, level as usize)
        .members()
        .iter()
        .map(|ell| md(&mut evaluator, ell))
        .sum()
}

/// Caches evaluator values by multi-index so that overlapping stencils of
/// mixed differences and shell sums only evaluate each grid once.
pub struct Memo<F> {
    inner: F,
    cache: HashMap<MultiIndex, f64>,
    misses: usize,
}

impl<F: FnMut(&MultiIndex) -> f64> Memo<F> {
    pub fn new(inner: F) -> Self {
        Memo {
            inner,
            cache: HashMap::new(),
            misses: 0,
        }
    }

    /// Value at `ell`; zero without evaluation for negative components.
    pub fn get(&mut self, ell: &MultiIndex) -> f64 {
        if !ell.is_nonnegative() {
            return 0.0;
        }
        if let Some(&v) = self.cache.get(ell) {
            return v;
        }
        self.misses += 1;
        let v = (self.inner)(ell);
        self.cache.insert(ell.clone(), v);
        v
    }

    /// Number of distinct evaluations performed.
    pub fn evaluations(&self) -> usize {
        self.misses
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_evaluator(seed: u64) -> impl FnMut(&MultiIndex) -> f64 {
        let mut memo: HashMap<MultiIndex, f64> = HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        move |ell: &MultiIndex| {
            if !ell.is_nonnegative() {
                return 0.0;
            }
            *memo.entry(ell.clone()).or_insert_with(|| rng.gen_range(-1.0..1.0))
        }
    }

    #[test]
    fn shells_enumerate_lexicographically() {
        assert_eq!(shell(1, 2), vec![MultiIndex::from([0, 1]), MultiIndex::from([1, 0])]);
        assert_eq!(shell(2, 3).len(), 6);
        assert_eq!(shell(5, 1), vec![MultiIndex::from([5])]);
        for d in 1..=4 {
            for l in 0..=6 {
                assert_eq!(shell(l, d).len() as u64, binomial((l + d - 1) as u64, (d - 1) as u64));
            }
        }
    }

    #[test]
    fn simplex_size_and_closure() {
        for d in 1..=3 {
            for l in 0..=5 {
                let set = IndexSet::simplex(d, l);
                assert_eq!(set.len() as u64, binomial((l + d) as u64, d as u64));
                for m in set.members() {
                    for j in 0..d {
                        let lower = m.sub(&MultiIndex::unit(d, j));
                        if lower.is_nonnegative() {
                            assert!(set.contains(&lower));
                        }
                    }
                }
            }
        }
        assert_eq!(IndexSet::simplex(2, 4).len(), 15);
    }

    #[test]
    fn mixed_difference_hand_values() {
        let v = mixed_difference(|_| 7.0, &MultiIndex::from([0]));
        assert_eq!(v, 7.0);
        let table = |m: &MultiIndex| match m.levels() {
            [1, 1] => 4.0,
            [0, 1] | [1, 0] => 2.0,
            [0, 0] => 1.0,
            _ => 0.0,
        };
        assert_eq!(mixed_difference(table, &MultiIndex::from([1, 1])), 1.0);
    }

    #[test]
    fn mixed_difference_of_product_form() {
        let phi = |l: i32| if l < 0 { 0.0 } else { 1.0 - 2f64.powi(-2 * l) };
        for d in 1..=3usize {
            for ell in IndexSet::simplex(d, 5).members() {
                let got = mixed_difference(|m: &MultiIndex| m.levels().iter().map(|&l| phi(l)).product(), ell);
                let want: f64 = ell.levels().iter().map(|&l| phi(l) - phi(l - 1)).product();
                assert!((got - want).abs() <= 1e-14, "{ell}: {got} vs {want}");
                if ell.levels().iter().all(|&l| l >= 1) {
                    let closed: f64 = ell
                        .levels()
                        .iter()
                        .map(|&l| 2f64.powi(-2 * (l - 1)) - 2f64.powi(-2 * l))
                        .product();
                    assert!((got - closed).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn summation_identity_on_tables() {
        let check = summation_identity_check(table_evaluator(1), &MultiIndex::from([0, 0]));
        assert_eq!(check.lhs, check.rhs);
        let check = summation_identity_check(table_evaluator(2), &MultiIndex::from([2, 3]));
        assert!(check.relative() <= 1e-12, "{check:?}");
        let linear = |m: &MultiIndex| (m.levels()[0] + m.levels()[1]) as f64;
        let check = summation_identity_check(linear, &MultiIndex::from([3, 4]));
        assert_eq!(check.max_abs_diff, 0.0);
    }

    #[test]
    fn combination_forms_agree() {
        let mut eval = table_evaluator(3);
        assert_eq!(combination_value(&mut eval, 4, 1), eval(&MultiIndex::from([4])));
        let mut eval = table_evaluator(4);
        let s = |e: &mut dyn FnMut(&MultiIndex) -> f64, l| shell_sum(e, l, 2);
        let want = s(&mut eval, 5) - s(&mut eval, 4);
        assert!((combination_value(&mut eval, 5, 2) - want).abs() < 1e-15);
        let mut eval = table_evaluator(5);
        let a = combination_value(&mut eval, 4, 3);
        let b = truncated_sum(&mut eval, 4, 3);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()), "{a} vs {b}");
    }

    #[test]
    fn memo_counts_distinct_evaluations() {
        let mut calls = 0;
        let mut memo = Memo::new(|m: &MultiIndex| {
            calls += 1;
            m.norm1() as f64
        });
        let ell = MultiIndex::from([2, 2]);
        let a = mixed_difference(|m: &MultiIndex| memo.get(m), &ell);
        let b = mixed_difference(|m: &MultiIndex| memo.get(m), &ell);
        assert_eq!(a, b);
        assert_eq!(memo.evaluations(), 4);
        drop(memo);
        assert_eq!(calls, 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn summation_identity_holds(seed in any::<u64>(), a in 0i32..=4, b in 0i32..=4, c in 0i32..=4, d in 1usize..=3) {
                let ell: MultiIndex = vec![a, b, c][..d].to_vec().into();
                let check = summation_identity_check(table_evaluator(seed), &ell);
                prop_assert!(check.max_abs_diff <= 1e-12 * check.lhs.abs().max(1.0));
            }

            #[test]
            fn consecutive_combinations_differ_by_a_shell(seed in any::<u64>(), level in 1i64..=5, d in 1usize..=3) {
                let mut eval = table_evaluator(seed);
                let diff = combination_value(&mut eval, level, d) - combination_value(&mut eval, level - 1, d);
                let shell_diff: f64 = shell(level as usize, d).iter().map(|m| mixed_difference(&mut eval, m)).sum();
                prop_assert!((diff - shell_diff).abs() <= 1e-12);
            }
        }
    }
}
