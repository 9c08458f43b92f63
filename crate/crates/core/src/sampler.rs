//! Stochastic parameter points: keyed pseudo-random samples and randomly
//! shifted rank-1 lattice rules.
//!
//! Every random draw is derived from a [`StreamKey`] so that results do not
//! depend on evaluation order or on the number of worker threads.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a random stream is used for; part of every stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u64)]
pub enum Purpose {
    Screening = 1,
    Estimate = 2,
    Shift = 3,
    Oracle = 4,
    Replication = 5,
    Test = 6,
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    /// Level or multi-index slot.
    pub slot: u64,
    /// Meta-replication or sub-run counter.
    pub replica: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, slot: u64, replica: u64) -> Self {
        StreamKey {
            seed,
            purpose,
            slot,
            replica,
        }
    }

    pub fn with_slot(self, slot: u64) -> Self {
        StreamKey { slot, ..self }
    }

    /// Generator for draw number `index` within this stream.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut h = splitmix(self.seed);
        for part in [self.purpose as u64, self.slot, self.replica, index] {
            h = splitmix(h ^ part);
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_mut(8).enumerate() {
            h = splitmix(h.wrapping_add(i as u64));
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Point number `index` of the pseudo-random stream, uniform on `[-1/2,1/2]^s`.
pub fn mc_point(s: usize, key: &StreamKey, index: u64) -> Vec<f64> {
    let mut rng = key.rng(index);
    (0..s).map(|_| rng.gen::<f64>() - 0.5).collect()
}

/// The first `n` points of the stream.
pub fn mc_points(s: usize, n: usize, key: &StreamKey) -> Vec<Vec<f64>> {
    (0..n as u64).map(|i| mc_point(s, key, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSource {
    File,
    KorobovSearch,
}

/// Rank-1 lattice rule with `n` points and generating vector `z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeRule {
    pub n: u64,
    pub z: Vec<u64>,
    pub source: RuleSource,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl LatticeRule {
    pub fn new(n: u64, z: Vec<u64>, source: RuleSource) -> Result<Self> {
        let rule = LatticeRule { n, z, source };
        rule.validate()?;
        Ok(rule)
    }

    pub fn s(&self) -> usize {
        self.z.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("lattice point count must be positive".into()));
        }
        if self.z.is_empty() {
            return Err(Error::Config("generating vector is empty".into()));
        }
        for (j, &zj) in self.z.iter().enumerate() {
            let in_range = if self.n == 1 { zj == 1 } else { (1..self.n).contains(&zj) };
            if !in_range {
                return Err(Error::Config(format!(
                    "generating vector entry z_{} = {zj} must lie in [1, {})",
                    j + 1,
                    self.n.max(2)
                )));
            }
            if gcd(zj, self.n) != 1 {
                return Err(Error::Config(format!(
                    "gcd(z_{} = {zj}, N = {}) != 1; the rule would repeat coordinate values",
                    j + 1,
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Point `i` (1-based) shifted by `shift`: `frac(i z / N + shift) - 1/2`.
    pub fn point_into(&self, i: u64, shift: &[f64], out: &mut [f64]) {
        let n = self.n as f64;
        for ((o, &zj), &dj) in out.iter_mut().zip(&self.z).zip(shift) {
            let base = ((i % self.n) * (zj % self.n) % self.n) as f64 / n;
            let v = base + dj;
            *o = (v - v.floor()) - 0.5;
        }
    }

    /// All `N` shifted points, `i = 1..=N`.
    pub fn points(&self, shift: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(shift.len(), self.s(), "shift dimension mismatch");
        (1..=self.n)
            .map(|i| {
                let mut p = vec![0.0; self.s()];
                self.point_into(i, shift, &mut p);
                p
            })
            .collect()
    }

    /// Shift-averaged squared worst-case error in the weighted unanchored
    /// Sobolev space with product weights `gamma_j = j^-2`.
    pub fn criterion(&self) -> f64 {
        korobov_style_error(self.n, &self.z, &default_weights(self.s()))
    }
}

pub fn default_weights(s: usize) -> Vec<f64> {
    (1..=s).map(|j| 1.0 / (j * j) as f64).collect()
}

fn bernoulli2_table(n: u64) -> Vec<f64> {
    (0..n)
        .map(|r| {
            let x = r as f64 / n as f64;
            x * x - x + 1.0 / 6.0
        })
        .collect()
}

fn korobov_style_error(n: u64, z: &[u64], weights: &[f64]) -> f64 {
    let table = bernoulli2_table(n);
    let mut total = 0.0;
    for k in 0..n {
        let mut prod = 1.0;
        for (&zj, &g) in z.iter().zip(weights) {
            prod *= 1.0 + g * table[((k * zj) % n) as usize];
        }
        total += prod;
    }
    total / n as f64 - 1.0
}

/// Random shifts `Delta^(1..R)`, uniform in `(0,1)^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSet {
    pub shifts: Vec<Vec<f64>>,
    pub key: StreamKey,
}

impl ShiftSet {
    pub fn generate(s: usize, r: usize, key: StreamKey) -> Self {
        let shifts = (0..r as u64)
            .map(|k| {
                let mut rng = key.rng(k);
                (0..s)
                    .map(|_| loop {
                        let u: f64 = rng.gen();
                        if u > 0.0 {
                            break u;
                        }
                    })
                    .collect()
            })
            .collect();
        ShiftSet { shifts, key }
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }
}

/// Mean of the `R` shift estimates and the unbiased estimate of the variance
/// of that mean, `sum_k (Q_k - Qbar)^2 / (R (R - 1))`.
pub fn shift_statistics(q: &[f64]) -> Result<(f64, f64)> {
    if q.len() < 2 {
        return Err(Error::Argument(format!(
            "variance estimation needs at least 2 shift estimates, got {}",
            q.len()
        )));
    }
    let r = q.len() as f64;
    let mean = q.iter().sum::<f64>() / r;
    let ss: f64 = q.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, ss / (r * (r - 1.0))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KorobovSearch {
    pub rule: LatticeRule,
    pub criterion: f64,
    pub candidates_scored: usize,
    /// Set when the cap stopped the search before every odd generator was tried.
    pub cap_exhausted: bool,
}

/// Korobov vectors `z_j = a^{j-1} mod N` over odd `a`, scored by
/// [`LatticeRule::criterion`]. With more odd residues than `search_cap`, an
/// evenly spaced subset including `a = 1` is scored.
pub fn korobov_search(s: usize, n: u64, search_cap: usize) -> Result<KorobovSearch> {
    if s == 0 {
        return Err(Error::Argument("dimension must be positive".into()));
    }
    if n == 0 || !n.is_power_of_two() || n > 1 << 20 {
        return Err(Error::Argument(format!("Korobov search expects a power of two N <= 2^20, got {n}")));
    }
    if search_cap == 0 {
        return Err(Error::Argument("search cap must be positive".into()));
    }
    let weights = default_weights(s);
    let odd_count = (n / 2).max(1);
    let scored = (odd_count as usize).min(search_cap);
    let mut best: Option<(f64, Vec<u64>)> = None;
    for k in 0..scored as u64 {
        let a = if n == 1 { 1 } else { 1 + 2 * (k * odd_count / scored as u64) };
        let mut z = Vec::with_capacity(s);
        let mut power = 1 % n.max(2);
        for _ in 0..s {
            z.push(if n == 1 { 1 } else { power });
            power = (power * a) % n.max(2);
        }
        let e = korobov_style_error(n, &z, &weights);
        if best.as_ref().map_or(true, |(b, _)| e < *b) {
            best = Some((e, z));
        }
    }
    let (criterion, z) = best.expect("at least one candidate");
    Ok(KorobovSearch {
        rule: LatticeRule::new(n, z, RuleSource::KorobovSearch)?,
        criterion,
        candidates_scored: scored,
        cap_exhausted: (scored as u64) < odd_count,
    })
}

/// Parses a generating-vector file: one integer per line (`z_1, z_2, ...`),
/// with an optional first line `max_n <N>`. Blank lines and lines starting
/// with `#` are ignored.
pub fn parse_vector_file(text: &str) -> Result<(Option<u64>, Vec<u64>)> {
    let mut max_n = None;
    let mut z = vec![];
    let mut seen_value = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("max_n") {
            if seen_value || max_n.is_some() {
                return Err(Error::Config(format!(
                    "line {}: max_n header must precede the vector entries",
                    lineno + 1
                )));
            }
            let v = rest
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("line {}: bad max_n header: {e}", lineno + 1)))?;
            max_n = Some(v);
            continue;
        }
        let v = line
            .parse::<u64>()
            .map_err(|e| Error::Config(format!("line {}: '{line}' is not a positive integer: {e}", lineno + 1)))?;
        seen_value = true;
        z.push(v);
    }
    if z.is_empty() {
        return Err(Error::Config("generating vector file contains no entries".into()));
    }
    Ok((max_n, z))
}

/// Supplies one lattice rule per power-of-two point count.
#[derive(Debug)]
pub enum LatticeProvider {
    /// A single vector reused for every `N` as `z mod N` (embedded rules).
    Fixed { z: Vec<u64>, max_n: Option<u64> },
    /// A Korobov search per `N`, computed lazily and cached.
    Korobov {
        s: usize,
        search_cap: usize,
        cache: Vec<OnceLock<LatticeRule>>,
    },
}

/// Largest supported `log2 N`.
pub const MAX_LOG2_POINTS: u32 = 20;

impl LatticeProvider {
    pub fn fixed(z: Vec<u64>, max_n: Option<u64>, s: usize) -> Result<Self> {
        if z.len() < s {
            return Err(Error::Config(format!(
                "generating vector has {} entries but the problem needs s = {s}",
                z.len()
            )));
        }
        let z: Vec<u64> = z.into_iter().take(s).collect();
        if let Some(j) = z.iter().position(|&zj| zj % 2 == 0) {
            return Err(Error::Config(format!(
                "generating vector entry z_{} = {} is even; it is not coprime to power-of-two N",
                j + 1,
                z[j]
            )));
        }
        Ok(LatticeProvider::Fixed { z, max_n })
    }

    pub fn from_file_text(text: &str, s: usize) -> Result<Self> {
        let (max_n, z) = parse_vector_file(text)?;
        Self::fixed(z, max_n, s)
    }

    pub fn korobov(s: usize, search_cap: usize) -> Self {
        LatticeProvider::Korobov {
            s,
            search_cap,
            cache: (0..=MAX_LOG2_POINTS).map(|_| OnceLock::new()).collect(),
        }
    }

    /// Rule with `n` points; `n` must be a power of two.
    pub fn rule_for(&self, n: u64) -> Result<LatticeRule> {
        if !n.is_power_of_two() || n > 1 << MAX_LOG2_POINTS {
            return Err(Error::Config(format!(
                "QMC point counts must be powers of two up to 2^{MAX_LOG2_POINTS}, got {n}"
            )));
        }
        match self {
            LatticeProvider::Fixed { z, max_n } => {
                if let Some(m) = max_n {
                    if n > *m {
                        return Err(Error::Config(format!(
                            "requested N = {n} exceeds the lattice file's max_n = {m}"
                        )));
                    }
                }
                let zs = z.iter().map(|&zj| if n == 1 { 1 } else { zj % n }).collect();
                LatticeRule::new(n, zs, RuleSource::File)
            }
            LatticeProvider::Korobov { s, search_cap, cache } => {
                let m = n.trailing_zeros() as usize;
                if let Some(rule) = cache[m].get() {
                    return Ok(rule.clone());
                }
                let found = korobov_search(*s, n, *search_cap)?;
                Ok(cache[m].get_or_init(|| found.rule).clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let k = StreamKey::new(7, Purpose::Test, 3, 0);
        assert_eq!(mc_points(3, 10, &k), mc_points(3, 10, &k));
        assert_ne!(mc_points(3, 10, &k), mc_points(3, 10, &k.with_slot(4)));
        assert!(mc_points(2, 0, &k).is_empty());
    }

    #[test]
    fn pseudo_random_means_are_centred() {
        let k = StreamKey::new(1, Purpose::Test, 0, 0);
        let pts = mc_points(3, 100_000, &k);
        for j in 0..3 {
            let m = pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64;
            assert!(m.abs() <= 0.01, "coordinate {j}: {m}");
        }
        assert!(pts.iter().flatten().all(|v| (-0.5..=0.5).contains(v)));
    }

    #[test]
    fn lattice_points_by_hand() {
        let rule = LatticeRule::new(4, vec![1, 3], RuleSource::File).unwrap();
        let pts = rule.points(&[0.0, 0.0]);
        assert_eq!(pts, vec![vec![-0.25, 0.25], vec![0.0, 0.0], vec![0.25, -0.25], vec![-0.5, -0.5]]);
    }

    #[test]
    fn gcd_violation_is_rejected() {
        assert!(matches!(LatticeRule::new(8, vec![1, 4], RuleSource::File), Err(Error::Config(_))));
        assert!(LatticeProvider::fixed(vec![1, 6], None, 2).is_err());
    }

    #[test]
    fn constants_are_integrated_exactly() {
        let rule = korobov_search(3, 64, 64).unwrap().rule;
        let shifts = ShiftSet::generate(3, 5, StreamKey::new(2, Purpose::Test, 0, 0));
        for shift in &shifts.shifts {
            let q = rule.points(shift).iter().map(|_| 2.5).sum::<f64>() / 64.0;
            assert_eq!(q, 2.5);
        }
    }

    #[test]
    fn shifted_lattice_product_integrand() {
        // int prod_j (1/2 + y_j^2) over [-1/2,1/2]^2 = (1/2 + 1/12)^2
        let exact = (0.5f64 + 1.0 / 12.0).powi(2);
        let rule = korobov_search(2, 1024, 512).unwrap().rule;
        let shifts = ShiftSet::generate(2, 32, StreamKey::new(5, Purpose::Test, 0, 0));
        let q: Vec<f64> = shifts
            .shifts
            .iter()
            .map(|sh| rule.points(sh).iter().map(|y| y.iter().map(|v| 0.5 + v * v).product::<f64>()).sum::<f64>() / 1024.0)
            .collect();
        let (mean, var) = shift_statistics(&q).unwrap();
        assert!((mean - exact).abs() <= 3.0 * var.sqrt(), "{mean} vs {exact} (se {})", var.sqrt());
    }

    #[test]
    fn shift_statistics_examples() {
        assert_eq!(shift_statistics(&[1.0, 2.0, 3.0]).unwrap(), (2.0, 1.0 / 3.0));
        assert_eq!(shift_statistics(&[4.0; 6]).unwrap().1, 0.0);
        assert!(matches!(shift_statistics(&[1.0]), Err(Error::Argument(_))));
        let mut rng = StreamKey::new(9, Purpose::Test, 0, 0).rng(0);
        let q: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, v) = shift_statistics(&q).unwrap();
        assert!((v / 1e-4 - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn korobov_edge_cases() {
        assert_eq!(korobov_search(5, 2, 10).unwrap().rule.z, vec![1; 5]);
        assert_eq!(korobov_search(1, 256, 1000).unwrap().rule.z, vec![1]);
        let found = korobov_search(4, 256, 1000).unwrap();
        let trivial = LatticeRule::new(256, vec![1; 4], RuleSource::File).unwrap();
        assert!(found.criterion <= trivial.criterion());
        assert!(!found.cap_exhausted);
        assert!(korobov_search(4, 1024, 16).unwrap().cap_exhausted);
        assert_eq!(found.criterion, found.rule.criterion());
    }

    #[test]
    fn vector_file_parsing() {
        let (max_n, z) = parse_vector_file("max_n 1024\n1\n433\n# comment\n\n229\n").unwrap();
        assert_eq!(max_n, Some(1024));
        assert_eq!(z, vec![1, 433, 229]);
        assert!(parse_vector_file("1\nmax_n 8\n").is_err());
        assert!(parse_vector_file("1\nx\n").is_err());
        let p = LatticeProvider::from_file_text("max_n 1024\n1\n433\n229\n", 2).unwrap();
        assert_eq!(p.rule_for(256).unwrap().z, vec![1, 433 % 256]);
        assert!(p.rule_for(2048).is_err());
        assert!(p.rule_for(96).is_err());
    }

    #[test]
    fn korobov_provider_caches() {
        let p = LatticeProvider::korobov(3, 64);
        let a = p.rule_for(128).unwrap();
        let b = p.rule_for(128).unwrap();
        assert_eq!(a, b);
        assert_eq!(p.rule_for(1).unwrap().z, vec![1, 1, 1]);
    }

    #[test]
    fn unbiased_over_many_shifts() {
        // smooth periodic-free integrand with known integral:
        // int exp(y_1 + y_2/2) = (2 sinh(1/2)) (4 sinh(1/4))
        let exact = (2.0 * 0.5f64.sinh()) * (4.0 * 0.25f64.sinh());
        let rule = korobov_search(2, 64, 64).unwrap().rule;
        let shifts = ShiftSet::generate(2, 500, StreamKey::new(11, Purpose::Test, 0, 0));
        let q: Vec<f64> = shifts
            .shifts
            .iter()
            .map(|sh| rule.points(sh).iter().map(|y| (y[0] + 0.5 * y[1]).exp()).sum::<f64>() / 64.0)
            .collect();
        let (mean, var) = shift_statistics(&q).unwrap();
        assert!((mean - exact).abs() <= 4.0 * var.sqrt());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coordinates_are_equidistributed(m in 1u32..9, a in 0u64..256, sh in prop::collection::vec(0.0f64..1.0, 3)) {
                let n = 1u64 << m;
                let z = vec![1, (2 * a + 1) % n, (6 * a + 3) % n];
                prop_assume!(z.iter().all(|&zj| zj > 0 || n == 1));
                let z: Vec<u64> = z.into_iter().map(|v| if n == 1 { 1 } else { v }).collect();
                let rule = LatticeRule::new(n, z, RuleSource::File).unwrap();
                let pts = rule.points(&sh);
                for j in 0..3 {
                    let mut c: Vec<f64> = pts.iter().map(|p| p[j] + 0.5).collect();
                    prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
                    c.sort_by(|x, y| x.partial_cmp(y).unwrap());
                    let offset = c[0];
                    for (k, v) in c.iter().enumerate() {
                        prop_assert!((v - offset - k as f64 / n as f64).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
