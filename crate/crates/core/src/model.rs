//! Particle configurations, spread statistics and synchronizing jumps.
//!
//! Indices are zero-based throughout: an [`IndexTuple`] over `N` particles
//! holds values in `0..N`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of ordered tuples [`kappa_enumerate`] will visit.
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// Positions of `N >= 2` particles on the real line at a common instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfiguration {
    positions: Vec<f64>,
}

impl ParticleConfiguration {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Config(format!(
                "a configuration needs N >= 2 particles, got {}",
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::Config(format!(
                "position {i} is not finite ({})",
                positions[i]
            )));
        }
        Ok(Self { positions })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    /// Center of mass `M(x)`.
    pub fn center_of_mass(&self) -> f64 {
        center_of_mass(&self.positions)
    }

    /// Empirical variance `V(x)` with the `1/(N-1)` normalization.
    pub fn empirical_variance(&self) -> f64 {
        empirical_variance(&self.positions)
    }

    /// The configuration seen from its own center of mass.
    pub fn centered(&self) -> Self {
        let m = self.center_of_mass();
        Self {
            positions: self.positions.iter().map(|x| x - m).collect(),
        }
    }
}

/// Mean of the coordinates.
pub fn center_of_mass(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Two-pass empirical variance `(1/(N-1)) * sum (x_m - M(x))^2`.
///
/// Deviations are taken from the first-pass mean, and their sum is subtracted
/// back out (the corrected two-pass form), so a large common offset does not
/// cancel the significant digits of the spread.
pub fn empirical_variance(x: &[f64]) -> f64 {
    let n = x.len();
    debug_assert!(n >= 2);
    let m = center_of_mass(x);
    let (mut ss, mut s) = (0.0, 0.0);
    for &xi in x {
        let d = xi - m;
        ss += d * d;
        s += d;
    }
    ((ss - s * s / n as f64) / (n - 1) as f64).max(0.0)
}

/// A signature `(k_1, ..., k_l)`: `l` groups of sizes `k_j >= 2`, each
/// collapsing onto its leader at a synchronization epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct InteractionSignature {
    parts: Vec<usize>,
}

impl InteractionSignature {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Config(
                "signature must have at least one group (l >= 1)".into(),
            ));
        }
        if let Some(&bad) = parts.iter().find(|&&kj| kj < 2) {
            return Err(Error::Config(format!(
                "k_j >= 2 violated: signature {parts:?} has a group of size {bad}"
            )));
        }
        Ok(Self { parts })
    }

    /// The pairwise interaction `(2)`.
    pub fn pairwise() -> Self {
        Self { parts: vec![2] }
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    /// Total number of particles touched by one jump, `k = k_1 + ... + k_l`.
    pub fn k(&self) -> usize {
        self.parts.iter().sum()
    }

    /// Number of groups `l`.
    pub fn groups(&self) -> usize {
        self.parts.len()
    }

    /// Position ranges of the consecutive blocks within a tuple. The first
    /// position of each block is its leader.
    pub fn blocks(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.parts.iter().scan(0, |start, &kj| {
            let r = *start..*start + kj;
            *start += kj;
            Some(r)
        })
    }

    /// Interaction constant `sum k_j^2 - k`.
    pub fn kappa(&self) -> f64 {
        kappa_analytic(self)
    }
}

impl TryFrom<Vec<usize>> for InteractionSignature {
    type Error = Error;

    fn try_from(parts: Vec<usize>) -> Result<Self> {
        Self::new(parts)
    }
}

impl From<InteractionSignature> for Vec<usize> {
    fn from(sig: InteractionSignature) -> Self {
        sig.parts
    }
}

impl fmt::Display for InteractionSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (j, kj) in self.parts.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{kj}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for InteractionSignature {
    type Err = Error;

    /// Parses `2`, `2,3` or `(2,3)`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts = inner
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad signature entry {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }
}

/// An ordered tuple `(i_1, ..., i_k)` of pairwise distinct particle indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexTuple {
    indices: Vec<usize>,
}

impl IndexTuple {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        for (p, &ip) in indices.iter().enumerate() {
            if indices[..p].contains(&ip) {
                return Err(Error::Contract(format!(
                    "tuple indices must be pairwise distinct, {ip} repeats in {indices:?}"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_tuple(n: usize, sig: &InteractionSignature, tuple: &[usize]) -> Result<()> {
    if tuple.len() != sig.k() {
        return Err(Error::Contract(format!(
            "tuple has length {} but signature {sig} needs k = {}",
            tuple.len(),
            sig.k()
        )));
    }
    if let Some(&i) = tuple.iter().find(|&&i| i >= n) {
        return Err(Error::Contract(format!(
            "index {i} out of range for N = {n}"
        )));
    }
    Ok(())
}

/// Applies the synchronizing map in place. Within block `j` every member
/// takes the coordinate of the block's leader (its first index). The tuple is
/// assumed valid for `x` and `sig`.
pub(crate) fn sync_in_place(x: &mut [f64], sig: &InteractionSignature, tuple: &[usize]) {
    for block in sig.blocks() {
        let members = &tuple[block];
        let target = x[members[0]];
        for &m in &members[1..] {
            x[m] = target;
        }
    }
}

/// The synchronizing map `J` for `sig` and `tuple` applied to `x`.
pub fn apply_sync(
    x: &ParticleConfiguration,
    sig: &InteractionSignature,
    tuple: &IndexTuple,
) -> Result<ParticleConfiguration> {
    check_tuple(x.len(), sig, tuple.indices())?;
    let mut y = x.positions.clone();
    sync_in_place(&mut y, sig, tuple.indices());
    Ok(ParticleConfiguration { positions: y })
}

/// Draws uniform ordered tuples of distinct indices by partially shuffling a
/// reusable scratch permutation of `0..N`.
#[derive(Debug, Clone)]
pub struct TupleSampler {
    scratch: Vec<usize>,
    k: usize,
}

impl TupleSampler {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("tuple length k = {k} must be >= 2")));
        }
        if k > n {
            return Err(Error::Config(format!(
                "tuple length k = {k} exceeds N = {n}"
            )));
        }
        Ok(Self {
            scratch: (0..n).collect(),
            k,
        })
    }

    /// Returns the next tuple as a borrowed slice of the scratch array. Every
    /// one of the `N(N-1)...(N-k+1)` ordered tuples is equally likely,
    /// whatever permutation the scratch array currently holds.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[usize] {
        let n = self.scratch.len();
        for p in 0..self.k {
            let q = rng.random_range(p..n);
            self.scratch.swap(p, q);
        }
        &self.scratch[..self.k]
    }
}

/// One uniform ordered `k`-tuple of distinct indices from `0..n`.
pub fn sample_tuple<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<IndexTuple> {
    let mut sampler = TupleSampler::new(n, k)?;
    Ok(IndexTuple {
        indices: sampler.sample(rng).to_vec(),
    })
}

/// `kappa = sum k_j^2 - k`.
pub fn kappa_analytic(sig: &InteractionSignature) -> f64 {
    let sq: usize = sig.parts.iter().map(|kj| kj * kj).sum();
    (sq - sig.k()) as f64
}

/// Number of ordered `k`-tuples of distinct indices from `0..n`.
pub fn ordered_tuple_count(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    ((n - k + 1)..=n).map(|v| v as u128).product()
}

/// Visits every ordered `k`-tuple of distinct indices in `0..n`, in
/// lexicographic order.
pub fn for_each_ordered_tuple(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(
        n: usize,
        k: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if cur.len() == k {
            visit(cur);
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(n, k, used, cur, visit);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut used = vec![false; n];
    let mut cur = Vec::with_capacity(k);
    rec(n, k, &mut used, &mut cur, &mut visit);
}

/// Brute-force interaction constant: averages `V` over the images of `x`
/// under every ordered tuple and solves `mean V' / V = 1 - kappa/(N(N-1))`.
pub fn kappa_enumerate(sig: &InteractionSignature, x: &ParticleConfiguration) -> Result<f64> {
    let n = x.len();
    let k = sig.k();
    if k > n {
        return Err(Error::Config(format!(
            "signature {sig} needs k = {k} particles but N = {n}"
        )));
    }
    let count = ordered_tuple_count(n, k);
    if count > ENUMERATION_CAP as u128 {
        return Err(Error::TooManyTuples {
            count,
            cap: ENUMERATION_CAP,
        });
    }
    let v0 = x.empirical_variance();
    if v0 == 0.0 {
        return Err(Error::Degenerate);
    }
    let mut y = x.positions.clone();
    let mut total = 0.0;
    for_each_ordered_tuple(n, k, |tuple| {
        y.copy_from_slice(&x.positions);
        sync_in_place(&mut y, sig, tuple);
        total += empirical_variance(&y);
    });
    let ratio = total / count as f64 / v0;
    Ok((1.0 - ratio) * (n * (n - 1)) as f64)
}

/// `k_N = 1 - kappa / (N(N-1))`, the expected one-jump contraction of `V`.
///
/// `kappa = N(N-1)` is accepted and yields 0: a single group spanning all
/// particles collapses the configuration at every jump. See
/// [`is_total_collapse`].
pub fn contraction_factor(n: usize, kappa: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Config(format!("N = {n} must be >= 2")));
    }
    if kappa.is_nan() || kappa <= 0.0 {
        return Err(Error::OutOfRange {
            name: "kappa",
            value: kappa,
            reason: "must be positive",
        });
    }
    let pairs = (n * (n - 1)) as f64;
    if kappa > pairs {
        return Err(Error::OutOfRange {
            name: "kappa",
            value: kappa,
            reason: "exceeds N(N-1), contraction factor would be negative",
        });
    }
    Ok(1.0 - kappa / pairs)
}

/// True when every jump merges all `N` particles (`k_N = 0`).
pub fn is_total_collapse(n: usize, kappa: f64) -> bool {
    kappa >= (n * (n - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(v: &[f64]) -> ParticleConfiguration {
        ParticleConfiguration::new(v.to_vec()).unwrap()
    }

    fn sig(p: &[usize]) -> InteractionSignature {
        InteractionSignature::new(p.to_vec()).unwrap()
    }

    #[test]
    fn center_of_mass_examples() {
        assert_eq!(cfg(&[0.0, 0.0, 0.0]).center_of_mass(), 0.0);
        assert_eq!(cfg(&[0.0, 1.0, 2.0]).center_of_mass(), 1.0);
        assert_eq!(cfg(&[-3.0, 5.0]).center_of_mass(), 1.0);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(cfg(&[7.5; 6]).empirical_variance(), 0.0);
        assert_eq!(cfg(&[0.0, 1.0, 2.0]).empirical_variance(), 1.0);
        assert_eq!(cfg(&[0.0, 2.0]).empirical_variance(), 2.0);
    }

    #[test]
    fn variance_survives_large_offset() {
        let base = [0.0, 1.0, 2.0];
        let shifted: Vec<f64> = base.iter().map(|x| x + 1e9).collect();
        let v = empirical_variance(&shifted);
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn configuration_rejects_bad_input() {
        assert!(ParticleConfiguration::new(vec![1.0]).is_err());
        assert!(ParticleConfiguration::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParticleConfiguration::new(vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn signature_validation() {
        assert!(InteractionSignature::new(vec![]).is_err());
        let err = InteractionSignature::new(vec![2, 1]).unwrap_err();
        assert!(err.to_string().contains("k_j >= 2 violated"), "{err}");
        let s = sig(&[2, 3]);
        assert_eq!(s.k(), 5);
        assert_eq!(s.groups(), 2);
        assert_eq!(s.blocks().collect::<Vec<_>>(), vec![0..2, 2..5]);
        assert_eq!(s.to_string(), "(2,3)");
        assert_eq!("(2,3)".parse::<InteractionSignature>().unwrap(), s);
        assert_eq!("2, 3".parse::<InteractionSignature>().unwrap(), s);
    }

    #[test]
    fn pairwise_sync_moves_second_onto_first() {
        let x = cfg(&[1.0, 2.0, 3.0]);
        let t = IndexTuple::new(vec![0, 1]).unwrap();
        let y = apply_sync(&x, &sig(&[2]), &t).unwrap();
        assert_eq!(y.positions(), &[1.0, 1.0, 3.0]);
    }

    #[test]
    fn repeated_index_is_rejected() {
        assert!(matches!(
            IndexTuple::new(vec![1, 1]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let x = cfg(&[1.0, 2.0, 3.0]);
        let t = IndexTuple::new(vec![0, 1, 2]).unwrap();
        assert!(matches!(
            apply_sync(&x, &sig(&[2]), &t),
            Err(Error::Contract(_))
        ));
        let t = IndexTuple::new(vec![0, 5]).unwrap();
        assert!(matches!(
            apply_sync(&x, &sig(&[2]), &t),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn two_groups_collapse_onto_block_leaders() {
        let x = cfg(&[10.0, 20.0, 30.0, 40.0]);
        let t = IndexTuple::new(vec![0, 1, 2, 3]).unwrap();
        let y = apply_sync(&x, &sig(&[2, 2]), &t).unwrap();
        assert_eq!(y.positions(), &[10.0, 10.0, 30.0, 30.0]);
    }

    #[test]
    fn kappa_analytic_examples() {
        assert_eq!(kappa_analytic(&sig(&[2])), 2.0);
        assert_eq!(kappa_analytic(&sig(&[3])), 6.0);
        assert_eq!(kappa_analytic(&sig(&[2, 2])), 4.0);
    }

    // Hand enumeration for x = (0,1,2), pairwise: the six images have
    // V = 4/3 when the middle particle jumps onto an end (two images) and
    // V = 1/3 otherwise (four images) -> mean 2/3, so kappa = (1 - 2/3) * 6 = 2.
    #[test]
    fn kappa_enumerate_hand_case() {
        let x = cfg(&[0.0, 1.0, 2.0]);
        let mut vs = Vec::new();
        for_each_ordered_tuple(3, 2, |t| {
            let mut y = x.positions().to_vec();
            sync_in_place(&mut y, &sig(&[2]), t);
            vs.push(empirical_variance(&y));
        });
        assert_eq!(vs.len(), 6);
        let mean = vs.iter().sum::<f64>() / 6.0;
        assert!((mean - 2.0 / 3.0).abs() < 1e-15);
        let kappa = kappa_enumerate(&sig(&[2]), &x).unwrap();
        assert!((kappa - 2.0).abs() < 1e-12, "{kappa}");
    }

    #[test]
    fn kappa_enumerate_random_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (s, expect) in [(sig(&[2]), 2.0), (sig(&[3]), 6.0), (sig(&[2, 2]), 4.0)] {
            let x: Vec<f64> = (0..5)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect();
            let kappa = kappa_enumerate(&s, &cfg(&x)).unwrap();
            assert!((kappa - expect).abs() < 1e-9, "{s}: {kappa}");
        }
    }

    #[test]
    fn kappa_enumerate_errors() {
        assert_eq!(
            kappa_enumerate(&sig(&[2]), &cfg(&[3.0, 3.0, 3.0])),
            Err(Error::Degenerate)
        );
        assert!(matches!(
            kappa_enumerate(&sig(&[2, 2]), &cfg(&[0.0, 1.0, 2.0])),
            Err(Error::Config(_))
        ));
        let big = cfg(&(0..20).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(
            kappa_enumerate(&sig(&[3, 3]), &big),
            Err(Error::TooManyTuples { .. })
        ));
    }

    #[test]
    fn contraction_factor_examples() {
        assert!((contraction_factor(3, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(contraction_factor(2, 2.0).unwrap(), 0.0);
        assert!(is_total_collapse(2, 2.0));
        assert!((contraction_factor(10, 2.0).unwrap() - (1.0 - 2.0 / 90.0)).abs() < 1e-15);
        assert!(contraction_factor(3, 7.0).is_err());
        assert!(contraction_factor(3, 0.0).is_err());
        assert!(contraction_factor(1, 1.0).is_err());
    }

    #[test]
    fn tuple_count() {
        assert_eq!(ordered_tuple_count(5, 4), 120);
        assert_eq!(ordered_tuple_count(3, 2), 6);
        let mut seen = 0;
        for_each_ordered_tuple(5, 3, |_| seen += 1);
        assert_eq!(seen, 60);
    }

    #[test]
    fn sampler_rejects_k_above_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_tuple(3, 4, &mut rng).is_err());
        assert!(TupleSampler::new(3, 1).is_err());
    }

    #[test]
    fn two_of_two_gives_both_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut forward = 0;
        let draws = 20_000;
        for _ in 0..draws {
            let t = sample_tuple(2, 2, &mut rng).unwrap();
            match t.indices() {
                [0, 1] => forward += 1,
                [1, 0] => {}
                other => panic!("unexpected tuple {other:?}"),
            }
        }
        let p = forward as f64 / draws as f64;
        let se = (0.25 / draws as f64).sqrt();
        assert!((p - 0.5).abs() < 4.0 * se, "{p}");
    }

    #[test]
    fn ordered_pairs_of_three_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sampler = TupleSampler::new(3, 2).unwrap();
        let draws = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let t = sampler.sample(&mut rng);
            *counts.entry((t[0], t[1])).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (pair, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - p).abs() <= 3.0 * se, "{pair:?}: {freq}");
        }
    }

    #[test]
    fn four_of_five_cover_all_tuples_with_full_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sampler = TupleSampler::new(5, 4).unwrap();
        let draws = 240_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            *counts
                .entry(sampler.sample(&mut rng).to_vec())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 120);
        let entropy: f64 = counts
            .values()
            .map(|&c| {
                let p = c as f64 / draws as f64;
                -p * p.ln()
            })
            .sum();
        // Plug-in entropy is biased low by about (K-1)/(2n) = 2.5e-4.
        assert!(((120f64).ln() - entropy).abs() < 2e-3, "{entropy}");
        // Pearson chi-square with 119 degrees of freedom; 99.9% quantile ~ 173.
        let expected = draws as f64 / 120.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 173.0, "chi2 = {chi2}");
    }
}
