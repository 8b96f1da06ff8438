//! Seeding, assignment enumeration/sampling and sign-flip draws.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `seed`:
/// `splitmix64(splitmix64(seed) ^ index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// FNV-1a hash of a label, used to give each named consumer its own stream.
pub fn label_hash(label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Binomial coefficient, `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Advance `idx` (a strictly increasing k-subset of `0..n`) to the next
/// subset in lexicographic order. Returns false after the last one.
pub fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Resampling controls shared by the randomization-type tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resampling {
    /// Size of the reference set, identity included.
    pub budget: usize,
    pub seed: u64,
    pub tail: Tail,
}

impl Default for Resampling {
    fn default() -> Self {
        Resampling { budget: 10_000, seed: 0, tail: Tail::Both }
    }
}

impl Resampling {
    pub fn new(budget: usize, seed: u64) -> Self {
        Resampling { budget, seed, tail: Tail::Both }
    }

    pub fn with_tail(mut self, tail: Tail) -> Self {
        self.tail = tail;
        self
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.budget < 2 {
            return invalid(format!("budget must be at least 2, got {}", self.budget));
        }
        Ok(())
    }
}

/// Which tail of the reference distribution counts as extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Left,
    Right,
    #[default]
    Both,
}

impl Tail {
    /// Signed values: reference `r` is at least as extreme as observed `o`.
    /// `tol` is the absolute slack granted to ties.
    #[inline]
    pub fn extreme(self, r: f64, o: f64, tol: f64) -> bool {
        match self {
            Tail::Both => r.abs() >= o.abs() - tol,
            Tail::Right => r >= o - tol,
            Tail::Left => r <= o + tol,
        }
    }
}

impl std::str::FromStr for Tail {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "left" => Ok(Tail::Left),
            "right" => Ok(Tail::Right),
            "both" => Ok(Tail::Both),
            other => Err(format!("unknown tail '{other}'")),
        }
    }
}

/// Summary of how a reference set was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefInfo {
    pub size: usize,
    pub enumerated: bool,
}

/// Visit the assignments of `n1` treated units among `n`: every subset in
/// lexicographic order when there are at most `budget` of them, otherwise
/// the observed subset followed by `budget - 1` iid uniform subsets.
pub fn for_each_assignment(
    n: usize,
    observed: &[usize],
    res: &Resampling,
    mut f: impl FnMut(&[usize]),
) -> RefInfo {
    let n1 = observed.len();
    match binomial(n, n1) {
        Some(count) if count as u128 <= res.budget as u128 => {
            let mut idx: Vec<usize> = (0..n1).collect();
            loop {
                f(&idx);
                if !next_combination(&mut idx, n) {
                    break;
                }
            }
            RefInfo { size: count as usize, enumerated: true }
        }
        _ => {
            f(observed);
            let mut rng = rng_from(res.seed);
            let mut buf = Vec::with_capacity(n1);
            for _ in 1..res.budget {
                buf.clear();
                buf.extend(index::sample(&mut rng, n, n1).into_iter());
                f(&buf);
            }
            RefInfo { size: res.budget, enumerated: false }
        }
    }
}

/// A fixed sequence of sign vectors over `n` coordinates.
///
/// Enumerated when `2^n <= budget` (draw `k` flips coordinate `j` iff bit
/// `j` of `k` is set), otherwise the all-plus vector followed by
/// `budget - 1` draws of iid fair signs. Routing every equivalence check
/// through one instance keeps comparisons free of sampling noise.
#[derive(Debug, Clone)]
pub struct FlipDraws {
    n: usize,
    draws: usize,
    words: usize,
    bits: Option<Vec<u64>>,
}

impl FlipDraws {
    pub fn new(n: usize, res: &Resampling) -> Result<Self> {
        res.check()?;
        if n == 0 {
            return invalid("sign flips need at least one coordinate");
        }
        if n < 63 && (1u64 << n) <= res.budget as u64 {
            return Ok(FlipDraws { n, draws: 1 << n, words: 1, bits: None });
        }
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; words * res.budget];
        let mut rng = rng_from(res.seed);
        for w in bits[words..].iter_mut() {
            *w = rng.random();
        }
        Ok(FlipDraws { n, draws: res.budget, words, bits: Some(bits) })
    }

    pub fn len(&self) -> usize {
        self.draws
    }

    pub fn is_empty(&self) -> bool {
        self.draws == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn enumerated(&self) -> bool {
        self.bits.is_none()
    }

    /// Sign of coordinate `j` in draw `k`.
    #[inline]
    pub fn sign(&self, k: usize, j: usize) -> f64 {
        let flipped = match &self.bits {
            None => (k >> j) & 1 == 1,
            Some(b) => (b[k * self.words + j / 64] >> (j % 64)) & 1 == 1,
        };
        if flipped {
            -1.0
        } else {
            1.0
        }
    }

    pub fn info(&self) -> RefInfo {
        RefInfo { size: self.draws, enumerated: self.enumerated() }
    }
}
