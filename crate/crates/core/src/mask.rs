//! Fixed-width feature subsets.
//!
//! Bit `i` set means feature `i` is retained (unmasked). Two text forms are
//! supported: the sorted index list used in every file format, and a
//! bitstring of `'0'`/`'1'` with feature 0 leftmost used by the external
//! provider protocol.

use std::cmp::Ordering;
use std::fmt;

use smallvec::SmallVec;

use crate::error::{Error, Result};

type Words = SmallVec<[u64; 2]>;

#[inline]
fn word_count(n: usize) -> usize {
    n.div_ceil(64)
}

/// A subset of the feature universe `{0, .., n-1}`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    n: usize,
    words: Words,
}

impl Mask {
    pub fn empty(n: usize) -> Self {
        Mask {
            n,
            words: SmallVec::from_elem(0, word_count(n)),
        }
    }

    pub fn full(n: usize) -> Self {
        let mut m = Mask::empty(n);
        for (w, word) in m.words.iter_mut().enumerate() {
            let lo = w * 64;
            let bits = (n - lo).min(64);
            *word = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        }
        m
    }

    pub fn from_indices<I>(n: usize, indices: I) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut m = Mask::empty(n);
        for i in indices {
            if i >= n {
                return Err(Error::invalid(format!(
                    "feature index {i} out of range for width {n}"
                )));
            }
            m.insert(i);
        }
        Ok(m)
    }

    /// Builds a mask from the low `n` bits of `bits`; requires `n <= 64`.
    pub fn from_bits_u64(n: usize, bits: u64) -> Self {
        assert!(n <= 64, "from_bits_u64 requires n <= 64");
        let mut m = Mask::empty(n);
        if n > 0 {
            let keep = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
            m.words[0] = bits & keep;
        }
        m
    }

    /// Inverse of [`Mask::from_bits_u64`].
    pub fn to_bits_u64(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    /// Parses the bitstring form (feature 0 leftmost).
    pub fn parse_bitstring(s: &str) -> Result<Self> {
        let mut m = Mask::empty(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => m.insert(i),
                '0' => {}
                other => {
                    return Err(Error::invalid(format!(
                        "bitstring contains {other:?} at position {i}"
                    )))
                }
            }
        }
        Ok(m)
    }

    pub fn to_bitstring(&self) -> String {
        (0..self.n)
            .map(|i| if self.contains(i) { '1' } else { '0' })
            .collect()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < self.n && (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n, "feature index {i} out of range for width {}", self.n);
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        if i < self.n {
            self.words[i / 64] &= !(1u64 << (i % 64));
        }
    }

    pub fn with(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.insert(i);
        m
    }

    pub fn without(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.remove(i);
        m
    }

    /// Cardinality.
    #[inline]
    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// `true` when `|self ∩ other|` is odd.
    #[inline]
    pub fn odd_overlap(&self, other: &Mask) -> bool {
        let ones: u32 = self
            .words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        ones & 1 == 1
    }

    /// The parity character `(-1)^{|self ∩ other|}`.
    #[inline]
    pub fn parity(&self, other: &Mask) -> f64 {
        if self.odd_overlap(other) {
            -1.0
        } else {
            1.0
        }
    }

    #[inline]
    pub fn is_subset(&self, other: &Mask) -> bool {
        self.words
            .iter()
            .zip(other.words.iter())
            .all(|(a, b)| a & !b == 0)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        self.zip_words(other, |a, b| a & !b)
    }

    pub fn complement(&self) -> Mask {
        Mask::full(self.n).difference(self)
    }

    fn zip_words(&self, other: &Mask, op: impl Fn(u64, u64) -> u64) -> Mask {
        debug_assert_eq!(self.n, other.n);
        Mask {
            n: self.n,
            words: self
                .words
                .iter()
                .zip(other.words.iter())
                .map(|(&a, &b)| op(a, b))
                .collect(),
        }
    }

    /// Retained feature indices in increasing order.
    pub fn iter(&self) -> Ones<'_> {
        Ones {
            words: &self.words,
            word: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Every subset of this mask, including the empty set and itself.
    /// Yields `2^len` items, so callers bound the cardinality first.
    pub fn subsets(&self) -> Subsets {
        let members = self.indices();
        assert!(members.len() < 64, "subset enumeration over {} members", members.len());
        Subsets {
            n: self.n,
            total: 1u64 << members.len(),
            members,
            next: 0,
        }
    }

    pub fn check_width(&self, n: usize) -> Result<()> {
        if self.n == n {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "mask width {} does not match universe size {n}",
                self.n
            )))
        }
    }
}

/// Lexicographic order of the sorted index lists: `∅ < {0} < {0,1} < {1}`.
impl Ord for Mask {
    fn cmp(&self, other: &Self) -> Ordering {
        let mut a = self.iter();
        let mut b = other.iter();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return self.n.cmp(&other.n),
                (None, Some(_)) => return Ordering::Less,
                (Some(_), None) => return Ordering::Greater,
                (Some(x), Some(y)) if x != y => return x.cmp(&y),
                _ => {}
            }
        }
    }
}

impl PartialOrd for Mask {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}/{}", self.n)
    }
}

pub struct Ones<'a> {
    words: &'a [u64],
    word: usize,
    current: u64,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word * 64 + bit);
            }
            self.word += 1;
            if self.word >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word];
        }
    }
}

pub struct Subsets {
    n: usize,
    members: Vec<usize>,
    total: u64,
    next: u64,
}

impl Iterator for Subsets {
    type Item = Mask;

    fn next(&mut self) -> Option<Mask> {
        if self.next >= self.total {
            return None;
        }
        let code = self.next;
        self.next += 1;
        let mut m = Mask::empty(self.n);
        for (k, &i) in self.members.iter().enumerate() {
            if (code >> k) & 1 == 1 {
                m.insert(i);
            }
        }
        Some(m)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Subsets {}

pub(crate) mod index_list {
    //! serde adapter writing a mask as its sorted index list.
    use super::Mask;
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(mask: &Mask, s: S) -> Result<S::Ok, S::Error> {
        mask.indices().serialize(s)
    }
}
