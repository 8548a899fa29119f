//! Sparse Fourier and Möbius spectra of set functions.
//!
//! Convention used everywhere: bit `i` set means feature `i` is retained and
//!
//! ```text
//! F(T) = 2^-n Σ_S (-1)^{|S∩T|} f(S)        f(S) = Σ_T (-1)^{|S∩T|} F(T)
//! f(S) = Σ_{R⊆S} I(R)                        (Möbius / monomial basis)
//! ```

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv;
use crate::error::{Error, Result};
use crate::linalg::lstsq_min_norm;
use crate::mask::Mask;
use crate::setfn::{dense_width, MaskDataset};

/// Largest universe accepted by dense (2^n) routines.
pub const MAX_DENSE_N: usize = 24;

/// Largest set cardinality whose subsets are enumerated during conversion.
pub const MAX_CONVERSION_DEGREE: usize = 30;

/// Default number of coefficients kept by sparsification.
pub const DEFAULT_TOP_K: usize = 200;

pub trait Basis: Clone + Copy + std::fmt::Debug + Default + Send + Sync + 'static {
    const NAME: &'static str;
}

/// Parity basis `(-1)^{|S∩T|}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Fourier;

/// Monomial basis `Π_{i∈R} x_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mobius;

impl Basis for Fourier {
    const NAME: &'static str = "fourier";
}

impl Basis for Mobius {
    const NAME: &'static str = "mobius";
}

/// Sparse association from feature sets to coefficients. Explicit zeros are
/// never stored.
#[derive(Clone, Debug)]
pub struct Spectrum<B: Basis> {
    n: usize,
    coeffs: IndexMap<Mask, f64>,
    _basis: PhantomData<B>,
}

pub type FourierSpectrum = Spectrum<Fourier>;
pub type MobiusSpectrum = Spectrum<Mobius>;

impl<B: Basis> PartialEq for Spectrum<B> {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.coeffs.len() == other.coeffs.len()
            && self
                .coeffs
                .iter()
                .all(|(k, v)| other.coeffs.get(k) == Some(v))
    }
}

impl<B: Basis> Spectrum<B> {
    pub fn new(n: usize) -> Self {
        Spectrum {
            n,
            coeffs: IndexMap::new(),
            _basis: PhantomData,
        }
    }

    /// Builds a spectrum, summing repeated keys and dropping exact zeros.
    pub fn from_coeffs<I>(n: usize, coeffs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Mask, f64)>,
    {
        let mut s = Spectrum::new(n);
        for (m, c) in coeffs {
            m.check_width(n)?;
            if !c.is_finite() {
                return Err(Error::invalid(format!("non-finite coefficient at {:?}", m.indices())));
            }
            *s.coeffs.entry(m).or_insert(0.0) += c;
        }
        s.prune(0.0);
        Ok(s)
    }

    pub(crate) fn from_map_unchecked(n: usize, coeffs: IndexMap<Mask, f64>) -> Self {
        Spectrum {
            n,
            coeffs,
            _basis: PhantomData,
        }
    }

    /// Drops coefficients with `|c| <= threshold` (exact zeros for 0).
    pub fn prune(&mut self, threshold: f64) {
        self.coeffs.retain(|_, c| c.abs() > threshold);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Support size.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Coefficient of `set` (zero when absent).
    pub fn get(&self, set: &Mask) -> f64 {
        self.coeffs.get(set).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Mask, f64)> + '_ {
        self.coeffs.iter().map(|(m, &c)| (m, c))
    }

    pub fn support(&self) -> impl Iterator<Item = &Mask> + '_ {
        self.coeffs.keys()
    }

    /// Largest set cardinality in the support (0 when empty).
    pub fn degree(&self) -> usize {
        self.coeffs.keys().map(Mask::len).max().unwrap_or(0)
    }

    /// Σ of squared coefficients.
    pub fn energy(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum()
    }

    /// Entries ordered by magnitude (descending), then cardinality, then
    /// lexicographic index order.
    pub fn ranked(&self) -> Vec<(&Mask, f64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_by(|a, b| rank_order((a.0, a.1), (b.0, b.1)));
        v
    }

    /// The top-`k` support under [`Spectrum::ranked`] order.
    pub fn top_k_sets(&self, k: usize) -> Vec<Mask> {
        self.ranked()
            .into_iter()
            .take(k)
            .map(|(m, _)| m.clone())
            .collect()
    }

    /// Writes `{"n":N,"basis":..}` then `{"set":[..],"coef":v}` rows in ranked order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{}",
            serde_json::to_string(&SpectrumHeader {
                n: self.n,
                basis: B::NAME.to_string()
            })?
        )?;
        for (m, c) in self.ranked() {
            let row = CoefRow {
                set: m.indices(),
                coef: c,
            };
            writeln!(w, "{}", serde_json::to_string(&row)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = loop {
            match lines.next() {
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        break l;
                    }
                }
                None => return Err(Error::invalid("empty spectrum file")),
            }
        };
        let header: SpectrumHeader = serde_json::from_str(&header)?;
        if header.basis != B::NAME {
            return Err(Error::invalid(format!(
                "expected a {} spectrum, file holds {}",
                B::NAME,
                header.basis
            )));
        }
        let mut entries = Vec::new();
        for l in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            let row: CoefRow = serde_json::from_str(&l)?;
            entries.push((Mask::from_indices(header.n, row.set)?, row.coef));
        }
        Spectrum::from_coeffs(header.n, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

pub(crate) fn rank_order(a: (&Mask, f64), b: (&Mask, f64)) -> Ordering {
    b.1.abs()
        .total_cmp(&a.1.abs())
        .then_with(|| a.0.len().cmp(&b.0.len()))
        .then_with(|| a.0.cmp(b.0))
}

#[derive(Serialize, Deserialize)]
struct SpectrumHeader {
    n: usize,
    basis: String,
}

#[derive(Serialize, Deserialize)]
struct CoefRow {
    set: Vec<usize>,
    coef: f64,
}

/// Peeks at a spectrum file header and returns its basis name.
pub fn file_basis(path: &Path) -> Result<String> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let header: SpectrumHeader = serde_json::from_str(first.trim())?;
    Ok(header.basis)
}

/// In-place unnormalised Walsh–Hadamard butterfly over a `2^n` table.
pub(crate) fn walsh_hadamard(values: &mut [f64]) {
    let len = values.len();
    let mut h = 1;
    while h < len {
        for block in (0..len).step_by(2 * h) {
            for j in block..block + h {
                let a = values[j];
                let b = values[j + h];
                values[j] = a + b;
                values[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Free-function form of [`Spectrum::to_mobius`].
pub fn fourier_to_mobius(spec: &FourierSpectrum) -> Result<MobiusSpectrum> {
    spec.to_mobius()
}

/// Fourier transform of a complete table (index `code` holds `f` of the set
/// whose bit `i` is bit `i` of `code`), in `O(n·2^n)`.
pub fn exact_transform(table: &[f64]) -> Result<FourierSpectrum> {
    let n = dense_width(table.len())?;
    if n > MAX_DENSE_N {
        return Err(Error::capacity(format!(
            "dense transform limited to n <= {MAX_DENSE_N}, got {n}"
        )));
    }
    let mut buf = table.to_vec();
    walsh_hadamard(&mut buf);
    let scale = 1.0 / table.len() as f64;
    let coeffs = buf
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c != 0.0)
        .map(|(code, c)| (Mask::from_bits_u64(n, code as u64), c * scale))
        .collect();
    Ok(Spectrum::from_map_unchecked(n, coeffs))
}

impl Spectrum<Fourier> {
    /// `f(S) = Σ_T (-1)^{|S∩T|} F(T)` over the stored support.
    pub fn evaluate(&self, mask: &Mask) -> Result<f64> {
        mask.check_width(self.n)?;
        Ok(self.eval(mask))
    }

    #[inline]
    pub(crate) fn eval(&self, mask: &Mask) -> f64 {
        self.coeffs
            .iter()
            .map(|(t, &c)| if t.odd_overlap(mask) { -c } else { c })
            .sum()
    }

    /// Evaluates many masks in parallel.
    pub fn evaluate_many(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        for m in masks {
            m.check_width(self.n)?;
        }
        Ok(masks.par_iter().map(|m| self.eval(m)).collect())
    }

    /// Full `2^n` table of the inverse transform.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        if self.n > MAX_DENSE_N {
            return Err(Error::capacity(format!(
                "dense table limited to n <= {MAX_DENSE_N}, got {}",
                self.n
            )));
        }
        let mut buf = vec![0.0; 1 << self.n];
        for (m, c) in self.iter() {
            buf[m.to_bits_u64().expect("n <= 24") as usize] += c;
        }
        walsh_hadamard(&mut buf);
        Ok(buf)
    }

    /// Converts to the monomial basis: `I(T) = (-2)^{|T|} Σ_{S⊇T} F(S)`.
    /// The output support lies in the down-closure of the input support.
    pub fn to_mobius(&self) -> Result<MobiusSpectrum> {
        let degree = self.degree();
        if degree > MAX_CONVERSION_DEGREE {
            return Err(Error::capacity(format!(
                "Möbius conversion enumerates 2^{degree} subsets; limit is degree {MAX_CONVERSION_DEGREE}"
            )));
        }
        let mut out: IndexMap<Mask, f64> = IndexMap::new();
        for (s, c) in self.iter() {
            for t in s.subsets() {
                let w = if t.len() % 2 == 0 { 1.0 } else { -1.0 } * (2f64).powi(t.len() as i32);
                *out.entry(t).or_insert(0.0) += w * c;
            }
        }
        out.retain(|_, c| *c != 0.0);
        Ok(Spectrum::from_map_unchecked(self.n, out))
    }

    /// Keeps the `k` largest coefficients by magnitude; ties prefer smaller
    /// sets, then lexicographically smaller index lists.
    pub fn sparsify(&self, k: usize) -> Result<FourierSpectrum> {
        if k == 0 {
            return Err(Error::invalid("sparsify: k must be at least 1"));
        }
        let coeffs = self
            .ranked()
            .into_iter()
            .take(k)
            .map(|(m, c)| (m.clone(), c))
            .collect();
        Ok(Spectrum::from_map_unchecked(self.n, coeffs))
    }

    /// Least-squares refit of the coefficients on the fixed support.
    ///
    /// The refit replaces the input only when its `folds`-fold CV error is
    /// strictly lower than the input's error on the same held-out folds.
    pub fn refine(&self, data: &MaskDataset, folds: usize, seed: u64) -> Result<Refinement> {
        if data.n() != self.n {
            return Err(Error::invalid(format!(
                "dataset width {} does not match spectrum width {}",
                data.n(),
                self.n
            )));
        }
        if self.len() > data.len() {
            return Err(Error::invalid(format!(
                "support of {} exceeds {} samples",
                self.len(),
                data.len()
            )));
        }
        let support: Vec<Mask> = self.support().cloned().collect();
        let split = cv::fold_indices(data.len(), folds, seed)?;

        let fold_scores = split
            .par_iter()
            .map(|held| -> Result<(f64, f64)> {
                let train = data.select(&cv::training_rows(data.len(), held));
                let test = data.select(held);
                let beta = ols_on_support(&support, &train)?;
                let refit = Spectrum::from_map_unchecked(
                    self.n,
                    support.iter().cloned().zip(beta.iter().copied()).collect(),
                );
                Ok((mse_on(self, &test), mse_on(&refit, &test)))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = fold_scores.len() as f64;
        let cv_mse_before = fold_scores.iter().map(|s| s.0).sum::<f64>() / k;
        let cv_mse_after = fold_scores.iter().map(|s| s.1).sum::<f64>() / k;

        let accepted = cv_mse_after < cv_mse_before;
        let spectrum = if accepted {
            let beta = ols_on_support(&support, data)?;
            let mut s = Spectrum::from_map_unchecked(
                self.n,
                support.into_iter().zip(beta.iter().copied()).collect(),
            );
            s.prune(0.0);
            s
        } else {
            self.clone()
        };
        Ok(Refinement {
            spectrum,
            accepted,
            cv_mse_before,
            cv_mse_after,
        })
    }
}

/// Outcome of [`FourierSpectrum::refine`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub spectrum: FourierSpectrum,
    pub accepted: bool,
    pub cv_mse_before: f64,
    pub cv_mse_after: f64,
}

fn mse_on(spec: &FourierSpectrum, data: &MaskDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter()
        .map(|(m, y)| (spec.eval(m) - y).powi(2))
        .sum::<f64>()
        / data.len() as f64
}

/// Parity design matrix: column `j` holds `(-1)^{|T_j ∩ S_i|}`.
pub(crate) fn parity_design(support: &[Mask], masks: &[Mask]) -> DMatrix<f64> {
    DMatrix::from_fn(masks.len(), support.len(), |i, j| masks[i].parity(&support[j]))
}

fn ols_on_support(support: &[Mask], data: &MaskDataset) -> Result<DVector<f64>> {
    let x = parity_design(support, data.masks());
    let y = DVector::from_column_slice(data.values());
    lstsq_min_norm(&x, &y)
}

impl Spectrum<Mobius> {
    /// `f(S) = Σ_{R⊆S} I(R)` over the stored support.
    pub fn evaluate(&self, mask: &Mask) -> Result<f64> {
        mask.check_width(self.n)?;
        Ok(self.eval(mask))
    }

    #[inline]
    pub(crate) fn eval(&self, mask: &Mask) -> f64 {
        self.coeffs
            .iter()
            .filter(|(r, _)| r.is_subset(mask))
            .map(|(_, &c)| c)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(n: usize, idx: &[usize]) -> Mask {
        Mask::from_indices(n, idx.iter().copied()).unwrap()
    }

    fn spec(n: usize, entries: &[(&[usize], f64)]) -> FourierSpectrum {
        FourierSpectrum::from_coeffs(n, entries.iter().map(|(s, c)| (set(n, s), *c))).unwrap()
    }

    /// Direct `2^-n Σ_S (-1)^{|S∩T|} f(S)` for every T.
    fn brute_transform(table: &[f64]) -> Vec<f64> {
        let len = table.len();
        (0..len)
            .map(|t| {
                table
                    .iter()
                    .enumerate()
                    .map(|(s, v)| if (s & t).count_ones() % 2 == 1 { -v } else { *v })
                    .sum::<f64>()
                    / len as f64
            })
            .collect()
    }

    fn random_table(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::seeded(seed);
        (0..1 << n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constant_table_is_dc_only() {
        let s = exact_transform(&[2.5; 8]).unwrap();
        assert_eq!(s, spec(3, &[(&[], 2.5)]));
    }

    #[test]
    fn pure_parity() {
        let s = exact_transform(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(s, spec(2, &[(&[0], 1.0)]));
    }

    #[test]
    fn delta_is_flat() {
        let s = exact_transform(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.len(), 4);
        for code in 0..4 {
            assert_eq!(s.get(&Mask::from_bits_u64(2, code)), 0.25);
        }
    }

    #[test]
    fn butterfly_matches_definition() {
        let table = random_table(7, 11);
        let fast = exact_transform(&table).unwrap();
        for (code, want) in brute_transform(&table).into_iter().enumerate() {
            let got = fast.get(&Mask::from_bits_u64(7, code as u64));
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn incomplete_or_oversized_tables() {
        assert!(matches!(exact_transform(&[1.0; 3]), Err(Error::InvalidArgument(_))));
        assert!(matches!(exact_transform(&[]), Err(Error::InvalidArgument(_))));
        let huge = FourierSpectrum::new(25);
        assert!(matches!(huge.to_dense(), Err(Error::Capacity(_))));
    }

    #[test]
    fn evaluation_sign_convention() {
        let c = spec(3, &[(&[], 1.75)]);
        assert_eq!(c.evaluate(&set(3, &[0, 2])).unwrap(), 1.75);
        let p = spec(2, &[(&[0], 1.0)]);
        assert_eq!(p.evaluate(&set(2, &[0])).unwrap(), -1.0);
        assert_eq!(p.evaluate(&set(2, &[])).unwrap(), 1.0);
        assert!(p.evaluate(&set(3, &[])).is_err());
    }

    #[test]
    fn round_trip_n10() {
        for seed in 0..3 {
            let table = random_table(10, seed);
            let s = exact_transform(&table).unwrap();
            for (code, v) in table.iter().enumerate() {
                let got = s.evaluate(&Mask::from_bits_u64(10, code as u64)).unwrap();
                assert!((got - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mobius_examples() {
        assert_eq!(spec(2, &[(&[], 3.0)]).to_mobius().unwrap().get(&set(2, &[])), 3.0);
        let m = spec(2, &[(&[1], 0.5)]).to_mobius().unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.get(&set(2, &[])), 0.5);
        assert_eq!(m.get(&set(2, &[1])), -1.0);
    }

    /// `I(T) = Σ_{S⊆T} (-1)^{|T∖S|} f(S)` from the full table.
    fn brute_mobius(table: &[f64]) -> Vec<f64> {
        (0..table.len())
            .map(|t| {
                (0..table.len())
                    .filter(|s| s & !t == 0)
                    .map(|s| {
                        let sign = if (t & !s).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                        sign * table[s]
                    })
                    .sum()
            })
            .collect()
    }

    fn random_sparse(n: usize, support: usize, max_degree: usize, seed: u64) -> FourierSpectrum {
        let mut rng = crate::rng::seeded(seed);
        let entries: Vec<_> = (0..support)
            .map(|_| {
                let d = rng.random_range(0..=max_degree);
                let idx = rand::seq::index::sample(&mut rng, n, d).into_vec();
                (Mask::from_indices(n, idx).unwrap(), rng.random_range(-1.0..1.0))
            })
            .collect();
        FourierSpectrum::from_coeffs(n, entries).unwrap()
    }

    #[test]
    fn mobius_matches_brute_force_definition() {
        for seed in 0..5 {
            let s = random_sparse(8, 20, 5, seed);
            let table: Vec<f64> = (0..256u64)
                .map(|c| s.evaluate(&Mask::from_bits_u64(8, c)).unwrap())
                .collect();
            let m = s.to_mobius().unwrap();
            let down: Vec<Mask> = s.support().flat_map(|t| t.subsets()).collect();
            for k in m.support() {
                assert!(down.contains(k), "{k:?} outside down-closure");
            }
            for (code, want) in brute_mobius(&table).into_iter().enumerate() {
                let got = m.get(&Mask::from_bits_u64(8, code as u64));
                assert!((got - want).abs() < 1e-9, "{code}: {got} vs {want}");
            }
            for code in 0..256u64 {
                let mask = Mask::from_bits_u64(8, code);
                assert!((m.evaluate(&mask).unwrap() - table[code as usize]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sparsify_rules() {
        let s = spec(2, &[(&[], 3.0), (&[0], -2.0), (&[1], 1.0)]);
        assert_eq!(s.sparsify(5).unwrap(), s);
        assert_eq!(s.sparsify(2).unwrap(), spec(2, &[(&[], 3.0), (&[0], -2.0)]));
        let tie = spec(2, &[(&[0], 1.0), (&[0, 1], 1.0), (&[], 1.0)]);
        assert_eq!(tie.sparsify(2).unwrap(), spec(2, &[(&[], 1.0), (&[0], 1.0)]));
        assert!(s.sparsify(0).is_err());
    }

    #[test]
    fn top_k_truncation_is_optimal_on_the_cube() {
        let s = random_sparse(6, 30, 6, 3);
        let k = 8;
        let kept = s.sparsify(k).unwrap().energy();
        let all: Vec<f64> = s.iter().map(|(_, c)| c).collect();
        let mut rng = crate::rng::seeded(4);
        for _ in 0..100 {
            let pick = rand::seq::index::sample(&mut rng, all.len(), k.min(all.len()));
            let e: f64 = pick.iter().map(|i| all[i] * all[i]).sum();
            assert!(e <= kept + 1e-12);
        }
    }

    #[test]
    fn refine_hand_solved_two_by_two() {
        let start = spec(1, &[(&[], 0.3), (&[0], 0.1)]);
        let data = MaskDataset::new(
            1,
            vec![set(1, &[]), set(1, &[0]), set(1, &[]), set(1, &[0])],
            vec![1.0, 3.0, 1.0, 3.0],
        )
        .unwrap();
        // A fold holding out both copies of one mask cannot identify the
        // refit, so only some shuffles accept; every accepted refit is (2, -1).
        let mut accepted = 0;
        for seed in 0..16 {
            let r = start.refine(&data, 2, seed).unwrap();
            if r.accepted {
                accepted += 1;
                assert!((r.spectrum.get(&set(1, &[])) - 2.0).abs() < 1e-12);
                assert!((r.spectrum.get(&set(1, &[0])) + 1.0).abs() < 1e-12);
            } else {
                assert_eq!(r.spectrum, start);
            }
        }
        assert!(accepted > 0);
    }

    #[test]
    fn refine_fixed_point_on_exact_data() {
        let s = random_sparse(6, 10, 3, 8);
        let masks: Vec<Mask> = (0..64u64).map(|c| Mask::from_bits_u64(6, c)).collect();
        let vals = s.evaluate_many(&masks).unwrap();
        let data = MaskDataset::new(6, masks, vals).unwrap();
        let r = s.refine(&data, 5, 1).unwrap();
        for (m, c) in s.iter() {
            assert!((r.spectrum.get(m) - c).abs() < 1e-9);
        }
    }

    #[test]
    fn refine_repairs_a_wrong_coefficient() {
        let truth = random_sparse(6, 10, 3, 9);
        let masks: Vec<Mask> = (0..64u64).map(|c| Mask::from_bits_u64(6, c)).collect();
        let data = MaskDataset::new(6, masks.clone(), truth.evaluate_many(&masks).unwrap()).unwrap();
        let (key, c) = truth.ranked()[0];
        let mut wrong: Vec<(Mask, f64)> = truth.iter().map(|(m, v)| (m.clone(), v)).collect();
        wrong.iter_mut().find(|(m, _)| m == key).unwrap().1 = c + 0.5;
        let wrong = FourierSpectrum::from_coeffs(6, wrong).unwrap();
        let r = wrong.refine(&data, 5, 2).unwrap();
        assert!(r.accepted);
        assert!(r.cv_mse_after < r.cv_mse_before);
        assert!((r.spectrum.get(key) - c).abs() < 1e-9);
    }

    #[test]
    fn refine_rejects_oversized_support() {
        let s = random_sparse(6, 10, 3, 1);
        let data = MaskDataset::new(6, vec![Mask::empty(6); 3], vec![0.0; 3]).unwrap();
        assert!(matches!(s.refine(&data, 2, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn spectrum_file_round_trip() {
        let s = random_sparse(9, 12, 4, 5);
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"n\":9,\"basis\":\"fourier\"}\n"));
        assert_eq!(FourierSpectrum::read_jsonl(&buf[..]).unwrap(), s);
        assert!(MobiusSpectrum::read_jsonl(&buf[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn parseval(n in 1usize..=10, seed in any::<u64>()) {
            let table = random_table(n, seed);
            let s = exact_transform(&table).unwrap();
            let lhs = table.iter().map(|v| v * v).sum::<f64>() / table.len() as f64;
            prop_assert!((lhs - s.energy()).abs() <= 1e-9 * lhs.max(1e-300));
        }

        #[test]
        fn dense_inverse_round_trip(n in 1usize..=12, seed in any::<u64>()) {
            let table = random_table(n, seed);
            let back = exact_transform(&table).unwrap().to_dense().unwrap();
            for (a, b) in table.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn mobius_polynomial_reproduces_fourier(n in 1usize..=10, seed in any::<u64>()) {
            let s = random_sparse(n, 12, n.min(5), seed);
            let m = s.to_mobius().unwrap();
            for code in 0..(1u64 << n) {
                let mask = Mask::from_bits_u64(n, code);
                prop_assert!((m.eval(&mask) - s.eval(&mask)).abs() <= 1e-9);
            }
        }
    }
}
