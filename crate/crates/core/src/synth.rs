//! Synthetic value functions with known spectra.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::rng;
use crate::setfn::ValueFunction;
use crate::spectrum::FourierSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Random sets of fixed cardinality, nothing below them.
    Peak,
    /// The down-closure of the peak sets, every member with its own coefficient.
    CompleteHierarchy,
    /// One chain `{0} ⊂ {0,1} ⊂ ..` with unit coefficients.
    Staircase,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peak" => Ok(Family::Peak),
            "complete_hierarchy" | "hierarchy" => Ok(Family::CompleteHierarchy),
            "staircase" => Ok(Family::Staircase),
            other => Err(Error::invalid(format!("unknown synthetic family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub n: usize,
    #[serde(default = "default_num_sets")]
    pub num_sets: usize,
    #[serde(default = "default_cardinality")]
    pub cardinality: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_num_sets() -> usize {
    10
}

fn default_cardinality() -> usize {
    5
}

impl SyntheticSpec {
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        SyntheticSpec {
            family,
            n,
            num_sets: default_num_sets(),
            cardinality: default_cardinality(),
            seed,
        }
    }
}

/// A value function that evaluates a fixed spectrum exactly.
#[derive(Debug, Clone)]
pub struct SpectrumFn {
    spectrum: FourierSpectrum,
}

impl SpectrumFn {
    pub fn new(spectrum: FourierSpectrum) -> Self {
        SpectrumFn { spectrum }
    }

    pub fn spectrum(&self) -> &FourierSpectrum {
        &self.spectrum
    }
}

impl ValueFunction for SpectrumFn {
    fn n(&self) -> usize {
        self.spectrum.n()
    }

    fn query(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        self.spectrum.evaluate_many(masks)
    }
}

fn binomial_at_least(n: usize, k: usize, target: usize) -> bool {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c >= target as u128 {
            return true;
        }
    }
    c >= target as u128
}

/// Builds the provider and its ground-truth spectrum.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(SpectrumFn, FourierSpectrum)> {
    let n = spec.n;
    if n == 0 {
        return Err(Error::invalid("synthetic function needs n >= 1"));
    }
    if spec.cardinality > n {
        return Err(Error::invalid(format!(
            "cardinality {} exceeds n = {n}",
            spec.cardinality
        )));
    }
    if spec.num_sets == 0 {
        return Err(Error::invalid("num_sets must be at least 1"));
    }
    let mut rng = rng::seeded(spec.seed);

    let truth = match spec.family {
        Family::Staircase => FourierSpectrum::from_coeffs(
            n,
            (1..=spec.cardinality).map(|d| (Mask::from_indices(n, 0..d).expect("d <= n"), 1.0)),
        )?,
        Family::Peak | Family::CompleteHierarchy => {
            if !binomial_at_least(n, spec.cardinality, spec.num_sets) {
                return Err(Error::invalid(format!(
                    "only C({n},{}) distinct sets exist, {} requested",
                    spec.cardinality, spec.num_sets
                )));
            }
            let mut peaks: Vec<Mask> = Vec::with_capacity(spec.num_sets);
            while peaks.len() < spec.num_sets {
                let idx = rand::seq::index::sample(&mut rng, n, spec.cardinality).into_vec();
                let m = Mask::from_indices(n, idx)?;
                if !peaks.contains(&m) {
                    peaks.push(m);
                }
            }
            let members: Vec<Mask> = match spec.family {
                Family::Peak => peaks,
                _ => {
                    let closure: BTreeSet<(usize, Mask)> = peaks
                        .iter()
                        .flat_map(|p| p.subsets())
                        .map(|r| (r.len(), r))
                        .collect();
                    closure.into_iter().map(|(_, r)| r).collect()
                }
            };
            let coeffs: Vec<(Mask, f64)> = members
                .into_iter()
                .map(|m| (m, rng.random_range(-1.0..1.0)))
                .collect();
            FourierSpectrum::from_coeffs(n, coeffs)?
        }
    };
    Ok((SpectrumFn::new(truth.clone()), truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(n: usize, idx: &[usize]) -> Mask {
        Mask::from_indices(n, idx.iter().copied()).unwrap()
    }

    #[test]
    fn staircase_by_hand() {
        let mut s = SyntheticSpec::new(Family::Staircase, 3, 0);
        s.cardinality = 2;
        let (vf, truth) = make_synthetic(&s).unwrap();
        assert_eq!(truth.len(), 2);
        assert_eq!(truth.get(&set(3, &[0])), 1.0);
        assert_eq!(truth.get(&set(3, &[0, 1])), 1.0);
        // f(S) = (-1)^{[0∈S]} + (-1)^{|S∩{0,1}|}
        for code in 0..8u64 {
            let m = Mask::from_bits_u64(3, code);
            let a = if m.contains(0) { -1.0 } else { 1.0 };
            let b = if (code & 3).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            assert_eq!(vf.query(&[m]).unwrap()[0], a + b);
        }
    }

    #[test]
    fn peak_sets_are_distinct_and_sized() {
        let s = SyntheticSpec::new(Family::Peak, 20, 42);
        let (_, truth) = make_synthetic(&s).unwrap();
        assert_eq!(truth.len(), 10);
        assert!(truth.support().all(|m| m.len() == 5));
        assert_eq!(make_synthetic(&s).unwrap().1, truth);
    }

    #[test]
    fn hierarchy_of_one_pair() {
        let mut s = SyntheticSpec::new(Family::CompleteHierarchy, 4, 1);
        s.num_sets = 1;
        s.cardinality = 2;
        let (vf, truth) = make_synthetic(&s).unwrap();
        assert_eq!(truth.len(), 4);
        let top = truth.support().find(|m| m.len() == 2).unwrap().clone();
        let down: Vec<Mask> = top.subsets().collect();
        assert!(truth.support().all(|m| down.contains(m)));
        for code in 0..16u64 {
            let m = Mask::from_bits_u64(4, code);
            let by_hand: f64 = truth.iter().map(|(t, c)| t.parity(&m) * c).sum();
            assert!((vf.query(&[m]).unwrap()[0] - by_hand).abs() < 1e-15);
        }
    }

    #[test]
    fn hierarchy_is_down_closed() {
        let (_, truth) = make_synthetic(&SyntheticSpec::new(Family::CompleteHierarchy, 64, 3)).unwrap();
        for t in truth.support() {
            for r in t.subsets() {
                assert!(truth.get(&r) != 0.0);
            }
        }
        assert!(truth.len() <= 10 * 32);
    }

    #[test]
    fn invalid_specs() {
        let mut s = SyntheticSpec::new(Family::Peak, 4, 0);
        assert!(make_synthetic(&s).is_err()); // cardinality 5 > n
        s.cardinality = 2;
        s.num_sets = 7; // only C(4,2) = 6 exist
        assert!(make_synthetic(&s).is_err());
    }
}
