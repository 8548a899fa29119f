//! Exact Fourier spectra of regression trees and boosted ensembles.
//!
//! A leaf is the constant `{∅ ↦ value}`. A split on feature `j` with child
//! spectra `L` (bit clear) and `R` (bit set) becomes
//! `S ↦ (L[S] + R[S]) / 2` and `S ∪ {j} ↦ (L[S] − R[S]) / 2`, since the
//! parity character of `{j}` is `+1` exactly when `j` is masked.

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::proxy::{GbtModel, Node, RegressionTree, EXTRACTION_DEPTH_CAP};
use crate::spectrum::FourierSpectrum;

/// Accumulated coefficients below this magnitude are dropped.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

type Coeffs = IndexMap<Mask, f64>;

fn extract_node(node: &Node, n: usize, path: &mut Vec<usize>) -> Result<Coeffs> {
    match node {
        Node::Leaf { value } => {
            let mut out = Coeffs::with_capacity(1);
            out.insert(Mask::empty(n), *value);
            Ok(out)
        }
        Node::Split { feat, left, right } => {
            let feat = *feat;
            if feat >= n {
                return Err(Error::invalid(format!("split on feature {feat} >= n = {n}")));
            }
            if path.contains(&feat) {
                return Err(Error::invalid(format!(
                    "feature {feat} tested twice on one path"
                )));
            }
            path.push(feat);
            let l = extract_node(left, n, path)?;
            let r = extract_node(right, n, path)?;
            path.pop();

            let mut out = Coeffs::with_capacity(2 * (l.len() + r.len()));
            let mut put = |key: Mask, lv: f64, rv: f64| {
                out.insert(key.with(feat), (lv - rv) / 2.0);
                out.insert(key, (lv + rv) / 2.0);
            };
            for (k, &lv) in &l {
                put(k.clone(), lv, r.get(k).copied().unwrap_or(0.0));
            }
            for (k, &rv) in &r {
                if !l.contains_key(k) {
                    put(k.clone(), 0.0, rv);
                }
            }
            Ok(out)
        }
    }
}

/// Spectrum of a single tree over `n` features; evaluates to the tree's
/// prediction at every mask.
pub fn extract_tree(tree: &RegressionTree, n: usize) -> Result<FourierSpectrum> {
    let coeffs = extract_node(tree.root(), n, &mut Vec::new())?;
    let mut s = FourierSpectrum::from_coeffs(n, coeffs)?;
    s.prune(0.0);
    Ok(s)
}

/// Spectrum of the whole ensemble: learning-rate-scaled sum of the per-tree
/// spectra with the base score added to `F(∅)`.
pub fn extract_model(model: &GbtModel) -> Result<FourierSpectrum> {
    let n = model.n;
    if let Some((t, d)) = model
        .trees
        .iter()
        .map(RegressionTree::depth)
        .enumerate()
        .find(|&(_, d)| d > EXTRACTION_DEPTH_CAP)
    {
        return Err(Error::capacity(format!(
            "tree {t} has depth {d}; extraction is capped at {EXTRACTION_DEPTH_CAP}"
        )));
    }
    let per_tree = model
        .trees
        .par_iter()
        .map(|t| extract_node(t.root(), n, &mut Vec::new()))
        .collect::<Result<Vec<_>>>()?;

    let mut acc: Coeffs = IndexMap::new();
    acc.insert(Mask::empty(n), model.base_score);
    for tree in per_tree {
        for (k, v) in tree {
            *acc.entry(k).or_insert(0.0) += model.learning_rate * v;
        }
    }
    acc.retain(|_, c| c.abs() > PRUNE_THRESHOLD);
    FourierSpectrum::from_coeffs(n, acc)
}
