//! Faithfulness, hierarchy diagnostics and Shapley comparisons.
//!
//! Metrics with a zero denominator come back as `None` rather than a
//! made-up number.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::setfn::{MaskDataset, ValueFunction};
use crate::spectrum::FourierSpectrum;

/// `1 − Σ(ŷ−y)² / Σ(y−ȳ)²`; with constant truths the score is 1 for an exact
/// fit and undefined otherwise.
pub fn r2(predictions: &[f64], truths: &[f64]) -> Result<Option<f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::invalid("R² of an empty sample"));
    }
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let sse: f64 = predictions.iter().zip(truths).map(|(p, y)| (p - y).powi(2)).sum();
    let sst: f64 = truths.iter().map(|y| (y - mean).powi(2)).sum();
    if sst == 0.0 {
        return Ok((sse == 0.0).then_some(1.0));
    }
    Ok(Some(1.0 - sse / sst))
}

/// R² of a spectrum's predictions on a labelled sample.
pub fn faithfulness(spec: &FourierSpectrum, data: &MaskDataset) -> Result<Option<f64>> {
    let pred = spec.evaluate_many(data.masks())?;
    r2(&pred, data.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyKind {
    Dsr,
    Scr,
    Shr,
}

impl HierarchyKind {
    pub const ALL: [HierarchyKind; 3] = [HierarchyKind::Dsr, HierarchyKind::Scr, HierarchyKind::Shr];

    pub fn name(self) -> &'static str {
        match self {
            HierarchyKind::Dsr => "dsr",
            HierarchyKind::Scr => "scr",
            HierarchyKind::Shr => "shr",
        }
    }
}

impl std::str::FromStr for HierarchyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HierarchyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown hierarchy metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HierarchyScore {
    pub kind: HierarchyKind,
    /// `None` when the spectrum is empty, so no coefficients were ranked.
    pub value: Option<f64>,
    pub k_requested: usize,
    pub k_used: usize,
}

fn top_family(spec: &FourierSpectrum, k: usize) -> Result<(Vec<Mask>, usize)> {
    if k == 0 {
        return Err(Error::invalid("hierarchy metrics need k >= 1"));
    }
    let used = k.min(spec.len());
    Ok((spec.top_k_sets(used), used))
}

fn direct_subset(family: &HashSet<&Mask>, s: &Mask) -> f64 {
    if s.is_empty() {
        return 1.0;
    }
    let hits = s.iter().filter(|&i| family.contains(&s.without(i))).count();
    hits as f64 / s.len() as f64
}

/// Whether `s` is reached from `∅` by adding one element at a time while
/// staying inside the family.
fn staircase(family: &HashSet<&Mask>, s: &Mask, memo: &mut HashMap<Mask, bool>) -> bool {
    if !family.contains(s) {
        return false;
    }
    if s.is_empty() {
        return true;
    }
    if let Some(&v) = memo.get(s) {
        return v;
    }
    let ok = s.iter().any(|i| staircase(family, &s.without(i), memo));
    memo.insert(s.clone(), ok);
    ok
}

fn all_subsets_present(family: &HashSet<&Mask>, s: &Mask) -> bool {
    // A set with more than log₂|family| elements has too many subsets.
    if s.len() >= usize::BITS as usize || (1usize << s.len()) > family.len() {
        return false;
    }
    s.subsets().all(|r| family.contains(&r))
}

/// DSR, SCR or SHR of the top-`k` family; `k` is clamped to the support size.
pub fn hierarchy_rate(spec: &FourierSpectrum, k: usize, kind: HierarchyKind) -> Result<HierarchyScore> {
    let (top, used) = top_family(spec, k)?;
    let family: HashSet<&Mask> = top.iter().collect();
    let value = (used > 0).then(|| {
        let total: f64 = match kind {
            HierarchyKind::Dsr => top.iter().map(|s| direct_subset(&family, s)).sum(),
            HierarchyKind::Scr => {
                let mut memo = HashMap::new();
                top.iter().filter(|s| staircase(&family, s, &mut memo)).count() as f64
            }
            HierarchyKind::Shr => top.iter().filter(|s| all_subsets_present(&family, s)).count() as f64,
        };
        total / used as f64
    });
    Ok(HierarchyScore {
        kind,
        value,
        k_requested: k,
        k_used: used,
    })
}

pub fn dsr(spec: &FourierSpectrum, k: usize) -> Result<HierarchyScore> {
    hierarchy_rate(spec, k, HierarchyKind::Dsr)
}

pub fn scr(spec: &FourierSpectrum, k: usize) -> Result<HierarchyScore> {
    hierarchy_rate(spec, k, HierarchyKind::Scr)
}

pub fn shr(spec: &FourierSpectrum, k: usize) -> Result<HierarchyScore> {
    hierarchy_rate(spec, k, HierarchyKind::Shr)
}

/// `|f([n]) − f(S*)| / |f([n])|` from true queries; undefined when `f([n]) = 0`.
pub fn delta_output<V: ValueFunction + ?Sized>(vf: &V, solution: &Mask) -> Result<Option<f64>> {
    let n = vf.n();
    solution.check_width(n)?;
    let out = vf.query(&[Mask::full(n), solution.clone()])?;
    if out.len() != 2 {
        return Err(Error::provider(format!("expected 2 values, got {}", out.len())));
    }
    let (full, kept) = (out[0], out[1]);
    Ok((full != 0.0).then(|| (full - kept).abs() / full.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapleyComparison {
    pub recall_at_k: f64,
    pub mse: f64,
}

fn top_by_magnitude(v: &[f64], k: usize) -> HashSet<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.into_iter().take(k).collect()
}

/// Recall of the truth's top-`k` features by magnitude, and mean squared error.
pub fn compare_shapley(estimate: &[f64], truth: &[f64], k: usize) -> Result<ShapleyComparison> {
    if estimate.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} estimates for {} features",
            estimate.len(),
            truth.len()
        )));
    }
    if k == 0 || k > truth.len() {
        return Err(Error::invalid(format!("recall k = {k} outside 1..={}", truth.len())));
    }
    let a = top_by_magnitude(estimate, k);
    let b = top_by_magnitude(truth, k);
    let mse = estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(ShapleyComparison {
        recall_at_k: a.intersection(&b).count() as f64 / k as f64,
        mse,
    })
}

/// One named number with its parameters, as emitted in run reports and CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: Option<f64>,
    pub undefined: bool,
    pub params: Vec<(String, String)>,
    pub samples: Option<usize>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: Option<f64>) -> Self {
        MetricReport {
            name: name.into(),
            value,
            undefined: value.is_none(),
            params: Vec::new(),
            samples: None,
        }
    }

    pub fn param(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn samples(mut self, count: usize) -> Self {
        self.samples = Some(count);
        self
    }

    pub fn from_hierarchy(score: &HierarchyScore) -> Self {
        MetricReport::new(score.kind.name(), score.value)
            .param("k", score.k_requested)
            .param("k_used", score.k_used)
    }

    fn csv_row(&self) -> String {
        let value = self.value.map_or_else(|| "undefined".to_string(), |v| format!("{v:?}"));
        let params: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let samples = self.samples.map(|s| s.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.name, value, params.join(";"), samples)
    }
}

pub fn metrics_csv(rows: &[MetricReport]) -> String {
    let mut out = String::from("name,value,params,samples\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
