//! Attribution and interaction indices read off a sparse Fourier spectrum.
//!
//! Every interaction row is a weighted superset sum
//! `I(T) = Σ_{U ⊇ T} F(U) · w(|U|, |T|)` over the stored support, so absent
//! coefficients contribute nothing and the results are exact.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::spectrum::{FourierSpectrum, MAX_CONVERSION_DEGREE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Banzhaf,
    Shapley,
    Influence,
    Mobius,
    Or,
    BanzhafInteraction,
    ShapleyInteraction,
    ShapleyTaylor,
    FaithBanzhaf,
    FaithShapley,
}

impl IndexKind {
    pub const ALL: [IndexKind; 10] = [
        IndexKind::Banzhaf,
        IndexKind::Shapley,
        IndexKind::Influence,
        IndexKind::Mobius,
        IndexKind::Or,
        IndexKind::BanzhafInteraction,
        IndexKind::ShapleyInteraction,
        IndexKind::ShapleyTaylor,
        IndexKind::FaithBanzhaf,
        IndexKind::FaithShapley,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Banzhaf => "banzhaf",
            IndexKind::Shapley => "shapley",
            IndexKind::Influence => "influence",
            IndexKind::Mobius => "mobius",
            IndexKind::Or => "or",
            IndexKind::BanzhafInteraction => "banzhaf_interaction",
            IndexKind::ShapleyInteraction => "shapley_interaction",
            IndexKind::ShapleyTaylor => "shapley_taylor",
            IndexKind::FaithBanzhaf => "faith_banzhaf",
            IndexKind::FaithShapley => "faith_shapley",
        }
    }

    /// One value per feature, keyed by singletons.
    pub fn is_per_feature(self) -> bool {
        matches!(self, IndexKind::Banzhaf | IndexKind::Shapley | IndexKind::Influence)
    }

    /// Kinds that need an explicit order `ℓ ≥ 1`.
    pub fn requires_order(self) -> bool {
        matches!(
            self,
            IndexKind::ShapleyTaylor | IndexKind::FaithBanzhaf | IndexKind::FaithShapley
        )
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IndexKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown index kind {s:?}")))
    }
}

/// Index values keyed by sets, sorted by the mask order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub kind: IndexKind,
    pub order: Option<usize>,
    pub n: usize,
    pub values: Vec<(Mask, f64)>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    set: Vec<usize>,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct ReportRepr {
    kind: IndexKind,
    order: Option<usize>,
    n: usize,
    entries: Vec<Entry>,
}

impl Serialize for IndexReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ReportRepr {
            kind: self.kind,
            order: self.order,
            n: self.n,
            entries: self
                .values
                .iter()
                .map(|(m, v)| Entry {
                    set: m.indices(),
                    value: *v,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IndexReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ReportRepr::deserialize(d)?;
        let values = r
            .entries
            .into_iter()
            .map(|e| Mask::from_indices(r.n, e.set).map(|m| (m, e.value)))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        Ok(IndexReport {
            kind: r.kind,
            order: r.order,
            n: r.n,
            values,
        })
    }
}

impl IndexReport {
    pub fn get(&self, set: &Mask) -> f64 {
        self.values
            .binary_search_by(|(m, _)| m.cmp(set))
            .map(|i| self.values[i].1)
            .unwrap_or(0.0)
    }

    /// Values of a per-feature report in feature order.
    pub fn per_feature(&self) -> Option<Vec<f64>> {
        self.kind.is_per_feature().then(|| self.values.iter().map(|(_, v)| *v).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `kind,order,set,value` rows with the set as space-separated indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,order,set,value\n");
        let order = self.order.map(|o| o.to_string()).unwrap_or_default();
        for (m, v) in &self.values {
            let set: Vec<String> = m.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{},{},{},{:?}\n", self.kind, order, set.join(" "), v));
        }
        out
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn neg2_pow(k: usize) -> f64 {
    let m = 2f64.powi(k as i32);
    if k % 2 == 0 {
        m
    } else {
        -m
    }
}

/// Shapley values `φ_i = −2 Σ_{S ∋ i, |S| odd} F(S)/|S|`.
pub fn shapley(spec: &FourierSpectrum) -> Vec<f64> {
    let mut acc = vec![CompensatedSum::default(); spec.n()];
    for (s, c) in spec.iter() {
        let size = s.len();
        if size % 2 == 1 {
            let share = -2.0 * c / size as f64;
            for i in s.iter() {
                acc[i].add(share);
            }
        }
    }
    acc.iter().map(CompensatedSum::value).collect()
}

/// Banzhaf `−2F({i})`, influence `Σ_{S∋i} F(S)²`, or Shapley values.
pub fn feature_index(spec: &FourierSpectrum, kind: IndexKind) -> Result<Vec<f64>> {
    let n = spec.n();
    match kind {
        IndexKind::Shapley => Ok(shapley(spec)),
        IndexKind::Banzhaf => (0..n)
            .map(|i| Ok(-2.0 * spec.get(&Mask::from_indices(n, [i])?)))
            .collect(),
        IndexKind::Influence => {
            let mut acc = vec![0.0; n];
            for (s, c) in spec.iter() {
                for i in s.iter() {
                    acc[i] += c * c;
                }
            }
            Ok(acc)
        }
        other => Err(Error::invalid(format!("{other} is not a per-feature index"))),
    }
}

/// `Σ_i φ_i − (f̂([n]) − f̂(∅))`: zero up to rounding for the Shapley values
/// of `spec`, since both sides equal `−2 Σ_{|S| odd} F(S)`.
pub fn efficiency_gap(spec: &FourierSpectrum, phi: &[f64]) -> Result<f64> {
    let n = spec.n();
    if phi.len() != n {
        return Err(Error::invalid(format!(
            "{} values for {n} features",
            phi.len()
        )));
    }
    let total = spec.evaluate(&Mask::full(n))? - spec.evaluate(&Mask::empty(n))?;
    let mut sum = CompensatedSum::default();
    phi.iter().for_each(|&p| sum.add(p));
    Ok(sum.value() - total)
}

/// Every subset of a support member with at most `max_card` elements.
fn down_closure(spec: &FourierSpectrum, max_card: Option<usize>) -> Result<BTreeSet<Mask>> {
    let n = spec.n();
    let limit = max_card.unwrap_or(usize::MAX);
    if limit >= spec.degree() && spec.degree() > MAX_CONVERSION_DEGREE {
        return Err(Error::capacity(format!(
            "degree {} exceeds the conversion limit {MAX_CONVERSION_DEGREE}",
            spec.degree()
        )));
    }
    let mut out = BTreeSet::new();
    for s in spec.support() {
        let idx = s.indices();
        let top = limit.min(idx.len());
        for k in 0..=top {
            for_each_combination(&idx, k, |c| {
                out.insert(Mask::from_indices(n, c.iter().copied()).expect("member of a valid mask"));
            });
        }
    }
    Ok(out)
}

fn for_each_combination(items: &[usize], k: usize, mut visit: impl FnMut(&[usize])) {
    let m = items.len();
    let mut pos: Vec<usize> = (0..k).collect();
    let mut buf: Vec<usize> = pos.iter().map(|&p| items[p]).collect();
    loop {
        visit(&buf);
        let Some(i) = (0..k).rev().find(|&i| pos[i] != i + m - k) else {
            return;
        };
        pos[i] += 1;
        for j in i + 1..k {
            pos[j] = pos[j - 1] + 1;
        }
        for j in i..k {
            buf[j] = items[pos[j]];
        }
    }
}

/// `Σ_{R: T ⊂ R ⊆ S, |R| > ℓ} C(|R|−1, ℓ) / C(|R|+ℓ−1, ℓ+|T|) · (−2)^{|R|}`,
/// which depends on `S` and `T` only through their sizes.
fn faith_shapley_gamma(s: usize, t: usize, order: usize) -> f64 {
    let mut acc = CompensatedSum::default();
    for r in (order + 1).max(t + 1)..=s {
        let count = binomial(s - t, r - t);
        let w = binomial(r - 1, order) / binomial(r + order - 1, order + t);
        acc.add(count * w * neg2_pow(r));
    }
    acc.value()
}

/// `Σ_{R: T ⊆ R ⊆ U} (−2)^{|R|} / C(|R|, ℓ)` for `|T| = ℓ`.
fn shapley_taylor_eta(u: usize, order: usize) -> f64 {
    let mut acc = CompensatedSum::default();
    for r in order..=u {
        acc.add(binomial(u - order, r - order) * neg2_pow(r) / binomial(r, order));
    }
    acc.value()
}

type Weight<'a> = Box<dyn Fn(&Mask, &Mask) -> f64 + 'a>;

/// Index report for `kind`. Order-bounded kinds require `order ≥ 1` and keep
/// only sets with `|T| ≤ ℓ`; for the other interaction kinds a given order
/// acts as the same filter. Per-feature kinds ignore the order.
pub fn interaction_index(
    spec: &FourierSpectrum,
    kind: IndexKind,
    order: Option<usize>,
) -> Result<IndexReport> {
    let n = spec.n();
    if order == Some(0) {
        return Err(Error::invalid("index order must be at least 1"));
    }
    if kind.requires_order() && order.is_none() {
        return Err(Error::invalid(format!("{kind} needs an order")));
    }
    if kind.is_per_feature() {
        let vals = feature_index(spec, kind)?;
        return Ok(IndexReport {
            kind,
            order: None,
            n,
            values: (0..n)
                .map(|i| (Mask::from_indices(n, [i]).expect("i < n"), vals[i]))
                .collect(),
        });
    }
    let fits = |m: &Mask| order.is_none_or(|l| m.len() <= l);

    if kind == IndexKind::Mobius {
        let mob = spec.to_mobius()?;
        let mut values: Vec<(Mask, f64)> =
            mob.iter().filter(|(m, _)| fits(m)).map(|(m, c)| (m.clone(), c)).collect();
        values.sort_by(|a, b| a.0.cmp(&b.0));
        return Ok(IndexReport { kind, order, n, values });
    }
    if kind == IndexKind::BanzhafInteraction {
        let mut values: Vec<(Mask, f64)> = spec
            .iter()
            .filter(|(m, _)| fits(m))
            .map(|(m, c)| (m.clone(), neg2_pow(m.len()) * c))
            .collect();
        values.sort_by(|a, b| a.0.cmp(&b.0));
        return Ok(IndexReport { kind, order, n, values });
    }

    let keys = down_closure(spec, order)?;
    let weight: Weight = match kind {
        IndexKind::Or => Box::new(|t: &Mask, u: &Mask| {
            if t.is_empty() {
                1.0
            } else if u.len() % 2 == 0 {
                -neg2_pow(t.len())
            } else {
                neg2_pow(t.len())
            }
        }),
        IndexKind::ShapleyInteraction => Box::new(|t: &Mask, u: &Mask| {
            let gap = u.len() - t.len();
            if gap % 2 == 0 {
                neg2_pow(t.len()) / (gap + 1) as f64
            } else {
                0.0
            }
        }),
        IndexKind::ShapleyTaylor => {
            let l = order.expect("checked above");
            let mut eta: HashMap<usize, f64> = HashMap::new();
            for u in l..=spec.degree() {
                eta.insert(u, shapley_taylor_eta(u, l));
            }
            Box::new(move |t: &Mask, u: &Mask| {
                if t.len() < l {
                    neg2_pow(t.len())
                } else {
                    eta[&u.len()]
                }
            })
        }
        IndexKind::FaithBanzhaf => {
            let l = order.expect("checked above");
            Box::new(move |t: &Mask, u: &Mask| if u.len() <= l { neg2_pow(t.len()) } else { 0.0 })
        }
        IndexKind::FaithShapley => {
            let l = order.expect("checked above");
            let mut gamma: HashMap<(usize, usize), f64> = HashMap::new();
            for t in 0..=l {
                let lead = if (l - t) % 2 == 0 { 1.0 } else { -1.0 } * t as f64
                    / (l + t) as f64
                    * binomial(l, t);
                for u in l + 1..=spec.degree() {
                    gamma.insert((u, t), lead * faith_shapley_gamma(u, t, l));
                }
            }
            Box::new(move |t: &Mask, u: &Mask| {
                let base = neg2_pow(t.len());
                if u.len() > l {
                    base + gamma[&(u.len(), t.len())]
                } else {
                    base
                }
            })
        }
        _ => unreachable!("handled above"),
    };

    let support: Vec<(&Mask, f64)> = spec.iter().collect();
    let values = keys
        .into_iter()
        .map(|t| {
            let mut acc = CompensatedSum::default();
            for &(u, c) in &support {
                if t.is_subset(u) {
                    acc.add(c * weight(&t, u));
                }
            }
            let v = acc.value();
            (t, v)
        })
        .collect();
    Ok(IndexReport { kind, order, n, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(n: usize, idx: &[usize]) -> Mask {
        Mask::from_indices(n, idx.iter().copied()).unwrap()
    }

    fn spec(n: usize, entries: &[(&[usize], f64)]) -> FourierSpectrum {
        FourierSpectrum::from_coeffs(n, entries.iter().map(|(s, c)| (set(n, s), *c))).unwrap()
    }

    fn table(s: &FourierSpectrum) -> Vec<f64> {
        s.to_dense().unwrap()
    }

    fn code(m: &Mask) -> usize {
        m.to_bits_u64().unwrap() as usize
    }

    #[test]
    fn table_rows_by_example() {
        let s = spec(4, &[(&[1], 0.75)]);
        let phi = shapley(&s);
        assert_eq!(phi, vec![0.0, -1.5, 0.0, 0.0]);
        assert_eq!(shapley(&spec(4, &[(&[], 3.0)])), vec![0.0; 4]);

        let s = spec(3, &[(&[0], 3.0)]);
        assert_eq!(feature_index(&s, IndexKind::Banzhaf).unwrap(), vec![-6.0, 0.0, 0.0]);
        assert_eq!(feature_index(&s, IndexKind::Influence).unwrap(), vec![9.0, 0.0, 0.0]);
        assert!(feature_index(&s, IndexKind::Mobius).is_err());

        let s = spec(3, &[(&[2], 1.5)]);
        let b = interaction_index(&s, IndexKind::BanzhafInteraction, None).unwrap();
        assert_eq!(b.values, vec![(set(3, &[2]), -3.0)]);
    }

    #[test]
    fn faith_banzhaf_on_degree_one_is_mobius() {
        let s = spec(3, &[(&[], 0.4), (&[0], 1.25)]);
        let fb = interaction_index(&s, IndexKind::FaithBanzhaf, Some(1)).unwrap();
        let mob = s.to_mobius().unwrap();
        assert_eq!(fb.get(&set(3, &[0])), -2.5);
        assert_eq!(fb.get(&Mask::empty(3)), 0.4 + 1.25);
        for (m, c) in mob.iter() {
            assert!((fb.get(m) - c).abs() < 1e-15);
        }
    }

    #[test]
    fn order_handling() {
        let s = spec(4, &[(&[0, 1, 2], 1.0)]);
        assert!(interaction_index(&s, IndexKind::FaithShapley, None).is_err());
        assert!(interaction_index(&s, IndexKind::ShapleyTaylor, Some(0)).is_err());
        let st = interaction_index(&s, IndexKind::ShapleyTaylor, Some(2)).unwrap();
        assert!(st.values.iter().all(|(m, _)| m.len() <= 2));
        let si = interaction_index(&s, IndexKind::ShapleyInteraction, None).unwrap();
        assert_eq!(si.values.len(), 8);
        assert!("nonsense".parse::<IndexKind>().is_err());
        assert_eq!("faith_shapley".parse::<IndexKind>().unwrap(), IndexKind::FaithShapley);
    }

    #[test]
    fn shapley_taylor_top_order_sums_to_the_total() {
        // Shapley-Taylor indices up to order ℓ distribute f([n]) − f(∅).
        let s = spec(5, &[(&[], 0.2), (&[0, 1, 2], 1.0), (&[1, 3], -0.5), (&[4], 0.7), (&[0, 2, 3, 4], 0.3)]);
        let t = table(&s);
        for l in 1..=4 {
            let st = interaction_index(&s, IndexKind::ShapleyTaylor, Some(l)).unwrap();
            let total: f64 = st.values.iter().map(|(_, v)| v).sum();
            assert!((total - t[31]).abs() < 1e-12, "ℓ={l}");
        }
    }

    #[test]
    fn or_index_reconstructs_the_function() {
        let s = spec(4, &[(&[], 1.0), (&[0, 1], 0.5), (&[2], -0.25), (&[1, 2, 3], 0.125)]);
        let or = interaction_index(&s, IndexKind::Or, None).unwrap();
        let t = table(&s);
        for c in 0..16u64 {
            let m = Mask::from_bits_u64(4, c);
            let rebuilt: f64 = or
                .values
                .iter()
                .filter(|(k, _)| k.is_empty() || !k.intersection(&m).is_empty())
                .map(|(_, v)| v)
                .sum();
            assert!((rebuilt - t[code(&m)]).abs() < 1e-12);
        }
    }

    #[test]
    fn report_json_and_csv() {
        let s = spec(3, &[(&[0, 2], 0.5), (&[1], 0.25)]);
        let r = interaction_index(&s, IndexKind::ShapleyInteraction, None).unwrap();
        let text = r.to_json().unwrap();
        let back: IndexReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        let csv = r.to_csv();
        assert!(csv.starts_with("kind,order,set,value\nshapley_interaction,,,"));
        let keys: Vec<&Mask> = r.values.iter().map(|(m, _)| m).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gamma_matches_direct_enumeration() {
        let (s, t, l) = (6, 1, 2);
        let u = Mask::full(s);
        let tm = set(s, &[0]);
        let mut direct = 0.0;
        for r in u.subsets() {
            if tm.is_subset(&r) && r != tm && r.len() > l {
                let rl = r.len();
                direct += binomial(rl - 1, l) / binomial(rl + l - 1, l + t) * neg2_pow(rl);
            }
        }
        assert!((faith_shapley_gamma(s, t, l) - direct).abs() < 1e-12);
    }

    fn arb_spectrum() -> impl Strategy<Value = FourierSpectrum> {
        prop::collection::vec((0u64..128, -2.0f64..2.0), 1..12).prop_map(|v| {
            FourierSpectrum::from_coeffs(7, v.into_iter().map(|(c, x)| (Mask::from_bits_u64(7, c), x)))
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn efficiency_dummy_and_nonnegative_influence(s in arb_spectrum()) {
            let phi = shapley(&s);
            prop_assert!(efficiency_gap(&s, &phi).unwrap().abs() < 1e-9);
            let infl = feature_index(&s, IndexKind::Influence).unwrap();
            let ban = feature_index(&s, IndexKind::Banzhaf).unwrap();
            prop_assert!(infl.iter().all(|&v| v >= 0.0));
            for i in 0..7 {
                if s.support().all(|m| !m.contains(i)) {
                    prop_assert_eq!(phi[i], 0.0);
                    prop_assert_eq!(infl[i], 0.0);
                    prop_assert_eq!(ban[i], 0.0);
                }
            }
        }

        #[test]
        fn relabelling_permutes_outputs(s in arb_spectrum(), rot in 1usize..7) {
            let perm = |m: &Mask| Mask::from_indices(7, m.iter().map(|i| (i + rot) % 7)).unwrap();
            let moved = FourierSpectrum::from_coeffs(7, s.iter().map(|(m, c)| (perm(m), c))).unwrap();
            let (a, b) = (shapley(&s), shapley(&moved));
            for i in 0..7 {
                prop_assert!((a[i] - b[(i + rot) % 7]).abs() < 1e-12);
            }
            for kind in [IndexKind::ShapleyInteraction, IndexKind::FaithShapley, IndexKind::Or] {
                let ra = interaction_index(&s, kind, Some(2)).unwrap();
                let rb = interaction_index(&moved, kind, Some(2)).unwrap();
                for (m, v) in &ra.values {
                    prop_assert!((rb.get(&perm(m)) - v).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn faith_banzhaf_equals_mobius_below_order(s in arb_spectrum()) {
            let l = s.degree().max(1);
            let fb = interaction_index(&s, IndexKind::FaithBanzhaf, Some(l)).unwrap();
            let mob = s.to_mobius().unwrap();
            for (m, c) in mob.iter() {
                prop_assert!((fb.get(m) - c).abs() < 1e-9);
            }
            for (m, v) in &fb.values {
                prop_assert!((mob.get(m) - v).abs() < 1e-9);
            }
        }
    }
}
