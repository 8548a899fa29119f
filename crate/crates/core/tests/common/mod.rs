//! Brute-force definitions computed from complete value tables. Tables are
//! indexed by the bit code of a mask (bit `i` set when feature `i` is kept).

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sproxy_core::spectrum::FourierSpectrum;
use sproxy_core::Mask;

pub fn mask(n: usize, code: usize) -> Mask {
    Mask::from_bits_u64(n, code as u64)
}

pub fn code(m: &Mask) -> usize {
    m.to_bits_u64().expect("test widths fit in 64 bits") as usize
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn choose(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn size(c: usize) -> usize {
    c.count_ones() as usize
}

/// Table by direct summation of `Σ_T (−1)^{|S∩T|} F(T)`, no fast transform.
pub fn table_of(spec: &FourierSpectrum) -> Vec<f64> {
    let n = spec.n();
    (0..1usize << n)
        .map(|s| {
            spec.iter()
                .map(|(t, c)| if size(s & code(t)) % 2 == 0 { c } else { -c })
                .sum()
        })
        .collect()
}

/// Random sparse spectrum with distinct support sets of size ≤ `max_degree`.
pub fn random_spectrum(n: usize, support: usize, max_degree: usize, rng: &mut impl Rng) -> FourierSpectrum {
    let mut sets: Vec<Mask> = Vec::new();
    while sets.len() < support {
        let d = rng.random_range(0..=max_degree);
        let idx = rand::seq::index::sample(rng, n, d).into_vec();
        let m = Mask::from_indices(n, idx).unwrap();
        if !sets.contains(&m) {
            sets.push(m);
        }
    }
    FourierSpectrum::from_coeffs(n, sets.into_iter().map(|m| (m, rng.random_range(-1.0..1.0)))).unwrap()
}

/// Forward transform by direct summation over all masks.
pub fn fourier_bf(f: &[f64], n: usize) -> Vec<f64> {
    let scale = 1.0 / f.len() as f64;
    (0..f.len())
        .map(|t| {
            scale
                * (0..f.len())
                    .map(|s| if size(s & t) % 2 == 0 { f[s] } else { -f[s] })
                    .sum::<f64>()
        })
        .take(1 << n)
        .collect()
}

/// `m(T) = Σ_{R⊆T} (−1)^{|T|−|R|} f(R)`.
pub fn mobius_bf(f: &[f64]) -> Vec<f64> {
    (0..f.len())
        .map(|t| {
            (0..f.len())
                .filter(|r| r & !t == 0)
                .map(|r| if size(t ^ r) % 2 == 0 { f[r] } else { -f[r] })
                .sum()
        })
        .collect()
}

/// `Δ_T f(S) = Σ_{L⊆T} (−1)^{|T|−|L|} f(S ∪ L)` for `S ∩ T = ∅`.
pub fn derivative(f: &[f64], t: usize, s: usize) -> f64 {
    (0..f.len())
        .filter(|l| l & !t == 0)
        .map(|l| if size(t ^ l) % 2 == 0 { f[s | l] } else { -f[s | l] })
        .sum()
}

fn outside(f: &[f64], t: usize) -> impl Iterator<Item = usize> + '_ {
    (0..f.len()).filter(move |s| s & t == 0)
}

/// Shapley values from the permutation-weighted marginal contributions.
pub fn shapley_bf(f: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let bit = 1 << i;
            outside(f, bit)
                .map(|s| {
                    let k = size(s);
                    factorial(k) * factorial(n - k - 1) / factorial(n) * (f[s | bit] - f[s])
                })
                .sum()
        })
        .collect()
}

pub fn banzhaf_bf(f: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let bit = 1 << i;
            outside(f, bit).map(|s| f[s | bit] - f[s]).sum::<f64>() / (1usize << (n - 1)) as f64
        })
        .collect()
}

/// `E_S[((f(S) − f(S ⊕ i)) / 2)²]` under the uniform distribution.
pub fn influence_bf(f: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            (0..f.len())
                .map(|s| ((f[s] - f[s ^ (1 << i)]) / 2.0).powi(2))
                .sum::<f64>()
                / f.len() as f64
        })
        .collect()
}

pub fn banzhaf_interaction_bf(f: &[f64], n: usize, t: usize) -> f64 {
    let free = n - size(t);
    outside(f, t).map(|s| derivative(f, t, s)).sum::<f64>() / (1usize << free) as f64
}

pub fn shapley_interaction_bf(f: &[f64], n: usize, t: usize) -> f64 {
    let tl = size(t);
    outside(f, t)
        .map(|s| {
            let k = size(s);
            factorial(n - k - tl) * factorial(k) / factorial(n - tl + 1) * derivative(f, t, s)
        })
        .sum()
}

/// Shapley-Taylor index of order `l`: Möbius below the top order, the
/// averaged discrete derivative at `|T| = l`.
pub fn shapley_taylor_bf(f: &[f64], n: usize, t: usize, l: usize) -> f64 {
    let tl = size(t);
    assert!(tl <= l);
    if tl < l {
        return mobius_bf(f)[t];
    }
    l as f64 / n as f64
        * outside(f, t)
            .map(|s| derivative(f, t, s) / choose(n - 1, size(s)))
            .sum::<f64>()
}

/// Or interactions: `f(S) = I(∅) + Σ_{T≠∅, T∩S≠∅} I(T)`.
pub fn or_bf(f: &[f64], n: usize, t: usize) -> f64 {
    let full = (1usize << n) - 1;
    if t == 0 {
        return f[0];
    }
    -(0..f.len())
        .filter(|r| r & !t == 0)
        .map(|r| {
            let v = f[full & !r];
            if size(t ^ r) % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .sum::<f64>()
}

fn monomials(n: usize, l: usize) -> Vec<usize> {
    (0..1usize << n).filter(|&t| size(t) <= l).collect()
}

fn design(n: usize, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(1 << n, cols.len(), |s, j| if cols[j] & !s == 0 { 1.0 } else { 0.0 })
}

/// Faith-Banzhaf: uniform least squares onto monomials of degree ≤ `l`.
/// Returns (monomial code, value) pairs.
pub fn faith_banzhaf_bf(f: &[f64], n: usize, l: usize) -> Vec<(usize, f64)> {
    let cols = monomials(n, l);
    let a = design(n, &cols);
    let y = DVector::from_column_slice(f);
    let lhs = a.transpose() * &a;
    let rhs = a.transpose() * y;
    let e = lhs.lu().solve(&rhs).expect("full-rank monomial design");
    cols.into_iter().zip(e.iter().copied()).collect()
}

/// Faith-Shapley: Shapley-kernel weighted least squares with `f(∅)` and
/// `f([n])` matched exactly, solved through its KKT system.
pub fn faith_shapley_bf(f: &[f64], n: usize, l: usize) -> Vec<(usize, f64)> {
    let cols = monomials(n, l);
    let p = cols.len();
    let a = design(n, &cols);
    let full = (1usize << n) - 1;
    let w: Vec<f64> = (0..f.len())
        .map(|s| {
            let k = size(s);
            if k == 0 || k == n {
                0.0
            } else {
                (n - 1) as f64 / (choose(n, k) * k as f64 * (n - k) as f64)
            }
        })
        .collect();
    let mut kkt = DMatrix::zeros(p + 2, p + 2);
    let mut rhs = DVector::zeros(p + 2);
    for s in 0..f.len() {
        for i in 0..p {
            rhs[i] += 2.0 * w[s] * a[(s, i)] * f[s];
            for j in 0..p {
                kkt[(i, j)] += 2.0 * w[s] * a[(s, i)] * a[(s, j)];
            }
        }
    }
    for (row, s) in [(p, 0usize), (p + 1, full)] {
        for j in 0..p {
            kkt[(row, j)] = a[(s, j)];
            kkt[(j, row)] = a[(s, j)];
        }
        rhs[row] = f[s];
    }
    let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT system");
    cols.into_iter().zip(sol.iter().copied()).collect()
}

/// Exhaustive maximum (or minimum) of a value table over masks of a given size;
/// ties go to the lexicographically smallest retained set.
pub fn best_of_size(f: &[f64], n: usize, keep: usize, maximize: bool) -> (Mask, f64) {
    let mut best: Option<(Mask, f64)> = None;
    for c in (0..f.len()).filter(|&c| size(c) == keep) {
        let m = mask(n, c);
        let v = f[c];
        let better = match &best {
            None => true,
            Some((bm, bv)) => {
                let (v, bv) = if maximize { (v, *bv) } else { (-v, -*bv) };
                v > bv || (v == bv && m < *bm)
            }
        };
        if better {
            best = Some((m, f[c]));
        }
    }
    best.expect("at least one mask of the requested size")
}
