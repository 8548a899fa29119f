//! KernelSHAP: Shapley values as a constrained weighted regression over
//! coalitions drawn by the Shapley kernel.
//!
//! Coalition sizes are enumerated exhaustively (smallest and largest first,
//! paired with complements) while the budget allows, and the remaining mass
//! is sampled by kernel weight, so a budget of at least `2^n` reproduces the
//! exact Shapley values.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::weighted_lstsq;
use crate::mask::Mask;
use crate::rng;
use crate::setfn::{evaluate_dataset, ValueFunction};

#[derive(Debug, Clone)]
pub struct KernelShap {
    pub values: Vec<f64>,
    /// Distinct masks sent to the value function, anchors included.
    pub evaluations: usize,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

struct Design {
    masks: Vec<Mask>,
    weights: Vec<f64>,
    seen: HashMap<Mask, usize>,
}

impl Design {
    fn add(&mut self, m: Mask, w: f64) -> bool {
        if let Some(&k) = self.seen.get(&m) {
            self.weights[k] += w;
            false
        } else {
            self.seen.insert(m.clone(), self.masks.len());
            self.masks.push(m);
            self.weights.push(w);
            true
        }
    }
}

/// Estimates Shapley values of `vf` with `budget` evaluations (the two anchors
/// `f(∅)` and `f([n])` included).
pub fn kernel_shap<V>(vf: &V, budget: usize, seed: u64) -> Result<KernelShap>
where
    V: ValueFunction + ?Sized,
{
    let n = vf.n();
    if n < 2 {
        return Err(Error::invalid("KernelSHAP needs at least 2 features"));
    }
    if budget < n + 2 {
        return Err(Error::invalid(format!(
            "KernelSHAP budget {budget} below n + 2 = {}",
            n + 2
        )));
    }
    let mut rng = rng::seeded(seed);
    // Sizes s and n-s share a slot; for even n the middle size is its own pair.
    let num_sizes = n / 2;
    let num_paired = (n - 1) / 2;

    // Kernel mass per coalition size, folded onto sizes 1..=num_sizes.
    let mut size_weight: Vec<f64> = (1..=num_sizes)
        .map(|s| (n - 1) as f64 / (s * (n - s)) as f64)
        .collect();
    for w in size_weight.iter_mut().take(num_paired) {
        *w *= 2.0;
    }
    let total: f64 = size_weight.iter().sum();
    size_weight.iter_mut().for_each(|w| *w /= total);

    let mut design = Design {
        masks: Vec::new(),
        weights: Vec::new(),
        seen: HashMap::new(),
    };
    let mut left = budget - 2;
    let mut remaining = size_weight.clone();
    let mut full_sizes = 0;
    for s in 1..=num_sizes {
        let paired = s <= num_paired;
        let count = binomial(n, s) * if paired { 2.0 } else { 1.0 };
        if left as f64 * remaining[s - 1] / count < 1.0 - 1e-8 {
            break;
        }
        full_sizes += 1;
        left -= count as usize;
        if remaining[s - 1] < 1.0 {
            let r = remaining[s - 1];
            remaining.iter_mut().for_each(|w| *w /= 1.0 - r);
        }
        let w = size_weight[s - 1] / count;
        combinations(n, s, |idx| {
            let m = Mask::from_indices(n, idx.iter().copied()).expect("index < n");
            if paired {
                design.add(m.complement(), w);
            }
            design.add(m, w);
        });
    }

    let fixed = design.masks.len();
    if full_sizes < num_sizes && left > 0 {
        let mut probs: Vec<f64> = size_weight[full_sizes..]
            .iter()
            .enumerate()
            .map(|(k, w)| if k + full_sizes < num_paired { w / 2.0 } else { *w })
            .collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        let mut draws = 0;
        while left > 0 && draws < 4 * (budget - 2) {
            draws += 1;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let s = pick + full_sizes + 1;
            let idx = rand::seq::index::sample(&mut rng, n, s);
            let m = Mask::from_indices(n, idx.iter())?;
            if design.add(m.clone(), 1.0) {
                left -= 1;
            }
            if left > 0 && s <= num_paired && design.add(m.complement(), 1.0) {
                left -= 1;
            }
        }
        let weight_left: f64 = size_weight[full_sizes..].iter().sum();
        let sampled: f64 = design.weights[fixed..].iter().sum();
        if sampled > 0.0 {
            design.weights[fixed..]
                .iter_mut()
                .for_each(|w| *w *= weight_left / sampled);
        }
    }

    let mut all = vec![Mask::empty(n), Mask::full(n)];
    all.extend(design.masks.iter().cloned());
    let evaluated = evaluate_dataset(vf, &all, vf.preferred_batch())?;
    let v = evaluated.values();
    let (f_empty, f_full) = (v[0], v[1]);
    let total_gain = f_full - f_empty;

    // Eliminate the last coordinate through the efficiency constraint.
    let last = n - 1;
    let rows = design.masks.len();
    let x = DMatrix::from_fn(rows, last, |r, c| {
        let m = &design.masks[r];
        f64::from(u8::from(m.contains(c))) - f64::from(u8::from(m.contains(last)))
    });
    let y = DVector::from_fn(rows, |r, _| {
        let z_last = f64::from(u8::from(design.masks[r].contains(last)));
        v[r + 2] - f_empty - z_last * total_gain
    });
    let beta = weighted_lstsq(&x, &y, &design.weights)?;
    let mut values: Vec<f64> = beta.iter().copied().collect();
    values.push(total_gain - values.iter().sum::<f64>());
    Ok(KernelShap {
        values,
        evaluations: all.len(),
    })
}
