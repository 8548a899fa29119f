//! L1-regularised linear baseline on the degree-≤1 parity features.
//!
//! Design columns are `(-1)^{[i∈S]}` plus an unpenalised intercept, so the
//! fitted model reads directly as a Fourier spectrum of degree ≤ 1. The
//! objective is `(1/2N)·‖y − b − Xw‖² + λ‖w‖₁`, solved by cyclic coordinate
//! descent on the centred Gram matrix with warm starts down the λ path.

use rayon::prelude::*;

use crate::cv;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::setfn::MaskDataset;
use crate::spectrum::FourierSpectrum;

const MAX_SWEEPS: usize = 100_000;
const TOL: f64 = 1e-12;

/// Default path: 100 penalties spanning three decades.
pub const DEFAULT_NUM_LAMBDAS: usize = 100;
pub const DEFAULT_LAMBDA_RATIO: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub spectrum: FourierSpectrum,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    /// Mean held-out MSE per penalty on the path.
    pub cv_mse: Vec<f64>,
}

struct Problem {
    n: usize,
    gram: Vec<f64>,
    xty: Vec<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
    rows: usize,
}

impl Problem {
    fn new(data: &MaskDataset) -> Problem {
        let n = data.n();
        let rows = data.len();
        let feature = |m: &Mask, i: usize| if m.contains(i) { -1.0 } else { 1.0 };
        let mut x_mean = vec![0.0; n];
        for m in data.masks() {
            for (i, xm) in x_mean.iter_mut().enumerate() {
                *xm += feature(m, i);
            }
        }
        x_mean.iter_mut().for_each(|v| *v /= rows as f64);
        let y_mean = data.mean();
        let mut gram = vec![0.0; n * n];
        let mut xty = vec![0.0; n];
        let mut centred = vec![0.0; n];
        for (m, y) in data.iter() {
            for i in 0..n {
                centred[i] = feature(m, i) - x_mean[i];
            }
            let yc = y - y_mean;
            for i in 0..n {
                xty[i] += centred[i] * yc;
                for j in i..n {
                    gram[i * n + j] += centred[i] * centred[j];
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                gram[i * n + j] /= rows as f64;
                gram[j * n + i] = gram[i * n + j];
            }
            xty[i] /= rows as f64;
        }
        Problem {
            n,
            gram,
            xty,
            x_mean,
            y_mean,
            rows,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Coordinate descent from `w` (warm start) at penalty `lambda`.
    fn solve(&self, lambda: f64, w: &mut [f64]) {
        let n = self.n;
        // grad[i] = xty[i] − Σ_j G_ij w_j
        let mut grad: Vec<f64> = (0..n)
            .map(|i| self.xty[i] - (0..n).map(|j| self.gram[i * n + j] * w[j]).sum::<f64>())
            .collect();
        let scale = self.xty.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for _ in 0..MAX_SWEEPS {
            let mut max_step = 0.0f64;
            for i in 0..n {
                let gii = self.gram[i * n + i];
                if gii <= 0.0 {
                    continue;
                }
                let rho = grad[i] + gii * w[i];
                let new = soft_threshold(rho, lambda) / gii;
                let delta = new - w[i];
                if delta != 0.0 {
                    for (j, g) in grad.iter_mut().enumerate() {
                        *g -= self.gram[j * n + i] * delta;
                    }
                    w[i] = new;
                    max_step = max_step.max(delta.abs() * gii.sqrt());
                }
            }
            if max_step <= TOL * scale {
                break;
            }
        }
    }

    fn to_spectrum(&self, w: &[f64]) -> Result<FourierSpectrum> {
        let intercept = self.y_mean - w.iter().zip(&self.x_mean).map(|(a, b)| a * b).sum::<f64>();
        let mut coeffs = vec![(Mask::empty(self.n), intercept)];
        for (i, &wi) in w.iter().enumerate() {
            coeffs.push((Mask::from_indices(self.n, [i])?, wi));
        }
        FourierSpectrum::from_coeffs(self.n, coeffs)
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Geometric path from `lambda_max` down to `ratio · lambda_max`.
pub fn lambda_path(lambda_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count == 1 {
        return vec![lambda_max];
    }
    (0..count)
        .map(|k| lambda_max * ratio.powf(k as f64 / (count - 1) as f64))
        .collect()
}

/// Single fit at a fixed penalty.
pub fn lasso_at(data: &MaskDataset, lambda: f64) -> Result<FourierSpectrum> {
    if data.is_empty() {
        return Err(Error::invalid("cannot fit LASSO on an empty dataset"));
    }
    let p = Problem::new(data);
    let mut w = vec![0.0; p.n];
    p.solve(lambda, &mut w);
    p.to_spectrum(&w)
}

/// Penalty chosen by `folds`-fold CV over the path, then refit on all data.
pub fn fit_lasso(
    data: &MaskDataset,
    num_lambdas: usize,
    lambda_ratio: f64,
    folds: usize,
    seed: u64,
) -> Result<LassoFit> {
    if data.is_empty() {
        return Err(Error::invalid("cannot fit LASSO on an empty dataset"));
    }
    if num_lambdas == 0 || !(lambda_ratio > 0.0 && lambda_ratio < 1.0) {
        return Err(Error::invalid(format!(
            "bad λ path: {num_lambdas} values, ratio {lambda_ratio}"
        )));
    }
    let full = Problem::new(data);
    let lmax = full.lambda_max();
    if lmax == 0.0 {
        return Ok(LassoFit {
            spectrum: full.to_spectrum(&vec![0.0; full.n])?,
            lambda: 0.0,
            lambdas: vec![0.0],
            cv_mse: vec![0.0],
        });
    }
    let lambdas = lambda_path(lmax, num_lambdas, lambda_ratio);
    let split = cv::fold_indices(data.len(), folds, seed)?;

    let per_fold: Vec<Vec<f64>> = split
        .par_iter()
        .map(|held| -> Result<Vec<f64>> {
            let train = data.select(&cv::training_rows(data.len(), held));
            let test = data.select(held);
            let p = Problem::new(&train);
            let mut w = vec![0.0; p.n];
            lambdas
                .iter()
                .map(|&l| {
                    p.solve(l, &mut w);
                    let s = p.to_spectrum(&w)?;
                    Ok(test
                        .iter()
                        .map(|(m, y)| (s.eval(m) - y).powi(2))
                        .sum::<f64>()
                        / test.len() as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let cv_mse: Vec<f64> = (0..lambdas.len())
        .map(|k| per_fold.iter().map(|f| f[k]).sum::<f64>() / per_fold.len() as f64)
        .collect();
    let best = (0..cv_mse.len())
        .fold(0, |b, k| if cv_mse[k] < cv_mse[b] { k } else { b });

    let mut w = vec![0.0; full.n];
    for &l in &lambdas[..=best] {
        full.solve(l, &mut w);
    }
    debug_assert!(full.rows == data.len());
    Ok(LassoFit {
        spectrum: full.to_spectrum(&w)?,
        lambda: lambdas[best],
        lambdas,
        cv_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lstsq_min_norm;
    use nalgebra::{DMatrix, DVector};

    fn full_cube(n: usize, mut f: impl FnMut(&Mask) -> f64) -> MaskDataset {
        let masks: Vec<Mask> = (0..1u64 << n).map(|c| Mask::from_bits_u64(n, c)).collect();
        let values = masks.iter().map(&mut f).collect();
        MaskDataset::new(n, masks, values).unwrap()
    }

    fn set(n: usize, idx: &[usize]) -> Mask {
        Mask::from_indices(n, idx.iter().copied()).unwrap()
    }

    #[test]
    fn recovers_a_single_parity() {
        let d = full_cube(5, |m| if m.contains(0) { -1.0 } else { 1.0 });
        let fit = fit_lasso(&d, 100, 1e-3, 4, 0).unwrap();
        assert!((fit.spectrum.get(&set(5, &[0])) - 1.0).abs() < 1e-2);
        for i in 1..5 {
            assert!(fit.spectrum.get(&set(5, &[i])).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_target() {
        let d = full_cube(3, |_| 4.0);
        let fit = fit_lasso(&d, 100, 1e-3, 2, 0).unwrap();
        assert_eq!(fit.spectrum.len(), 1);
        assert_eq!(fit.spectrum.get(&Mask::empty(3)), 4.0);
    }

    #[test]
    fn pure_interaction_is_invisible_to_marginals() {
        let d = full_cube(4, |m| {
            if (m.contains(0) as u8 + m.contains(1) as u8) % 2 == 1 {
                -1.0
            } else {
                1.0
            }
        });
        let fit = fit_lasso(&d, 20, 1e-3, 2, 0).unwrap();
        for i in 0..4 {
            assert!(fit.spectrum.get(&set(4, &[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_penalty_matches_ols() {
        let mut state = 3u64;
        let d = full_cube(6, |_| {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let lasso = lasso_at(&d, 1e-14).unwrap();
        let support: Vec<Mask> = std::iter::once(Mask::empty(6))
            .chain((0..6).map(|i| set(6, &[i])))
            .collect();
        let x = DMatrix::from_fn(d.len(), 7, |r, c| d.masks()[r].parity(&support[c]));
        let beta = lstsq_min_norm(&x, &DVector::from_column_slice(d.values())).unwrap();
        for (k, m) in support.iter().enumerate() {
            assert!((lasso.get(m) - beta[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn path_is_geometric() {
        let p = lambda_path(2.0, 3, 0.01);
        assert!((p[0] - 2.0).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15 && (p[2] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn empty_data() {
        let d = MaskDataset::new(2, vec![], vec![]).unwrap();
        assert!(fit_lasso(&d, 10, 1e-3, 2, 0).is_err());
    }
}
