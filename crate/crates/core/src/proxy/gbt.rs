//! Squared-loss gradient boosting over binary features.
//!
//! Every split tests one feature; the bit-clear branch is `left`, the bit-set
//! branch is `right`. No row or column subsampling, no second-order terms.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::setfn::MaskDataset;

/// Deepest tree accepted by Fourier extraction; unbounded depth is fitted
/// with this cap whenever extraction follows.
pub const EXTRACTION_DEPTH_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feat: usize,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        value: f64,
    },
}

impl Node {
    pub fn leaf(value: f64) -> Node {
        Node::Leaf { value }
    }

    pub fn split(feat: usize, left: Node, right: Node) -> Node {
        Node::Split {
            feat,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegressionTree {
    root: Node,
}

impl RegressionTree {
    pub fn new(root: Node) -> Self {
        RegressionTree { root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn predict(&self, mask: &Mask) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feat, left, right } => {
                    node = if mask.contains(*feat) { right } else { left };
                }
            }
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }

    pub fn leaves(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }

    /// Checks that no path tests a feature twice and all features are `< n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        fn walk(node: &Node, n: usize, used: &mut Vec<usize>) -> Result<()> {
            match node {
                Node::Leaf { value } if !value.is_finite() => {
                    Err(Error::invalid("tree leaf holds a non-finite value"))
                }
                Node::Leaf { .. } => Ok(()),
                Node::Split { feat, left, right } => {
                    if *feat >= n {
                        return Err(Error::invalid(format!("split on feature {feat} >= n = {n}")));
                    }
                    if used.contains(feat) {
                        return Err(Error::invalid(format!(
                            "feature {feat} tested twice on one path"
                        )));
                    }
                    used.push(*feat);
                    walk(left, n, used)?;
                    walk(right, n, used)?;
                    used.pop();
                    Ok(())
                }
            }
        }
        walk(&self.root, n, &mut Vec::new())
    }
}

/// `prediction(S) = base_score + learning_rate · Σ_t tree_t(S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub n: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl GbtModel {
    pub fn new(n: usize, base_score: f64, learning_rate: f64, trees: Vec<RegressionTree>) -> Result<Self> {
        let m = GbtModel {
            n,
            base_score,
            learning_rate,
            trees,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !self.base_score.is_finite() {
            return Err(Error::invalid("non-finite base score"));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.n))
    }

    pub fn predict(&self, mask: &Mask) -> Result<f64> {
        mask.check_width(self.n)?;
        Ok(self.predict_unchecked(mask))
    }

    pub(crate) fn predict_unchecked(&self, mask: &Mask) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(mask)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn predict_many(&self, masks: &[Mask]) -> Result<Vec<f64>> {
        for m in masks {
            m.check_width(self.n)?;
        }
        Ok(masks.par_iter().map(|m| self.predict_unchecked(m)).collect())
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(RegressionTree::depth).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: GbtModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// `None` grows until leaves are pure or features run out.
    pub max_depth: Option<usize>,
    pub num_trees: usize,
    pub learning_rate: f64,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
}

fn default_min_leaf() -> usize {
    1
}

impl FitConfig {
    pub fn new(max_depth: Option<usize>, num_trees: usize, learning_rate: f64) -> Self {
        FitConfig {
            max_depth,
            num_trees,
            learning_rate,
            min_leaf: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::invalid("num_trees must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        Ok(())
    }

    /// Same config with unbounded depth replaced by the extraction cap.
    pub fn capped_for_extraction(&self) -> FitConfig {
        FitConfig {
            max_depth: Some(self.max_depth.map_or(EXTRACTION_DEPTH_CAP, |d| d.min(EXTRACTION_DEPTH_CAP))),
            ..self.clone()
        }
    }

    pub fn label(&self) -> String {
        format!(
            "depth={} trees={} lr={} min_leaf={}",
            self.max_depth.map_or("none".to_string(), |d| d.to_string()),
            self.num_trees,
            self.learning_rate,
            self.min_leaf
        )
    }
}

/// Small grid for laptop-scale runs: depth {3,5} × trees {100,300} × lr 0.1.
pub fn desk_grid() -> Vec<FitConfig> {
    let mut g = Vec::new();
    for depth in [3, 5] {
        for trees in [100, 300] {
            g.push(FitConfig::new(Some(depth), trees, 0.1));
        }
    }
    g
}

/// Depth {3,5,None} × trees {500,1000,5000} × lr {0.01,0.1}.
pub fn full_grid() -> Vec<FitConfig> {
    let mut g = Vec::new();
    for depth in [Some(3), Some(5), None] {
        for trees in [500, 1000, 5000] {
            for lr in [0.01, 0.1] {
                g.push(FitConfig::new(depth, trees, lr));
            }
        }
    }
    g
}

struct Grower<'a> {
    data: &'a MaskDataset,
    resid: &'a [f64],
    cfg: &'a FitConfig,
}

impl Grower<'_> {
    fn grow(&self, rows: &[usize], depth: usize, used: &mut [bool]) -> Node {
        let count = rows.len();
        let total: f64 = rows.iter().map(|&r| self.resid[r]).sum();
        let value = total / count as f64;
        if self.cfg.max_depth.is_some_and(|d| depth >= d) || count < 2 * self.cfg.min_leaf {
            return Node::leaf(value);
        }

        let n = self.data.n();
        let mut set_sum = vec![0.0; n];
        let mut set_cnt = vec![0usize; n];
        let mut sq = 0.0;
        for &r in rows {
            let v = self.resid[r];
            sq += v * v;
            for f in self.data.masks()[r].iter() {
                set_sum[f] += v;
                set_cnt[f] += 1;
            }
        }

        let parent = total * total / count as f64;
        let mut best: Option<(usize, f64)> = None;
        for f in 0..n {
            if used[f] {
                continue;
            }
            let nr = set_cnt[f];
            let nl = count - nr;
            if nl < self.cfg.min_leaf || nr < self.cfg.min_leaf {
                continue;
            }
            let sr = set_sum[f];
            let sl = total - sr;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((f, gain));
            }
        }
        // Gains at rounding level of the node's sum of squares count as zero.
        let zero = 1e-12 * sq;
        let Some((feat, _)) = best.filter(|&(_, g)| g > zero) else {
            return Node::leaf(value);
        };

        let (right_rows, left_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.data.masks()[r].contains(feat));
        used[feat] = true;
        let left = self.grow(&left_rows, depth + 1, used);
        let right = self.grow(&right_rows, depth + 1, used);
        used[feat] = false;
        Node::split(feat, left, right)
    }
}

/// Fits a boosted ensemble: base score is the mean target, each tree is a
/// greedy variance-reduction fit of the current residuals, ties go to the
/// lowest feature index and leaves hold the mean residual.
pub fn fit_gbt(data: &MaskDataset, cfg: &FitConfig) -> Result<GbtModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot fit a model on an empty dataset"));
    }
    let base = data.mean();
    let mut pred = vec![base; data.len()];
    let mut resid = vec![0.0; data.len()];
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut used = vec![false; data.n()];
    let mut trees = Vec::with_capacity(cfg.num_trees);
    for _ in 0..cfg.num_trees {
        for ((r, p), y) in resid.iter_mut().zip(&pred).zip(data.values()) {
            *r = y - p;
        }
        let grower = Grower {
            data,
            resid: &resid,
            cfg,
        };
        let tree = RegressionTree::new(grower.grow(&rows, 0, &mut used));
        for (p, m) in pred.iter_mut().zip(data.masks()) {
            *p += cfg.learning_rate * tree.predict(m);
        }
        trees.push(tree);
    }
    GbtModel::new(data.n(), base, cfg.learning_rate, trees)
}

/// Outcome of [`cross_validate`].
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub best: FitConfig,
    pub best_index: usize,
    /// Mean held-out MSE per grid entry.
    pub scores: Vec<f64>,
    pub model: GbtModel,
}

/// Scores within this relative margin of the incumbent count as ties; the
/// earlier grid entry wins a tie.
const CV_TIE_RTOL: f64 = 1e-9;
const CV_TIE_ATOL: f64 = 1e-12;

/// Grid search by `folds`-fold CV (seeded shuffle, contiguous folds), then a
/// refit of the winner on all data.
pub fn cross_validate(
    data: &MaskDataset,
    grid: &[FitConfig],
    folds: usize,
    seed: u64,
) -> Result<CvSelection> {
    if grid.is_empty() {
        return Err(Error::invalid("hyper-parameter grid is empty"));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let split = cv::fold_indices(data.len(), folds, seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..split.len()).map(move |f| (g, f)))
        .collect();
    let fold_mse = jobs
        .par_iter()
        .map(|&(g, f)| -> Result<f64> {
            let held = &split[f];
            let train = data.select(&cv::training_rows(data.len(), held));
            let test = data.select(held);
            let model = fit_gbt(&train, &grid[g])?;
            Ok(test
                .iter()
                .map(|(m, y)| (model.predict_unchecked(m) - y).powi(2))
                .sum::<f64>()
                / test.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;

    let scores: Vec<f64> = fold_mse
        .chunks(split.len())
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let mut best_index = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        let incumbent = scores[best_index];
        if s < incumbent - (CV_TIE_RTOL * incumbent.abs() + CV_TIE_ATOL) {
            best_index = i;
        }
    }
    let best = grid[best_index].clone();
    let model = fit_gbt(data, &best)?;
    Ok(CvSelection {
        best,
        best_index,
        scores,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_cube(n: usize, mut f: impl FnMut(&Mask) -> f64) -> MaskDataset {
        let masks: Vec<Mask> = (0..1u64 << n).map(|c| Mask::from_bits_u64(n, c)).collect();
        let values = masks.iter().map(&mut f).collect();
        MaskDataset::new(n, masks, values).unwrap()
    }

    fn train_mse(model: &GbtModel, data: &MaskDataset) -> f64 {
        data.iter()
            .map(|(m, y)| (model.predict(m).unwrap() - y).powi(2))
            .sum::<f64>()
            / data.len() as f64
    }

    #[test]
    fn constant_target_has_no_splits() {
        let d = full_cube(3, |_| 0.1);
        let m = fit_gbt(&d, &FitConfig::new(Some(3), 5, 0.5)).unwrap();
        assert!((m.base_score - 0.1).abs() < 1e-15);
        for t in &m.trees {
            assert_eq!(t.leaves(), 1);
            assert!(t.predict(&Mask::empty(3)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_stump_fits_a_parity() {
        let d = full_cube(2, |m| if m.contains(0) { -1.0 } else { 1.0 });
        let m = fit_gbt(&d, &FitConfig::new(Some(1), 1, 1.0)).unwrap();
        assert_eq!(train_mse(&m, &d), 0.0);
        assert!(matches!(m.trees[0].root(), Node::Split { feat: 0, .. }));
    }

    #[test]
    fn staircase_fits_exactly() {
        let d = full_cube(2, |m| {
            let x1 = f64::from(u8::from(m.contains(0)));
            let x2 = f64::from(u8::from(m.contains(1)));
            x1 + x1 * x2
        });
        let m = fit_gbt(&d, &FitConfig::new(Some(2), 50, 0.5)).unwrap();
        assert!(train_mse(&m, &d) <= 1e-6);
    }

    #[test]
    fn unbounded_single_tree_interpolates_full_table() {
        let mut state = 7u64;
        let d = full_cube(5, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        });
        let m = fit_gbt(&d, &FitConfig::new(None, 1, 1.0)).unwrap();
        assert!(train_mse(&m, &d) < 1e-24);
    }

    #[test]
    fn training_error_never_increases() {
        let d = full_cube(6, |m| {
            let a = m.contains(0) && m.contains(3);
            let b = m.contains(1) ^ m.contains(4);
            f64::from(u8::from(a)) * 2.0 - f64::from(u8::from(b)) + 0.3 * m.len() as f64
        });
        let full = fit_gbt(&d, &FitConfig::new(Some(3), 40, 0.3)).unwrap();
        let mut last = f64::INFINITY;
        for t in 0..=40 {
            let mut prefix = full.clone();
            prefix.trees.truncate(t);
            let e = train_mse(&prefix, &d);
            assert!(e <= last + 1e-12, "round {t}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn fitting_is_deterministic_and_depth_bounded() {
        let d = full_cube(6, |m| m.len() as f64 * if m.contains(2) { 1.5 } else { -0.5 });
        let cfg = FitConfig::new(Some(2), 10, 0.2);
        let a = fit_gbt(&d, &cfg).unwrap();
        assert_eq!(a, fit_gbt(&d, &cfg).unwrap());
        assert!(a.max_depth() <= 2);
        assert!(a.trees.iter().all(|t| t.validate(6).is_ok()));
    }

    #[test]
    fn min_leaf_is_respected() {
        let d = full_cube(4, |m| m.len() as f64);
        let mut cfg = FitConfig::new(None, 1, 1.0);
        cfg.min_leaf = 4;
        let m = fit_gbt(&d, &cfg).unwrap();
        assert!(m.trees[0].leaves() <= 4);
    }

    #[test]
    fn empty_data_and_bad_config() {
        let empty = MaskDataset::new(2, vec![], vec![]).unwrap();
        assert!(fit_gbt(&empty, &FitConfig::new(Some(1), 1, 0.1)).is_err());
        let d = full_cube(2, |_| 0.0);
        assert!(fit_gbt(&d, &FitConfig::new(Some(1), 0, 0.1)).is_err());
        assert!(fit_gbt(&d, &FitConfig::new(Some(1), 1, 0.0)).is_err());
    }

    #[test]
    fn predict_examples() {
        let zero = GbtModel::new(3, 1.5, 0.1, vec![]).unwrap();
        assert_eq!(zero.predict(&Mask::full(3)).unwrap(), 1.5);
        let stump = RegressionTree::new(Node::split(0, Node::leaf(1.0), Node::leaf(0.0)));
        let m = GbtModel::new(2, 0.0, 1.0, vec![stump]).unwrap();
        assert_eq!(m.predict(&Mask::empty(2)).unwrap(), 1.0);
        assert_eq!(m.predict(&Mask::from_indices(2, [0]).unwrap()).unwrap(), 0.0);
        assert!(m.predict(&Mask::empty(3)).is_err());
    }

    #[test]
    fn repeated_feature_rejected() {
        let bad = RegressionTree::new(Node::split(
            1,
            Node::split(1, Node::leaf(0.0), Node::leaf(1.0)),
            Node::leaf(2.0),
        ));
        assert!(GbtModel::new(3, 0.0, 1.0, vec![bad]).is_err());
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let d = full_cube(5, |m| (m.len() as f64).sqrt() / 3.0 + if m.contains(1) { 0.1 } else { 0.0 });
        let m = fit_gbt(&d, &FitConfig::new(Some(3), 7, 0.3)).unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"feat\"") && text.contains("\"value\""));
        let back = GbtModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn cv_single_config_and_tie_rule() {
        let d = full_cube(3, |m| {
            [0.5, -1.0, 2.0]
                .iter()
                .enumerate()
                .map(|(i, w)| if m.contains(i) { -w } else { *w })
                .sum()
        });
        let one = cross_validate(&d, &[FitConfig::new(Some(2), 5, 0.5)], 2, 0).unwrap();
        assert_eq!(one.best_index, 0);

        // Two configurations that grow identical models score identically;
        // the earlier grid entry wins.
        let grid = [FitConfig::new(Some(2), 20, 0.5), FitConfig::new(Some(2), 20, 0.5)];
        let sel = cross_validate(&d, &grid, 2, 3).unwrap();
        assert_eq!(sel.scores[0], sel.scores[1]);
        assert_eq!(sel.best_index, 0);
        assert_eq!(sel.best, grid[0]);
    }

    #[test]
    fn cv_rejects_too_few_samples() {
        let d = full_cube(1, |_| 1.0);
        assert!(cross_validate(&d, &desk_grid(), 5, 0).is_err());
        assert!(cross_validate(&d, &[], 2, 0).is_err());
    }
}
