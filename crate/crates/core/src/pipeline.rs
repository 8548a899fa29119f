//! End-to-end run: sample masks, query, fit the proxy, extract, sparsify,
//! optionally refine, then score and explain.
//!
//! Every random stream is derived from the config seed, so a report is a
//! pure function of its config; wall-clock timings are returned separately.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::extract::extract_model;
use crate::identify::{identify_removal, Limits, Method, Removal};
use crate::indices::{interaction_index, shapley, IndexKind, IndexReport};
use crate::metrics::{self, compare_shapley, faithfulness, HierarchyKind, HierarchyScore, MetricReport};
use crate::proxy::{self, cross_validate, fit_lasso, kernel_shap, FitConfig};
use crate::rng::derive_seed;
use crate::setfn::{evaluate_dataset, make_value_function, sample_masks, ProviderSpec, QueryCounter, DEFAULT_BATCH};
use crate::spectrum::DEFAULT_TOP_K;

const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_CV: u64 = 3;
const STREAM_REFINE: u64 = 4;
const STREAM_LASSO: u64 = 5;
const STREAM_KERNEL_SHAP: u64 = 6;

/// Hyper-parameter grid: a named preset or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Named(String),
    Explicit(Vec<FitConfig>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Named("desk".into())
    }
}

impl GridSpec {
    pub fn resolve(&self) -> Result<Vec<FitConfig>> {
        match self {
            GridSpec::Named(name) => match name.as_str() {
                "desk" => Ok(proxy::desk_grid()),
                "full" => Ok(proxy::full_grid()),
                other => Err(Error::Config(format!("unknown grid {other:?}; use desk, full or a list"))),
            },
            GridSpec::Explicit(list) if list.is_empty() => Err(Error::Config("grid list is empty".into())),
            GridSpec::Explicit(list) => Ok(list.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRequest {
    pub kind: IndexKind,
    #[serde(default)]
    pub order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyRequest {
    /// Feature counts to remove, one program pair per entry.
    pub remove: Vec<usize>,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: u64,
}

fn default_method() -> String {
    "bnb".into()
}

fn default_max_nodes() -> u64 {
    crate::identify::DEFAULT_MAX_NODES
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Directory for intermediate artifacts; nothing is written when absent.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub value_function: ProviderSpec,
    pub alpha: f64,
    #[serde(default = "default_test_masks")]
    pub test_masks: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub refine: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lasso_baseline: bool,
    #[serde(default)]
    pub kernel_shap_budget: Option<usize>,
    #[serde(default)]
    pub hierarchy_k: Vec<usize>,
    #[serde(default)]
    pub indices: Vec<IndexRequest>,
    #[serde(default)]
    pub identify: Option<IdentifyRequest>,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_test_masks() -> usize {
    1000
}

fn default_folds() -> usize {
    5
}

fn default_k() -> usize {
    DEFAULT_TOP_K
}

fn default_batch() -> usize {
    DEFAULT_BATCH
}

impl RunConfig {
    pub fn new(value_function: ProviderSpec, alpha: f64, seed: u64) -> Self {
        RunConfig {
            value_function,
            alpha,
            test_masks: default_test_masks(),
            grid: GridSpec::default(),
            folds: default_folds(),
            k: default_k(),
            refine: false,
            seed,
            batch_size: default_batch(),
            lasso_baseline: false,
            kernel_shap_budget: None,
            hierarchy_k: Vec::new(),
            indices: Vec::new(),
            identify: None,
            outputs: Outputs::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `ceil(α · n · log₂ n)`.
    pub fn train_mask_count(&self) -> Result<usize> {
        let n = self.value_function.n();
        if n < 2 {
            return Err(Error::Config(format!("n = {n}; runs need n >= 2")));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok((self.alpha * n as f64 * (n as f64).log2()).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_mask_count()?;
        if self.test_masks == 0 {
            return Err(Error::Config("test_masks must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.grid.resolve()?;
        if let Some(id) = &self.identify {
            id.method.parse::<Method>().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub root: u64,
    pub train_masks: u64,
    pub test_masks: u64,
    pub cv: u64,
    pub refine: u64,
    pub lasso: u64,
    pub kernel_shap: u64,
}

impl Seeds {
    fn derive(root: u64) -> Self {
        Seeds {
            root,
            train_masks: derive_seed(root, STREAM_TRAIN),
            test_masks: derive_seed(root, STREAM_TEST),
            cv: derive_seed(root, STREAM_CV),
            refine: derive_seed(root, STREAM_REFINE),
            lasso: derive_seed(root, STREAM_LASSO),
            kernel_shap: derive_seed(root, STREAM_KERNEL_SHAP),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Budget {
    pub alpha: f64,
    pub train_masks: usize,
    pub test_masks: usize,
    /// Queries issued for the training and test samples; always their sum.
    pub queries: usize,
    pub kernel_shap_queries: usize,
    pub identify_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxyReport {
    pub chosen: FitConfig,
    pub chosen_index: usize,
    pub grid: Vec<FitConfig>,
    pub cv_mse: Vec<f64>,
    /// Unbounded depths were fitted at the extraction cap.
    pub depth_capped: bool,
    pub trees: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Faithfulness {
    pub train_r2_surrogate: Option<f64>,
    pub test_r2_surrogate: Option<f64>,
    pub train_r2_sparse: Option<f64>,
    pub test_r2_sparse: Option<f64>,
    pub train_r2_final: Option<f64>,
    pub test_r2_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineReport {
    pub accepted: bool,
    pub cv_mse_before: f64,
    pub cv_mse_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoReport {
    pub lambda: f64,
    pub test_r2: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelShapReport {
    pub budget: usize,
    pub evaluations: usize,
    pub values: Vec<f64>,
    /// Against the surrogate's Shapley values, top ten (or n) features.
    pub recall_vs_surrogate: f64,
    pub mse_vs_surrogate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifyReport {
    pub remove: usize,
    pub removal: Removal,
    pub delta_output: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub n: usize,
    pub seeds: Seeds,
    pub budget: Budget,
    pub train_mean: f64,
    pub train_variance: f64,
    pub proxy: ProxyReport,
    pub support_extracted: usize,
    pub support_sparse: usize,
    pub support_final: usize,
    pub k: usize,
    pub faithfulness: Faithfulness,
    pub refinement: Option<RefineReport>,
    pub hierarchy: Vec<HierarchyScore>,
    pub indices: Vec<IndexReport>,
    pub identification: Vec<IdentifyReport>,
    pub lasso: Option<LassoReport>,
    pub kernel_shap: Option<KernelShapReport>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat metric rows for CSV output.
    pub fn metrics(&self) -> Vec<MetricReport> {
        let f = &self.faithfulness;
        let (tr, te) = (self.budget.train_masks, self.budget.test_masks);
        let mut rows = vec![
            MetricReport::new("train_r2_surrogate", f.train_r2_surrogate).samples(tr),
            MetricReport::new("test_r2_surrogate", f.test_r2_surrogate).samples(te),
            MetricReport::new("train_r2_sparse", f.train_r2_sparse).param("k", self.k).samples(tr),
            MetricReport::new("test_r2_sparse", f.test_r2_sparse).param("k", self.k).samples(te),
            MetricReport::new("train_r2_final", f.train_r2_final).param("k", self.k).samples(tr),
            MetricReport::new("test_r2_final", f.test_r2_final).param("k", self.k).samples(te),
        ];
        for r in &mut rows {
            *r = r.clone().param("alpha", self.budget.alpha);
        }
        rows.extend(self.hierarchy.iter().map(MetricReport::from_hierarchy));
        for id in &self.identification {
            rows.push(MetricReport::new("delta_output", id.delta_output).param("r", id.remove));
        }
        if let Some(l) = &self.lasso {
            rows.push(MetricReport::new("test_r2_lasso", l.test_r2).param("alpha", self.budget.alpha).samples(te));
        }
        if let Some(k) = &self.kernel_shap {
            rows.push(MetricReport::new("kernel_shap_recall", Some(k.recall_vs_surrogate)).param("budget", k.budget));
            rows.push(MetricReport::new("kernel_shap_mse", Some(k.mse_vs_surrogate)).param("budget", k.budget));
        }
        rows
    }

    pub fn metrics_csv(&self) -> String {
        metrics::metrics_csv(&self.metrics())
    }
}

/// Seconds per stage, in execution order.
pub type Timings = BTreeMap<String, f64>;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub timings: Timings,
}

struct Clock {
    timings: Timings,
    order: usize,
}

impl Clock {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage);
        self.order += 1;
        self.timings
            .insert(format!("{:02}_{stage}", self.order), start.elapsed().as_secs_f64());
        out
    }
}

pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate().stage("config")?;
    let n = config.value_function.n();
    let seeds = Seeds::derive(config.seed);
    let train_count = config.train_mask_count()?;
    let grid: Vec<FitConfig> = config.grid.resolve()?;
    let depth_capped = grid.iter().any(|g| g.max_depth.is_none_or(|d| d > proxy::EXTRACTION_DEPTH_CAP));
    let grid: Vec<FitConfig> = grid.iter().map(FitConfig::capped_for_extraction).collect();
    let mut clock = Clock {
        timings: Timings::new(),
        order: 0,
    };

    let vf = QueryCounter::new(make_value_function(&config.value_function).stage("provider")?);
    let (train_masks, test_masks) = clock.time("sample", || {
        Ok((
            sample_masks(n, train_count, seeds.train_masks)?,
            sample_masks(n, config.test_masks, seeds.test_masks)?,
        ))
    })?;
    let (train, test) = clock.time("evaluate", || {
        Ok((
            evaluate_dataset(&vf, &train_masks, config.batch_size)?,
            evaluate_dataset(&vf, &test_masks, config.batch_size)?,
        ))
    })?;
    let queries = vf.count();
    if queries != train_count + config.test_masks {
        return Err(Error::provider(format!(
            "query audit: {queries} issued for {} masks",
            train_count + config.test_masks
        )));
    }

    let selection = clock.time("fit", || cross_validate(&train, &grid, config.folds, seeds.cv))?;
    let model = &selection.model;
    let extracted = clock.time("extract", || extract_model(model))?;
    let sparse = clock.time("sparsify", || extracted.sparsify(config.k))?;
    let (final_spec, refinement) = if config.refine {
        let r = clock.time("refine", || sparse.refine(&train, config.folds, seeds.refine))?;
        let report = RefineReport {
            accepted: r.accepted,
            cv_mse_before: r.cv_mse_before,
            cv_mse_after: r.cv_mse_after,
        };
        (r.spectrum, Some(report))
    } else {
        (sparse.clone(), None)
    };

    let faith = clock.time("metrics", || {
        Ok(Faithfulness {
            train_r2_surrogate: faithfulness(&extracted, &train)?,
            test_r2_surrogate: faithfulness(&extracted, &test)?,
            train_r2_sparse: faithfulness(&sparse, &train)?,
            test_r2_sparse: faithfulness(&sparse, &test)?,
            train_r2_final: faithfulness(&final_spec, &train)?,
            test_r2_final: faithfulness(&final_spec, &test)?,
        })
    })?;
    let hierarchy = clock.time("hierarchy", || {
        let mut out = Vec::new();
        for &k in &config.hierarchy_k {
            for kind in HierarchyKind::ALL {
                out.push(metrics::hierarchy_rate(&extracted, k, kind)?);
            }
        }
        Ok(out)
    })?;
    let indices = clock.time("indices", || {
        config
            .indices
            .iter()
            .map(|r| interaction_index(&final_spec, r.kind, r.order))
            .collect::<Result<Vec<_>>>()
    })?;

    let id_counter = QueryCounter::new(&vf);
    let identification = clock.time("identify", || {
        let Some(req) = &config.identify else {
            return Ok(Vec::new());
        };
        let method: Method = req.method.parse()?;
        let limits = Limits {
            max_nodes: req.max_nodes,
            time_limit: None,
        };
        req.remove
            .iter()
            .map(|&r| {
                let removal = identify_removal(&final_spec, r, method, &limits)?;
                let delta_output = metrics::delta_output(&id_counter, &removal.solution.mask)?;
                Ok(IdentifyReport {
                    remove: r,
                    removal,
                    delta_output,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let identify_queries = id_counter.count();

    let lasso = if config.lasso_baseline {
        Some(clock.time("lasso", || {
            let fit = fit_lasso(
                &train,
                proxy::lasso::DEFAULT_NUM_LAMBDAS,
                proxy::lasso::DEFAULT_LAMBDA_RATIO,
                config.folds,
                seeds.lasso,
            )?;
            Ok(LassoReport {
                lambda: fit.lambda,
                test_r2: faithfulness(&fit.spectrum, &test)?,
                support: fit.spectrum.len(),
            })
        })?)
    } else {
        None
    };

    let ks_counter = QueryCounter::new(&vf);
    let kernel = match config.kernel_shap_budget {
        Some(budget) => Some(clock.time("kernel_shap", || {
            let est = kernel_shap(&ks_counter, budget, seeds.kernel_shap)?;
            let surrogate = shapley(&final_spec);
            let cmp = compare_shapley(&est.values, &surrogate, n.min(10))?;
            Ok(KernelShapReport {
                budget,
                evaluations: est.evaluations,
                values: est.values,
                recall_vs_surrogate: cmp.recall_at_k,
                mse_vs_surrogate: cmp.mse,
            })
        })?),
        None => None,
    };

    let report = RunReport {
        n,
        seeds,
        budget: Budget {
            alpha: config.alpha,
            train_masks: train_count,
            test_masks: config.test_masks,
            queries,
            kernel_shap_queries: ks_counter.count(),
            identify_queries,
        },
        train_mean: train.mean(),
        train_variance: train.variance(),
        proxy: ProxyReport {
            chosen: selection.best.clone(),
            chosen_index: selection.best_index,
            grid,
            cv_mse: selection.scores.clone(),
            depth_capped,
            trees: model.trees.len(),
            max_depth: model.max_depth(),
        },
        support_extracted: extracted.len(),
        support_sparse: sparse.len(),
        support_final: final_spec.len(),
        k: config.k,
        faithfulness: faith,
        refinement,
        hierarchy,
        indices,
        identification,
        lasso,
        kernel_shap: kernel,
    };

    if let Some(dir) = &config.outputs.dir {
        clock.time("persist", || {
            std::fs::create_dir_all(dir)?;
            train.save(&dir.join("train.jsonl"))?;
            test.save(&dir.join("test.jsonl"))?;
            model.save(&dir.join("model.json"))?;
            extracted.save(&dir.join("spectrum_extracted.jsonl"))?;
            final_spec.save(&dir.join("spectrum.jsonl"))?;
            std::fs::write(dir.join("report.json"), report.to_json()?)?;
            std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
            Ok(())
        })?;
    }

    Ok(RunOutput {
        report,
        timings: clock.timings,
    })
}
