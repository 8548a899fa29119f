//! Surrogate models fitted to mask datasets: the boosted-tree proxy and the
//! marginal baselines it is compared against.

pub mod gbt;
pub mod kernel_shap;
pub mod lasso;

pub use gbt::{
    cross_validate, desk_grid, fit_gbt, full_grid, CvSelection, FitConfig, GbtModel, Node,
    RegressionTree, EXTRACTION_DEPTH_CAP,
};
pub use kernel_shap::{kernel_shap, KernelShap};
pub use lasso::{fit_lasso, lasso_at, LassoFit};
