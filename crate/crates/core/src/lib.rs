//! Sparse Boolean-Fourier surrogates of black-box set functions.

pub mod cv;
pub mod error;
pub mod extract;
pub mod identify;
pub mod indices;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod mask;
pub mod proxy;
pub mod rng;
pub mod setfn;
pub mod spectrum;
pub mod synth;

pub use error::{Error, Result};
pub use extract::{extract_model, extract_tree};
pub use identify::{identify_removal, Direction, Method, Optimality};
pub use indices::{IndexKind, IndexReport};
pub use mask::Mask;
pub use metrics::{HierarchyKind, HierarchyScore, MetricReport};
pub use pipeline::{run, RunConfig, RunReport};
pub use proxy::{FitConfig, GbtModel, RegressionTree};
pub use setfn::{MaskDataset, ProviderSpec, ValueFunction};
pub use spectrum::{exact_transform, fourier_to_mobius, FourierSpectrum, MobiusSpectrum};
pub use synth::{Family, SyntheticSpec};
