//! `sproxy`: command-line front end for the sparse surrogate engine.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime errors. Runtime
//! errors are written to stderr as one JSON object `{kind, message, stage}`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sproxy_core::identify::{identify_removal, Limits, Method, DEFAULT_MAX_NODES};
use sproxy_core::indices::{interaction_index, IndexKind};
use sproxy_core::metrics::{faithfulness, hierarchy_rate, metrics_csv, HierarchyKind, MetricReport};
use sproxy_core::pipeline::{run, GridSpec, RunConfig};
use sproxy_core::proxy::{cross_validate, fit_gbt, kernel_shap, FitConfig, GbtModel};
use sproxy_core::setfn::{evaluate_dataset, make_value_function, read_masks, sample_masks, write_masks};
use sproxy_core::spectrum::file_basis;
use sproxy_core::synth::{make_synthetic, Family, SyntheticSpec};
use sproxy_core::{extract_model, Error, FourierSpectrum, MaskDataset, ProviderSpec, Result};

#[derive(Parser)]
#[command(name = "sproxy", version, about = "Sparse Fourier surrogates of black-box set functions")]
struct Cli {
    /// Worker threads (falls back to SPEX_THREADS, then all cores).
    #[arg(long, global = true, env = "SPEX_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw uniform random masks.
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query a value function on a mask file, producing a dataset.
    Eval {
        #[arg(long)]
        vf: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the boosted-tree proxy, by grid search unless a single config is given.
    Fit(FitArgs),
    /// Convert a fitted model into its exact Fourier spectrum.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep the k largest coefficients.
    Sparsify {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long, default_value_t = 200)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Least-squares refit on the spectrum's support, kept only if CV error drops.
    Refine {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute an attribution or interaction index from a spectrum.
    Convert {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        index: IndexKind,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose features whose removal moves the surrogate output the most.
    Identify {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        remove: usize,
        #[arg(long, default_value = "bnb")]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_MAX_NODES)]
        max_nodes: u64,
        /// Wall-clock limit in seconds for branch and bound.
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hierarchy rates of a spectrum and, given data, its faithfulness.
    Metrics {
        #[arg(long)]
        spectrum: PathBuf,
        /// Top-k cut-offs; defaults to the support size.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic value-function description and optionally its truth spectrum.
    Synth {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        num_sets: usize,
        #[arg(long, default_value_t = 5)]
        cardinality: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Full pipeline: sample, query, fit, extract, sparsify, refine, report.
    Run(RunArgs),
    /// Baseline Shapley estimates by kernel-weighted regression.
    KernelShap {
        #[arg(long)]
        vf: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Named grid: desk or full.
    #[arg(long, default_value = "desk", conflicts_with = "trees")]
    grid: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit one configuration directly (no CV).
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long, requires = "trees")]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vf: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    timings: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = output(path)?;
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn load_fourier(path: &Path) -> Result<FourierSpectrum> {
    let basis = file_basis(path)?;
    if basis != "fourier" {
        return Err(Error::invalid(format!("{} holds a {basis} spectrum, expected fourier", path.display())));
    }
    FourierSpectrum::load(path)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Sample { n, count, seed, out } => {
            let masks = sample_masks(n, count, seed)?;
            let mut w = output(out.as_deref())?;
            write_masks(n, &masks, &mut w)?;
            w.flush()?;
        }
        Command::Eval { vf, masks, batch_size, out } => {
            let vf = make_value_function(&ProviderSpec::load(&vf)?)?;
            let (n, masks) = read_masks(BufReader::new(File::open(&masks)?))?;
            if n != vf.n() {
                return Err(Error::invalid(format!("mask width {n} but value function has n = {}", vf.n())));
            }
            let data = evaluate_dataset(&vf, &masks, batch_size)?;
            let mut w = output(out.as_deref())?;
            data.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Command::Fit(args) => {
            let data = MaskDataset::load(&args.data)?;
            let summary = if let Some(trees) = args.trees {
                let cfg = FitConfig::new(args.max_depth, trees, args.learning_rate);
                fit_gbt(&data, &cfg)?.save(&args.out)?;
                json!({ "chosen": cfg })
            } else {
                let grid = GridSpec::Named(args.grid).resolve()?;
                let sel = cross_validate(&data, &grid, args.folds, args.seed)?;
                sel.model.save(&args.out)?;
                json!({ "chosen": sel.best, "chosen_index": sel.best_index, "cv_mse": sel.scores })
            };
            emit(None, &summary.to_string())?;
        }
        Command::Extract { model, out } => {
            let spec = extract_model(&GbtModel::load(&model)?)?;
            let mut w = output(out.as_deref())?;
            spec.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Command::Sparsify { spectrum, k, out } => {
            let spec = load_fourier(&spectrum)?.sparsify(k)?;
            let mut w = output(out.as_deref())?;
            spec.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Command::Refine { spectrum, data, folds, seed, out } => {
            let r = load_fourier(&spectrum)?.refine(&MaskDataset::load(&data)?, folds, seed)?;
            let mut w = output(out.as_deref())?;
            r.spectrum.write_jsonl(&mut w)?;
            w.flush()?;
            if out.is_some() {
                let summary = json!({
                    "accepted": r.accepted,
                    "cv_mse_before": r.cv_mse_before,
                    "cv_mse_after": r.cv_mse_after,
                });
                emit(None, &summary.to_string())?;
            }
        }
        Command::Convert { spectrum, index, order, format, out } => {
            let report = interaction_index(&load_fourier(&spectrum)?, index, order)?;
            let text = match format {
                Format::Json => report.to_json()?,
                Format::Csv => report.to_csv(),
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Identify { spectrum, remove, method, max_nodes, time_limit, out } => {
            let time_limit = match time_limit {
                Some(s) if s.is_finite() && s > 0.0 => Some(Duration::from_secs_f64(s)),
                Some(s) => return Err(Error::invalid(format!("time limit must be positive, got {s}"))),
                None => None,
            };
            let limits = Limits { max_nodes, time_limit };
            let removal = identify_removal(&load_fourier(&spectrum)?, remove, method, &limits)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&removal)?)?;
        }
        Command::Metrics { spectrum, k, data, format, out } => {
            let spec = load_fourier(&spectrum)?;
            let ks = if k.is_empty() { vec![spec.len().max(1)] } else { k };
            let mut rows = Vec::new();
            for &k in &ks {
                for kind in [HierarchyKind::Dsr, HierarchyKind::Scr, HierarchyKind::Shr] {
                    rows.push(MetricReport::from_hierarchy(&hierarchy_rate(&spec, k, kind)?));
                }
            }
            if let Some(path) = data {
                let data = MaskDataset::load(&path)?;
                rows.push(MetricReport::new("r2", faithfulness(&spec, &data)?).samples(data.len()));
            }
            let text = match format {
                Format::Csv => metrics_csv(&rows),
                Format::Json => serde_json::to_string_pretty(&rows)?,
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Synth { family, n, seed, num_sets, cardinality, out, truth } => {
            let spec = SyntheticSpec { family, n, num_sets, cardinality, seed };
            let (_, truth_spec) = make_synthetic(&spec)?;
            let provider = ProviderSpec::Synthetic(spec);
            emit(out.as_deref(), &serde_json::to_string_pretty(&provider)?)?;
            if let Some(path) = truth {
                truth_spec.save(&path)?;
            }
        }
        Command::Run(args) => run_command(args)?,
        Command::KernelShap { vf, budget, seed, out } => {
            let vf = make_value_function(&ProviderSpec::load(&vf)?)?;
            let est = kernel_shap(&vf, budget, seed)?;
            let text = json!({ "values": est.values, "evaluations": est.evaluations });
            emit(out.as_deref(), &text.to_string())?;
        }
    }
    Ok(())
}

fn run_command(args: RunArgs) -> Result<()> {
    let vf = args.vf.as_deref().map(ProviderSpec::load).transpose()?;
    let mut config = match (&args.config, vf) {
        (Some(path), vf) => {
            let mut c = RunConfig::load(path)?;
            if let Some(vf) = vf {
                c.value_function = vf;
            }
            c
        }
        (None, Some(vf)) => RunConfig::new(vf, 8.0, 0),
        (None, None) => return Err(Error::invalid("run needs --config or --vf")),
    };
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = args.out_dir {
        config.outputs.dir = Some(dir);
    }
    let out = run(&config)?;
    if let Some(path) = &args.report {
        emit(Some(path), &out.report.to_json()?)?;
    }
    if let Some(path) = &args.metrics {
        emit(Some(path), &out.report.metrics_csv())?;
    }
    if let Some(path) = &args.timings {
        emit(Some(path), &serde_json::to_string_pretty(&out.timings)?)?;
    }
    let text = match args.format {
        Format::Csv => out.report.metrics_csv(),
        Format::Json => serde_json::to_string_pretty(&out.report.metrics())?,
    };
    emit(None, &text)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Sample { .. } => "sample",
        Command::Eval { .. } => "eval",
        Command::Fit(_) => "fit",
        Command::Extract { .. } => "extract",
        Command::Sparsify { .. } => "sparsify",
        Command::Refine { .. } => "refine",
        Command::Convert { .. } => "convert",
        Command::Identify { .. } => "identify",
        Command::Metrics { .. } => "metrics",
        Command::Synth { .. } => "synth",
        Command::Run(_) => "run",
        Command::KernelShap { .. } => "kernel-shap",
    }
}

fn diagnostic(err: &Error, command: &str) -> String {
    let stage = match err {
        Error::Stage { stage, .. } => stage,
        _ => command,
    };
    json!({ "kind": err.kind(), "message": err.root().to_string(), "stage": stage }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            let err = Error::invalid(format!("thread pool: {e}"));
            eprintln!("{}", diagnostic(&err, "threads"));
            return ExitCode::from(2);
        }
    }
    let name = command_name(&cli.command);
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", diagnostic(&e, name));
            ExitCode::from(2)
        }
    }
}
