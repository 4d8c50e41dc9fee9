//! Command implementations behind the `lel` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lel_core::classifier::{
    classify_all, compare_criteria, BonhemeThresholds, ClassifierConfig, PairAgreement, TauMethod,
};
use lel_core::downstream::{topn_curve, CurvePoint, RegressionConfig};
use lel_core::dump::{load_dump, save_dump};
use lel_core::estimators::estimate_columns;
use lel_core::model::{
    Classification, DimensionStats, EstimatorConfig, EstimatorKind, Label, LatentDump,
};
use lel_core::statistics::{analyze_dimensions, check_bound_chain, BoundCheck};
use lel_core::synthetic::{
    pi_grid, planted_regime_dump, spike_slab_dump, spike_slab_sweep, PlantedSpec, SpikeSlabSpec,
};
use lel_core::{Error, Result};

/// Version of the report.json layout.
pub const REPORT_SCHEMA: u32 = 1;
/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "LEL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "lel",
    version,
    about = "Entropy-based diagnostics for latent representations"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Entropy estimator: histogram, knn, gmm_mc or renyi.
    #[arg(long, global = true, default_value = "knn", value_parser = parse_estimator)]
    pub estimator: EstimatorKind,
    /// Rényi order (not 1).
    #[arg(long, global = true, default_value_t = 1.01)]
    pub alpha: f64,
    /// Neighbour index of the kNN estimator.
    #[arg(long, global = true, default_value_t = 10)]
    pub k: usize,
    /// Fixed entropy threshold; overrides --tau-method.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Threshold rule when --tau is not given: largest-gap or otsu.
    #[arg(long, global = true, default_value = "largest-gap")]
    pub tau_method: String,
    /// KL level below which a datapoint counts as prior-matching.
    #[arg(long, global = true, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Fraction of prior-matching datapoints that makes a dimension passive.
    #[arg(long, global = true, default_value_t = 0.95)]
    pub delta: f64,
    #[arg(long, global = true, default_value_t = 0.5)]
    pub t_act: f64,
    #[arg(long, global = true, default_value_t = 0.1)]
    pub t_pas: f64,
    #[arg(long, global = true, default_value_t = 0.01)]
    pub t_var: f64,
    #[arg(long, global = true, default_value_t = 0.1)]
    pub t_mu: f64,
}

fn parse_estimator(s: &str) -> std::result::Result<EstimatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-dimension statistics, bound chain and classification of a dump.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic dump.
    Synth(SynthArgs),
    /// Spike-and-slab entropy over a grid of slab weights.
    Sweep(SweepArgs),
    /// Accuracy of linear probes on the top-n dimensions.
    Downstream(DownstreamArgs),
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Dump directory.
    pub dump: PathBuf,
    /// Relative tolerance of the bound chain.
    #[arg(long, default_value_t = 0.05)]
    pub chain_tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// One-column spike-and-slab dump.
    #[arg(long, conflicts_with = "planted")]
    pub spike_slab: bool,
    /// Planted active/passive/mixed dump with labels.
    #[arg(long)]
    pub planted: bool,
    #[arg(long, default_value_t = 0.5)]
    pub pi: f64,
    /// Standard deviation of the spike.
    #[arg(long, default_value_t = 0.05)]
    pub spike_std: f64,
    #[arg(long, default_value_t = 1.0)]
    pub target_var: f64,
    /// Number of datapoints.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub active: usize,
    #[arg(long, default_value_t = 24)]
    pub passive: usize,
    #[arg(long, default_value_t = 0)]
    pub mixed: usize,
    #[arg(long, default_value_t = 2.0)]
    pub active_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub mixed_p: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub label_noise: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 0.1)]
    pub pi_min: f64,
    #[arg(long, default_value_t = 0.9)]
    pub pi_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub pi_step: f64,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub spike_std: f64,
    #[arg(long, default_value_t = 1.0)]
    pub target_var: f64,
    /// Comma-separated estimators to run.
    #[arg(long, value_delimiter = ',', default_value = "histogram,knn,gmm_mc,renyi", value_parser = parse_estimator)]
    pub estimators: Vec<EstimatorKind>,
    /// Emit only the quadrature oracle.
    #[arg(long)]
    pub oracle_only: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DownstreamArgs {
    /// Labelled dump directory.
    pub dump: PathBuf,
    /// Independent splits averaged per point.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

impl GlobalOpts {
    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        let config = EstimatorConfig {
            estimator: self.estimator,
            alpha: self.alpha,
            knn_k: self.k,
            seed: self.seed,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn classifier_config(&self) -> Result<ClassifierConfig> {
        let tau_method = match self.tau {
            Some(t) => TauMethod::Fixed(t),
            None => self.tau_method.parse()?,
        };
        let bonheme = BonhemeThresholds {
            t_act: self.t_act,
            t_pas: self.t_pas,
            t_var: self.t_var,
            t_mu: self.t_mu,
            ..Default::default()
        };
        bonheme.validate()?;
        Ok(ClassifierConfig {
            tau_method,
            bonheme,
            epsilon: self.epsilon,
            delta: self.delta,
        })
    }
}

/// Sizes the global rayon pool from `LEL_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize =
        raw.trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::Parameter {
                name: "LEL_THREADS",
                reason: format!("{raw:?} is not a positive integer"),
            })?;
    // A pool already built (e.g. by a test harness) is left as is.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(&cli.global, a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&cli.global, a),
        Command::Sweep(a) => cmd_sweep(&cli.global, a),
        Command::Downstream(a) => cmd_downstream(&cli.global, a).map(|_| ()),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("cannot serialise {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, &text)
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpSummary {
    pub path: String,
    pub source: String,
    pub n: usize,
    pub d: usize,
    pub has_sigma: bool,
    pub has_labels: bool,
}

impl DumpSummary {
    fn new(path: &Path, dump: &LatentDump) -> Self {
        DumpSummary {
            path: path.display().to_string(),
            source: dump.meta.source.clone(),
            n: dump.n(),
            d: dump.d(),
            has_sigma: dump.has_sigma(),
            has_labels: dump.labels.is_some(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundSection {
    pub estimator: String,
    pub tol: f64,
    pub all_hold: bool,
    pub dims: Vec<BoundCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub schema: u32,
    pub dump: DumpSummary,
    pub estimator: EstimatorConfig,
    pub classifier: ClassifierConfig,
    pub dimension_stats: DimensionStats,
    pub bound_check: BoundSection,
    pub classification: Classification,
    pub agreement: Vec<PairAgreement>,
    pub warnings: Vec<String>,
}

pub fn cmd_analyze(global: &GlobalOpts, args: &AnalyzeArgs) -> Result<AnalyzeReport> {
    let config = global.estimator_config()?;
    let classifier = global.classifier_config()?;
    let dump = load_dump(&args.dump)?;
    let reference = EstimatorKind::Knn;
    let (stats, warnings) = analyze_dimensions(&dump, &[config.estimator], reference, &config)?;
    let checks = check_bound_chain(&stats, reference.name(), args.chain_tol)?;
    let name = config.estimator.name();
    let classification = classify_all(&dump, &stats, name, &classifier)?;

    let labels = |f: fn(&lel_core::model::DimClassification) -> Label| -> Vec<Label> {
        classification.dims.iter().map(f).collect()
    };
    let (e, b, k) = (
        labels(|d| d.entropy_label),
        labels(|d| d.bonheme_label),
        labels(|d| d.kl_label),
    );
    let agreement = compare_criteria(&[("entropy", &e), ("bonheme", &b), ("kl", &k)])?;

    let report = AnalyzeReport {
        schema: REPORT_SCHEMA,
        dump: DumpSummary::new(&args.dump, &dump),
        estimator: config,
        classifier,
        bound_check: BoundSection {
            estimator: reference.name().to_string(),
            tol: args.chain_tol,
            all_hold: checks.iter().all(|c| c.chain_holds),
            dims: checks,
        },
        dimension_stats: stats,
        classification,
        agreement,
        warnings,
    };
    write_json(&global.out.join("report.json"), &report)?;

    let entropies = report.dimension_stats.entropies(name).unwrap_or_default();
    let mut order: Vec<usize> = (0..entropies.len()).collect();
    order.sort_by(|&a, &b| entropies[b].total_cmp(&entropies[a]).then(a.cmp(&b)));
    let rows = order.iter().enumerate().map(|(rank, &d)| {
        vec![
            rank.to_string(),
            d.to_string(),
            name.to_string(),
            entropies[d].to_string(),
            e[d].to_string(),
        ]
    });
    write_file(
        &global.out.join("marginal_entropies.csv"),
        &csv_text(
            &["rank", "dim", "estimator", "entropy", "entropy_label"],
            rows,
        ),
    )?;
    Ok(report)
}

pub fn cmd_synth(global: &GlobalOpts, args: &SynthArgs) -> Result<()> {
    if !(args.spike_slab || args.planted) {
        return Err(Error::Parameter {
            name: "kind",
            reason: "choose --spike-slab or --planted".into(),
        });
    }
    let (dump, truth): (LatentDump, Vec<(Label, f64)>) = if args.spike_slab {
        let spec = SpikeSlabSpec {
            pi: args.pi,
            epsilon: args.spike_std,
            target_var: args.target_var,
            n: args.n.unwrap_or(100_000),
            seed: global.seed,
        };
        let dump = spike_slab_dump(&spec)?;
        (dump, vec![(Label::Unclassified, spec.oracle_entropy())])
    } else {
        let spec = PlantedSpec {
            n_active: args.active,
            n_passive: args.passive,
            n_mixed: args.mixed,
            n: args.n.unwrap_or(5000),
            active_scale: args.active_scale,
            mixed_p: args.mixed_p,
            n_classes: args.classes,
            label_noise: args.label_noise,
            seed: global.seed,
        };
        let p = planted_regime_dump(&spec)?;
        let truth = p.ground_truth.into_iter().zip(p.oracle_entropy).collect();
        (p.dump, truth)
    };
    save_dump(&dump, &global.out)?;
    let rows = truth
        .iter()
        .enumerate()
        .map(|(d, (l, h))| vec![d.to_string(), l.to_string(), h.to_string()]);
    write_file(
        &global.out.join("ground_truth.csv"),
        &csv_text(&["dim", "label", "oracle_entropy"], rows),
    )
}

pub fn cmd_sweep(global: &GlobalOpts, args: &SweepArgs) -> Result<()> {
    let grid = pi_grid(args.pi_min, args.pi_max, args.pi_step)?;
    let base = SpikeSlabSpec {
        pi: 1.0,
        epsilon: args.spike_std,
        target_var: args.target_var,
        n: args.n,
        seed: global.seed,
    };
    let path = global.out.join("sweep.csv");
    if args.oracle_only {
        let rows = grid
            .iter()
            .map(|&pi| {
                let spec = base.with_pi(pi);
                spec.validate()?;
                Ok(vec![pi.to_string(), spec.oracle_entropy().to_string()])
            })
            .collect::<Result<Vec<_>>>()?;
        return write_file(&path, &csv_text(&["pi", "oracle_entropy"], rows));
    }
    if args.estimators.is_empty() {
        return Err(Error::Parameter {
            name: "estimators",
            reason: "need at least one estimator".into(),
        });
    }
    let config = global.estimator_config()?;
    let points = spike_slab_sweep(&grid, &base, &args.estimators, &config)?;
    let mut rows = Vec::new();
    for p in &points {
        for e in &args.estimators {
            rows.push(vec![
                p.pi.to_string(),
                e.name().to_string(),
                p.entropies[e.name()].to_string(),
                p.oracle_entropy.to_string(),
            ]);
        }
    }
    write_file(
        &path,
        &csv_text(&["pi", "estimator", "entropy", "oracle_entropy"], rows),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveReport {
    pub schema: u32,
    pub dump: DumpSummary,
    pub estimator: String,
    pub repeats: usize,
    pub regression: RegressionConfig,
    pub points: Vec<CurvePoint>,
}

pub fn cmd_downstream(global: &GlobalOpts, args: &DownstreamArgs) -> Result<CurveReport> {
    let config = global.estimator_config()?;
    let dump = load_dump(&args.dump)?;
    if dump.labels.is_none() {
        return Err(Error::Parameter {
            name: "labels",
            reason: format!("{} has no labels.csv", args.dump.display()),
        });
    }
    let cols: Vec<&[f64]> = (0..dump.d()).map(|d| dump.mu_column(d)).collect();
    let entropies: Vec<f64> = estimate_columns(&cols, &config)?
        .into_iter()
        .map(|e| e.value)
        .collect();
    let regression = RegressionConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        l2: args.l2,
        train_fraction: args.train_fraction,
        normalise: false,
        seed: global.seed,
    };
    let points = topn_curve(&dump, &entropies, &regression, args.repeats)?;
    let rows = points.iter().map(|p| {
        vec![
            p.n_dims.to_string(),
            p.accuracy_raw.to_string(),
            p.accuracy_normalised.to_string(),
        ]
    });
    write_file(
        &global.out.join("curve.csv"),
        &csv_text(&["n", "accuracy_raw", "accuracy_normalised"], rows),
    )?;
    let report = CurveReport {
        schema: REPORT_SCHEMA,
        dump: DumpSummary::new(&args.dump, &dump),
        estimator: config.estimator.name().to_string(),
        repeats: args.repeats,
        regression,
        points,
    };
    write_json(&global.out.join("curve.json"), &report)?;
    Ok(report)
}
