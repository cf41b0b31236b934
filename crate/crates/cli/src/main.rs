use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cnf_core::data::write_index_list;
use cnf_core::fabric::{export_dot, load_checkpoint, DotOptions, Fabric};
use cnf_core::noise::{fitting_report, read_noisy_labels, write_noisy_labels, AnnotatorConfig, LabeledSet};
use cnf_core::pruning::{build_plan, reported_param_count, Criterion, Strategy};
use cnf_core::runner::{
    error_rate, initial_fabric, inject_noise, prepare_data, prepare_eval_images, run_experiment, scale_schedule,
    ExperimentConfig, NoiseConfig, PruningConfig, SPLIT_NAMES,
};
use cnf_core::FabricDims;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "cnf",
    version,
    about = "Train, prune and inspect convolutional network fabrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts to --out.
    Train(TrainArgs),
    /// Print the pruning plan and reported parameter count without training.
    PrunePlan(PlanArgs),
    /// Print the parameter breakdown of a configuration or checkpoint.
    CountParams(CountArgs),
    /// Write a Graphviz rendering of a fabric.
    ExportDot(DotArgs),
    /// Generate noisy labels for a configuration's splits.
    InjectNoise(NoiseArgs),
    /// Error rates of a checkpoint on a split.
    Evaluate(EvalArgs),
    /// Clean and noisy fitting of predictions against a noisy-label file.
    FittingReport(FittingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Early,
    Iterative,
    Late,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Early => Strategy::Early,
            StrategyArg::Iterative => Strategy::Iterative,
            StrategyArg::Late => Strategy::Late,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Magnitude,
    Sensitivity,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Magnitude => Criterion::Magnitude,
            CriterionArg::Sensitivity => Criterion::Sensitivity,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum NoiseArg {
    None,
    Uniform,
    Class,
    Annotator,
}

/// Flags that override fields of the config file.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    criterion: Option<CriterionArg>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Flip probability for uniform or class noise, target error for the
    /// annotator.
    #[arg(long)]
    noise_rate: Option<f64>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg =
            ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        self.apply_pruning(&mut cfg)?;
        self.apply_noise(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_pruning(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if self.sparsity.is_none() && self.strategy.is_none() && self.criterion.is_none() {
            return Ok(());
        }
        let p = match cfg.pruning.take() {
            Some(mut p) => {
                if let Some(s) = self.sparsity {
                    p.sparsity = s;
                }
                if let Some(s) = self.strategy {
                    p.strategy = s.into();
                }
                if let Some(c) = self.criterion {
                    p.criterion = c.into();
                }
                p
            }
            None => {
                let (Some(sparsity), Some(strategy)) = (self.sparsity, self.strategy) else {
                    bail!("the config has no [pruning] section; pass both --sparsity and --strategy");
                };
                PruningConfig {
                    strategy: strategy.into(),
                    sparsity,
                    criterion: self.criterion.map_or(Criterion::Magnitude, Into::into),
                    gradient_source: Default::default(),
                    probe_batches: None,
                    cascade_counts_toward_quota: true,
                    weight_base: Default::default(),
                }
            }
        };
        cfg.pruning = Some(p);
        Ok(())
    }

    fn apply_noise(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let kind = match self.noise {
            Some(k) => k,
            None => {
                if let Some(r) = self.noise_rate {
                    set_rate(&mut cfg.noise, r)?;
                }
                return Ok(());
            }
        };
        let same = cfg.noise.kind()
            == match kind {
                NoiseArg::None => "none",
                NoiseArg::Uniform => "uniform",
                NoiseArg::Class => "class",
                NoiseArg::Annotator => "annotator",
            };
        if !same {
            let rate = match (kind, self.noise_rate) {
                (NoiseArg::None, _) => 0.0,
                (_, Some(r)) => r,
                (_, None) => bail!("--noise differs from the config's noise kind; pass --noise-rate"),
            };
            cfg.noise = match kind {
                NoiseArg::None => NoiseConfig::None,
                NoiseArg::Uniform => NoiseConfig::Uniform { rate },
                NoiseArg::Class => NoiseConfig::Class {
                    matrix: None,
                    pattern: None,
                    rate: Some(rate),
                },
                NoiseArg::Annotator => NoiseConfig::Annotator {
                    epsilon: rate,
                    split: Default::default(),
                    annotator: AnnotatorConfig::default(),
                },
            };
        } else if let Some(r) = self.noise_rate {
            set_rate(&mut cfg.noise, r)?;
        }
        Ok(())
    }
}

fn set_rate(noise: &mut NoiseConfig, r: f64) -> Result<()> {
    match noise {
        NoiseConfig::None => bail!("--noise-rate given but no noise is configured"),
        NoiseConfig::Uniform { rate } => *rate = r,
        NoiseConfig::Class { matrix, rate, .. } => {
            *matrix = None;
            *rate = Some(r);
        }
        NoiseConfig::Annotator { epsilon, .. } => *epsilon = r,
    }
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
    /// Suppress the per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

/// Fabric dimensions given directly instead of through a config.
#[derive(Args, Clone)]
struct DimArgs {
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
}

impl DimArgs {
    fn dims(&self) -> Result<FabricDims> {
        Ok(FabricDims::for_resolution(
            self.layers,
            self.channels,
            self.resolution,
            self.classes,
        )?)
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Rescale prune epochs from the 200-epoch reference to this budget.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    /// Count an existing (possibly pruned) fabric instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    dims: DimArgs,
    /// Also print the reported count at this sparsity.
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DotArgs {
    #[arg(long, required_unless_present = "config")]
    checkpoint: Option<PathBuf>,
    /// Render the full, untrained fabric of a config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    show_pruned: bool,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Noisy-label file of the same split, to also report error against the
    /// given labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for a `predictions_<split>.txt` file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FittingArgs {
    /// Noisy-label file (`index clean given` lines).
    #[arg(long)]
    labels: PathBuf,
    /// One predicted class per line, aligned with the label file.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    classes: usize,
    /// Write the report here as JSON as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::PrunePlan(a) => prune_plan(a),
        Command::CountParams(a) => count_params(a),
        Command::ExportDot(a) => dot(a),
        Command::InjectNoise(a) => noise(a),
        Command::Evaluate(a) => evaluate(a),
        Command::FittingReport(a) => fitting(a),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.overrides.load()?;
    eprintln!("config {} -> {}", cfg.hash(), a.out.display());
    let summary = run_experiment(&cfg, &a.out, |r| {
        if !a.quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  val {:.4}  test {:.4}  lr {:.0e}  links {}  params {}{}",
                r.epoch,
                r.train_loss,
                r.validation_error,
                r.test_error,
                r.learning_rate,
                r.alive_links,
                r.live_params,
                if r.pruned { "  pruned" } else { "" }
            );
        }
    })?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    print_json(&summary)
}

fn config_dims(path: &Option<PathBuf>, fallback: &DimArgs) -> Result<(FabricDims, Option<ExperimentConfig>)> {
    match path {
        Some(p) => {
            let cfg = ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?;
            Ok((cfg.dims()?, Some(cfg)))
        }
        None => Ok((fallback.dims()?, None)),
    }
}

fn prune_plan(a: PlanArgs) -> Result<()> {
    let (dims, cfg) = config_dims(&a.config, &a.dims)?;
    let from_cfg = cfg.as_ref().and_then(|c| c.pruning.clone());
    let sparsity = a
        .sparsity
        .or(from_cfg.as_ref().map(|p| p.sparsity))
        .context("no --sparsity given")?;
    let strategy = a
        .strategy
        .map(Strategy::from)
        .or(from_cfg.as_ref().map(|p| p.strategy))
        .context("no --strategy given")?;
    let opts = from_cfg.map(|p| p.plan_options()).unwrap_or_default();
    let plan = build_plan(strategy, sparsity, &dims, opts)?;
    let epochs = a.epochs.or(cfg.as_ref().map(|c| c.epochs));
    let (reference, milestones) = cfg
        .as_ref()
        .map(|c| (c.schedule.reference_epochs, c.schedule.milestones.clone()))
        .unwrap_or((
            cnf_core::runner::REFERENCE_EPOCHS,
            cnf_core::runner::REFERENCE_MILESTONES.to_vec(),
        ));
    let scaled = match epochs {
        Some(e) if e != reference => Some(scale_schedule(&milestones, Some(&plan), reference, e.max(1))?),
        _ => None,
    };
    let reported = reported_param_count(&dims, sparsity)?;

    #[derive(Serialize)]
    struct Out<'a> {
        dims: FabricDims,
        plan: &'a cnf_core::pruning::PrunePlan,
        scaled_epochs: Option<Vec<usize>>,
        scaled_milestones: Option<Vec<usize>>,
        warnings: Vec<String>,
        reported_params: usize,
    }
    let out = Out {
        dims,
        plan: &plan,
        scaled_epochs: scaled
            .as_ref()
            .and_then(|s| s.plan.as_ref())
            .map(|p| p.events.iter().map(|e| e.epoch).collect()),
        scaled_milestones: scaled.as_ref().map(|s| s.milestones.clone()),
        warnings: scaled.as_ref().map(|s| s.warnings.clone()).unwrap_or_default(),
        reported_params: reported,
    };
    if a.json {
        return print_json(&out);
    }
    let b = &plan.budget;
    println!("strategy {}  sparsity {}", plan.strategy.as_str(), plan.sparsity);
    println!(
        "links     {} total, {} kept (longest linear path {})",
        b.total_links, b.links_kept, b.min_links_kept
    );
    println!(
        "weights   {} on kept links, {} kept",
        b.surviving_conv_weights, b.weights_kept
    );
    let events = scaled.as_ref().and_then(|s| s.plan.as_ref()).unwrap_or(&plan);
    println!("epoch  links  weights");
    for e in &events.events {
        println!("{:>5}  {:>5}  {:>7}", e.epoch, e.links_to_remove, e.weights_to_remove);
    }
    for w in &out.warnings {
        println!("warning: {w}");
    }
    println!("reported params {reported}");
    Ok(())
}

fn count_params(a: CountArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Out {
        dims: FabricDims,
        links: usize,
        alive_links: usize,
        params_per_link: usize,
        stem: usize,
        link_params: usize,
        head: usize,
        total: usize,
        live_params: Option<usize>,
        reported_params: Option<usize>,
    }
    let (dims, fabric) = match &a.checkpoint {
        Some(p) => {
            let f: Fabric<f32> = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            (f.dims, Some(f))
        }
        None => (config_dims(&a.config, &a.dims)?.0, None),
    };
    let breakdown = fabric.as_ref().map_or(dims.full_breakdown(), |f| f.param_count());
    let out = Out {
        dims,
        links: dims.link_count(),
        alive_links: fabric.as_ref().map_or(dims.link_count(), |f| f.alive_count()),
        params_per_link: dims.params_per_link(),
        stem: breakdown.stem,
        link_params: breakdown.links,
        head: breakdown.head,
        total: breakdown.total,
        live_params: fabric.as_ref().map(|f| f.live_param_count()),
        reported_params: a.sparsity.map(|s| reported_param_count(&dims, s)).transpose()?,
    };
    if a.json {
        return print_json(&out);
    }
    println!(
        "fabric    {} layers x {} scales, {} channels, {}x{} input, {} classes",
        dims.layers, dims.scales, dims.channels, dims.resolution, dims.resolution, dims.classes
    );
    println!(
        "links     {} alive of {} ({} params each)",
        out.alive_links, out.links, out.params_per_link
    );
    println!("stem      {}", out.stem);
    println!("links     {}", out.link_params);
    println!("head      {}", out.head);
    println!("total     {}", out.total);
    if let Some(l) = out.live_params {
        println!("live      {l}");
    }
    if let (Some(r), Some(s)) = (out.reported_params, a.sparsity) {
        println!("reported  {r} (s = {s})");
    }
    Ok(())
}

fn dot(a: DotArgs) -> Result<()> {
    let fabric: Fabric<f32> = match (&a.checkpoint, &a.config) {
        (Some(p), _) => load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(c)) => initial_fabric(&ExperimentConfig::load(c)?)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let text = export_dot(
        &fabric,
        DotOptions {
            show_pruned: a.show_pruned,
        },
    );
    match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
            r => r?,
        },
    }
    Ok(())
}

fn noise(a: NoiseArgs) -> Result<()> {
    let cfg = a.overrides.load()?;
    if cfg.noise.is_none() {
        bail!("no noise configured; pass --noise and --noise-rate or add a [noise] section");
    }
    let data = prepare_data::<f32>(&cfg)?;
    let labels = inject_noise(&cfg, &data)?;
    fs::create_dir_all(&a.out)?;
    for (j, idx) in data.split_indices.iter().enumerate() {
        write_index_list(&a.out.join(format!("split_{}.txt", SPLIT_NAMES[j])), idx)?;
    }
    let sets = [
        ("train", &labels.train),
        ("validation", &labels.validation),
        ("test", &labels.test),
    ];
    for (name, set) in sets {
        write_noisy_labels(&a.out.join(format!("noisy_labels_{name}.txt")), set)?;
    }

    #[derive(Serialize)]
    struct Split {
        name: &'static str,
        items: usize,
        mislabeled: usize,
        fraction: f64,
        flips_per_class: Vec<(usize, usize)>,
    }
    #[derive(Serialize)]
    struct Out {
        config_hash: String,
        noise: NoiseConfig,
        splits: Vec<Split>,
        pooled_fraction: f64,
        annotator: Option<cnf_core::runner::AnnotatorSummary>,
    }
    let total: usize = sets.iter().map(|s| s.1.len()).sum();
    let wrong: usize = sets.iter().map(|s| s.1.mislabeled_count()).sum();
    let out = Out {
        config_hash: cfg.hash(),
        noise: cfg.noise.clone(),
        splits: sets
            .iter()
            .map(|(name, s)| Split {
                name,
                items: s.len(),
                mislabeled: s.mislabeled_count(),
                fraction: s.mislabel_fraction(),
                flips_per_class: s.flips_per_class(),
            })
            .collect(),
        pooled_fraction: wrong as f64 / total as f64,
        annotator: labels.annotator,
    };
    fs::write(a.out.join("noise_summary.json"), serde_json::to_string_pretty(&out)?)?;
    print_json(&out)
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let cfg = a.overrides.load()?;
    let data = prepare_data::<f32>(&cfg)?;
    let (name, set) = match a.split {
        SplitArg::Train => ("train", &data.train),
        SplitArg::Validation => ("validation", &data.validation),
        SplitArg::Test => ("test", &data.test),
    };
    let fabric: Fabric<f32> =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    if fabric.dims != cfg.dims()? {
        bail!(
            "checkpoint dimensions {:?} do not match the config {:?}",
            fabric.dims,
            cfg.dims()?
        );
    }
    let images = prepare_eval_images(set, &cfg.augment())?;
    let preds = fabric.predict(&images, cfg.eval_batch_size)?;

    #[derive(Serialize)]
    struct Out {
        split: &'static str,
        items: usize,
        error: f64,
        error_given_labels: Option<f64>,
    }
    let given = match &a.labels {
        Some(p) => {
            let l = read_noisy_labels(p, cfg.fabric.classes)?;
            check_aligned(&l, &set.labels, p)?;
            Some(error_rate(&preds, &l.given_labels))
        }
        None => None,
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let text: String = preds.iter().map(|p| format!("{p}\n")).collect();
        fs::write(dir.join(format!("predictions_{name}.txt")), text)?;
    }
    print_json(&Out {
        split: name,
        items: preds.len(),
        error: error_rate(&preds, &set.labels),
        error_given_labels: given,
    })
}

fn check_aligned(labels: &LabeledSet, clean: &[usize], path: &Path) -> Result<()> {
    if labels.clean_labels != clean {
        bail!("{} does not describe this split (clean labels differ)", path.display());
    }
    Ok(())
}

fn fitting(a: FittingArgs) -> Result<()> {
    let set = read_noisy_labels(&a.labels, a.classes)?;
    let text = fs::read_to_string(&a.predictions).with_context(|| format!("reading {}", a.predictions.display()))?;
    let preds = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .with_context(|| format!("line {} of predictions", i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = fitting_report(&preds, &set)?;
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    print_json(&report)
}
