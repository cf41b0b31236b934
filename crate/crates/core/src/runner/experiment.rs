use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AnnotatorSplit, DatasetConfig, ExperimentConfig, GradientSource, NoiseConfig};
use super::schedule::{lr_at, scale_schedule};
use super::train::{error_rate, eval_batches, evaluate, mix_seed, prepare_eval_images, train_epoch, TrainSettings};
use crate::data::{
    load_binary_records, make_synthetic, stratified_split_indices, write_index_list, ImageDataset, RecordLayout,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fabric::{export_dot, save_checkpoint, DotOptions, Fabric};
use crate::noise::{
    apply_class_noise, apply_uniform_noise, fitting_report, relabel_with_annotator, train_annotator,
    write_noisy_labels, FittingReport, LabeledSet,
};
use crate::optim::Sgd;
use crate::pruning::{apply_event, build_plan, reported_param_count, Criterion, PrunePlan, PruneReport, ScoreTable};

pub const SPLIT_NAMES: [&str; 4] = ["train", "validation", "test", "annotator"];

/// One line of `metrics.jsonl`. Wall-clock time is kept out of this record
/// (it goes to `timing.jsonl`) so that reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_error: f64,
    pub test_error: f64,
    pub learning_rate: f64,
    pub alive_links: usize,
    pub param_count: usize,
    pub live_params: usize,
    /// Accounting figure: the full count of alive links until the last
    /// pruning event has fired, then `floor(s · link params) + stem + head`.
    pub reported_params: usize,
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSummary {
    pub epoch: usize,
    pub heldout_error: f64,
    pub in_band: bool,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub epochs: usize,
    pub validation_error: f64,
    pub test_error: f64,
    pub alive_links: usize,
    pub param_count: usize,
    pub live_params: usize,
    pub reported_params: usize,
    pub plan: Option<PrunePlan>,
    pub prune_reports: Vec<PruneReport>,
    pub noise: String,
    pub train_mislabel_fraction: f64,
    pub test_mislabel_fraction: f64,
    pub annotator: Option<AnnotatorSummary>,
    /// Fitting of the final model on the test split, against its given
    /// (possibly noisy) labels. Present when noise is configured.
    pub fitting: Option<FittingReport>,
    pub warnings: Vec<String>,
}

/// The dataset of an experiment, split.
#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    pub source: ImageDataset<T>,
    pub synthetic: Option<SyntheticSpec>,
    /// Indices into `source`, one list per split.
    pub split_indices: Vec<Vec<usize>>,
    pub train: ImageDataset<T>,
    pub validation: ImageDataset<T>,
    pub test: ImageDataset<T>,
    pub annotator: Option<ImageDataset<T>>,
}

pub fn prepare_data<T: crate::Scalar>(config: &ExperimentConfig) -> Result<PreparedData<T>> {
    let classes = config.fabric.classes;
    let (source, synthetic) = match &config.dataset {
        DatasetConfig::Synthetic {
            per_class,
            difficulty,
            seed,
        } => {
            let spec = SyntheticSpec {
                classes,
                per_class: *per_class,
                resolution: config.fabric.resolution,
                seed: seed.unwrap_or(config.seed),
                difficulty: *difficulty,
            };
            (make_synthetic(&spec)?, Some(spec))
        }
        DatasetConfig::Binary {
            path,
            resolution,
            label_bytes,
        } => {
            let layout = RecordLayout {
                resolution: resolution.unwrap_or(config.fabric.resolution),
                classes,
                label_bytes: *label_bytes,
            };
            (load_binary_records(path, layout)?, None)
        }
    };
    let split_seed = config.split.seed.unwrap_or(mix_seed(&[config.seed, 0x5B1]));
    let split_indices = stratified_split_indices(&source.labels, classes, &config.split.fractions, split_seed)?;
    let mut parts = split_indices
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            if idx.is_empty() {
                return Err(Error::Config(format!("{} split would be empty", SPLIT_NAMES[j])));
            }
            source.subset(idx)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let train = parts.next().expect("validated split count");
    let validation = parts.next().expect("validated split count");
    let test = parts.next().expect("validated split count");
    let annotator = parts.next();
    Ok(PreparedData {
        source,
        synthetic,
        split_indices,
        train,
        validation,
        test,
        annotator,
    })
}

/// Clean and given labels of the three main splits.
#[derive(Debug, Clone)]
pub struct NoisyLabels {
    pub train: LabeledSet,
    pub validation: LabeledSet,
    pub test: LabeledSet,
    pub annotator: Option<AnnotatorSummary>,
}

/// Applies the configured noise to the train, validation and test splits,
/// with a distinct seed per split. The annotator (Type 3) learns from the
/// clean training split, or from the dedicated fourth split, and stops on
/// the validation split.
pub fn inject_noise<T: crate::Scalar>(config: &ExperimentConfig, data: &PreparedData<T>) -> Result<NoisyLabels> {
    let k = config.fabric.classes;
    let sets = [&data.train, &data.validation, &data.test];
    let clean: Vec<LabeledSet> = sets
        .iter()
        .map(|d| LabeledSet::clean(d.labels.clone(), k))
        .collect::<Result<_>>()?;
    let seed = |j: usize| mix_seed(&[config.seed, 0x401, j as u64]);
    let mut annotator_summary = None;
    let noisy: Vec<LabeledSet> = match &config.noise {
        NoiseConfig::None => clean,
        NoiseConfig::Uniform { rate } => clean
            .iter()
            .enumerate()
            .map(|(j, s)| apply_uniform_noise(s, *rate, seed(j)))
            .collect::<Result<_>>()?,
        NoiseConfig::Class { .. } => {
            let t = config.noise.transition(k)?.expect("class noise has a matrix");
            clean
                .iter()
                .enumerate()
                .map(|(j, s)| apply_class_noise(s, &t, seed(j)))
                .collect::<Result<_>>()?
        }
        NoiseConfig::Annotator {
            epsilon,
            split,
            annotator,
        } => {
            let learn_from = match split {
                AnnotatorSplit::Train => &data.train,
                AnnotatorSplit::Dedicated => data
                    .annotator
                    .as_ref()
                    .ok_or_else(|| Error::Config("no annotator split".into()))?,
            };
            let a = train_annotator(learn_from, &data.validation, *epsilon, annotator, &config.augment())?;
            annotator_summary = Some(AnnotatorSummary {
                epoch: a.epoch,
                heldout_error: a.heldout_error,
                in_band: a.in_band,
                curve: a.curve.clone(),
            });
            sets.iter()
                .map(|d| relabel_with_annotator(d, &a))
                .collect::<Result<_>>()?
        }
    };
    let mut it = noisy.into_iter();
    Ok(NoisyLabels {
        train: it.next().expect("three splits"),
        validation: it.next().expect("three splits"),
        test: it.next().expect("three splits"),
        annotator: annotator_summary,
    })
}

fn write_json_line(w: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Runs one experiment and writes its artifacts to `out`:
///
/// - `config.toml`, `config.sha256`: canonical config copy and its hash
/// - `split_<name>.txt`: source indices of each split
/// - `dataset.toml`: generator spec, for synthetic data
/// - `noisy_labels_<split>.txt`: clean and given labels, when noise is set
/// - `metrics.jsonl`: one [`EpochRecord`] per epoch
/// - `prune_events.jsonl`: one [`PruneReport`] per pruning event
/// - `timing.jsonl`: wall-clock seconds per epoch
/// - `fabric.dot`, `fabric.ckpt`: final graph and checkpoint
/// - `summary.json`: the returned [`RunSummary`]
///
/// `on_epoch` sees every record as it is written.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, on_epoch: impl FnMut(&EpochRecord)) -> Result<RunSummary> {
    config.validate()?;
    let data = prepare_data::<f32>(config)?;
    let labels = inject_noise(config, &data)?;
    run_prepared(config, &data, labels, out, on_epoch)
}

/// The untrained fabric a run of `config` starts from.
pub fn initial_fabric(config: &ExperimentConfig) -> Result<Fabric<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0xFAB]));
    Fabric::new(config.dims()?, &mut rng)
}

/// [`run_experiment`] with the data and labels already prepared, so several
/// runs can share one dataset or one annotator.
pub fn run_prepared(
    config: &ExperimentConfig,
    data: &PreparedData<f32>,
    labels: NoisyLabels,
    out: &Path,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let hash = config.hash();
    fs::write(out.join("config.toml"), config.to_toml())?;
    fs::write(out.join("config.sha256"), format!("{hash}\n"))?;

    for (j, idx) in data.split_indices.iter().enumerate() {
        write_index_list(&out.join(format!("split_{}.txt", SPLIT_NAMES[j])), idx)?;
    }
    if let Some(spec) = &data.synthetic {
        fs::write(
            out.join("dataset.toml"),
            toml::to_string(spec).expect("spec serializes"),
        )?;
    }
    if !config.noise.is_none() {
        for (name, set) in [
            ("train", &labels.train),
            ("validation", &labels.validation),
            ("test", &labels.test),
        ] {
            write_noisy_labels(&out.join(format!("noisy_labels_{name}.txt")), set)?;
        }
    }

    let dims = config.dims()?;
    let augment = config.augment();
    let mut fabric = initial_fabric(config)?;
    let mut sgd = Sgd::new(config.optimizer)?;
    let settings = TrainSettings {
        batch_size: config.batch_size,
        augment: augment.clone(),
        seed: mix_seed(&[config.seed, 0x7EA]),
    };

    let plan = config
        .pruning
        .as_ref()
        .map(|p| build_plan(p.strategy, p.sparsity, &dims, p.plan_options()))
        .transpose()?;
    let schedule = scale_schedule(
        &config.schedule.milestones,
        plan.as_ref(),
        config.schedule.reference_epochs,
        config.epochs.max(1),
    )?;
    let mut warnings = schedule.warnings.clone();
    let plan = schedule.plan;
    if let Some(p) = &plan {
        if let Some(e) = p.events.iter().find(|e| e.epoch > config.epochs) {
            warnings.push(format!("prune event at epoch {} is past the last epoch", e.epoch));
        }
    }
    let last_event = plan.as_ref().and_then(|p| p.events.last().map(|e| e.epoch));

    let val_images = prepare_eval_images(&data.validation, &augment)?;
    let test_images = prepare_eval_images(&data.test, &augment)?;
    let train_images = match config.pruning.as_ref().map(|p| (p.criterion, p.gradient_source)) {
        Some((Criterion::Sensitivity, GradientSource::Train)) => Some(prepare_eval_images(&data.train, &augment)?),
        _ => None,
    };

    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let mut events = BufWriter::new(File::create(out.join("prune_events.jsonl"))?);
    let mut timing = BufWriter::new(File::create(out.join("timing.jsonl"))?);
    let mut reports = Vec::new();
    let full_params = |f: &Fabric<f32>| f.param_count().total;
    let mut reported = full_params(&fabric);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, config.optimizer.learning_rate, &schedule.milestones);
        sgd.set_learning_rate(lr);
        let train_loss = train_epoch(
            &mut fabric,
            &mut sgd,
            &data.train,
            &labels.train.given_labels,
            &settings,
            epoch,
        )?;

        let mut pruned = false;
        if let (Some(p), Some(pc)) = (&plan, &config.pruning) {
            if let Some(ev) = p.events.iter().find(|e| e.epoch == epoch) {
                let scores = match pc.criterion {
                    Criterion::Magnitude => ScoreTable::magnitude(&fabric),
                    Criterion::Sensitivity => {
                        let (images, given) = match pc.gradient_source {
                            GradientSource::Validation => (&val_images, &labels.validation.given_labels),
                            GradientSource::Train => (
                                train_images.as_ref().expect("prepared for train-sourced sensitivity"),
                                &labels.train.given_labels,
                            ),
                        };
                        let batches = eval_batches(images, given, config.batch_size, pc.probe_batches);
                        ScoreTable::sensitivity(&fabric, &batches)?
                    }
                };
                let mut report = apply_event(&mut fabric, ev, &scores, pc.apply_options())?;
                report.reported_params = Some(reported_param_count(&dims, p.sparsity)?);
                if report.is_partial() {
                    warnings.push(format!(
                        "epoch {epoch}: pruning fell short by {} links and {} weights",
                        report.links_shortfall, report.weights_shortfall
                    ));
                }
                write_json_line(&mut events, &report)?;
                reports.push(report);
                pruned = true;
            }
        }
        reported = match (last_event, &plan) {
            (Some(last), Some(p)) if epoch >= last => reported_param_count(&dims, p.sparsity)?,
            _ => full_params(&fabric),
        };

        let record = EpochRecord {
            epoch,
            train_loss,
            validation_error: evaluate(
                &fabric,
                &val_images,
                &labels.validation.clean_labels,
                config.eval_batch_size,
            )?,
            test_error: evaluate(&fabric, &test_images, &labels.test.clean_labels, config.eval_batch_size)?,
            learning_rate: lr,
            alive_links: fabric.alive_count(),
            param_count: full_params(&fabric),
            live_params: fabric.live_param_count(),
            reported_params: reported,
            pruned,
        };
        write_json_line(&mut metrics, &record)?;
        write_json_line(
            &mut timing,
            &serde_json::json!({ "epoch": epoch, "wall_seconds": started.elapsed().as_secs_f64() }),
        )?;
        on_epoch(&record);
    }

    save_checkpoint(&fabric, &out.join("fabric.ckpt"))?;
    fs::write(out.join("fabric.dot"), export_dot(&fabric, DotOptions::default()))?;

    let test_pred = fabric.predict(&test_images, config.eval_batch_size)?;
    let val_pred = fabric.predict(&val_images, config.eval_batch_size)?;
    let fitting = if config.noise.is_none() {
        None
    } else {
        let report = fitting_report(&test_pred, &labels.test)?;
        fs::write(out.join("fitting.json"), serde_json::to_string_pretty(&report)?)?;
        Some(report)
    };
    let summary = RunSummary {
        config_hash: hash,
        epochs: config.epochs,
        validation_error: error_rate(&val_pred, &labels.validation.clean_labels),
        test_error: error_rate(&test_pred, &labels.test.clean_labels),
        alive_links: fabric.alive_count(),
        param_count: full_params(&fabric),
        live_params: fabric.live_param_count(),
        reported_params: reported,
        plan,
        prune_reports: reports,
        noise: config.noise.kind().to_string(),
        train_mislabel_fraction: labels.train.mislabel_fraction(),
        test_mislabel_fraction: labels.test.mislabel_fraction(),
        annotator: labels.annotator,
        fitting,
        warnings,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
