//! Cross-domain experiments: every fold × seed trains the requested modes,
//! evaluates the held-out domain and measures representation divergence.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::folds::{make_cross_domain_folds, Fold, FoldPlan, SampleRef};
use super::jsd::jsd_divergence;
use super::metrics::{compute_metrics, mean_std};
use crate::config::{Mode, RunConfig};
use crate::data::batches::{mix_seed, pools_from_samples};
use crate::data::{normalize, DomainDataset, NormalizedSample, Provenance, BYTE_GRID_LEN, TRACE_LEN};
use crate::ensemble::{run_training, EpochRecord, Selection, TrainingOutcome, ValleyStatus};
use crate::error::{Error, Result};
use crate::model::{init_model, ModelConfig, ParamVector};
use crate::training::{evaluate, NetworkTrainer, TrainSettings};

pub const REPORT_FORMAT: &str = "flowalign-report";
pub const REPORT_VERSION: u32 = 1;

/// Which of the two training trajectories a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    /// Smoothed cross-entropy plus alignment.
    Aligned,
    /// Plain cross-entropy.
    Plain,
}

impl Trajectory {
    pub fn of(mode: Mode) -> Self {
        if mode.aligned() {
            Trajectory::Aligned
        } else {
            Trajectory::Plain
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticRecord {
    pub seed: u64,
    pub test_domain: Option<usize>,
    pub trajectory: Trajectory,
    #[serde(flatten)]
    pub epoch: EpochRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub test_domain: usize,
    pub accuracy: f64,
    pub literal_accuracy: f64,
    pub weighted_f1: f64,
    pub jsd_class: usize,
    /// Divergence between train-split and test-domain representations of
    /// `jsd_class`; absent when either side has fewer than two samples.
    pub jsd: Option<f64>,
    pub status: ValleyStatus,
    /// The ensemble was requested but no valley formed.
    pub fallback: bool,
    pub converge_epoch: Option<usize>,
    pub overfit_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub merged_epochs: Vec<usize>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub acc_avg: f64,
    pub acc_std: f64,
    pub literal_acc_avg: f64,
    pub f1_avg: f64,
    pub f1_std: f64,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    /// Mean over seeds of the per-seed fold averages.
    pub acc_avg: f64,
    /// Standard deviation over seeds of the per-seed fold averages.
    pub acc_std: f64,
    pub literal_acc_avg: f64,
    pub f1_avg: f64,
    pub f1_std: f64,
    /// Per fold, the divergence averaged over the seeds where it is defined.
    pub jsd_by_fold: Vec<Option<f64>>,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub num_classes: usize,
    pub num_domains: usize,
    pub samples: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub dataset: DatasetSummary,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub modes: Vec<ModeReport>,
}

impl EvalReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text)
            .map_err(|e| Error::Report(format!("line {} column {}: {e}", e.line(), e.column())))?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Report(format!("unexpected format {:?}", r.format)));
        }
        if r.version != REPORT_VERSION {
            return Err(Error::Report(format!("unsupported version {}", r.version)));
        }
        Ok(r)
    }
}

/// Model shape for `dataset` under `cfg`, initialized from `seed`.
pub fn model_config(cfg: &RunConfig, num_classes: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        byte_input_len: BYTE_GRID_LEN,
        size_trace_len: TRACE_LEN,
        interval_trace_len: TRACE_LEN,
        hidden_width: cfg.model.hidden_width,
        repr_dim: cfg.model.repr_dim,
        num_classes,
        seed,
    }
}

/// Objective settings of a trajectory: the plain one drops smoothing and
/// alignment.
pub fn train_settings(cfg: &RunConfig, trajectory: Trajectory, shuffle_seed: u64) -> TrainSettings {
    let (epsilon, alpha) = match trajectory {
        Trajectory::Aligned => (cfg.loss.epsilon, cfg.loss.alpha),
        Trajectory::Plain => (0.0, 0.0),
    };
    TrainSettings {
        epsilon,
        alpha,
        pair_scale: cfg.loss.pair_scale,
        learning_rate: cfg.optimizer.learning_rate,
        batch_per_domain: cfg.optimizer.batch_per_domain,
        shuffle_seed,
    }
}

pub fn selection(mode: Mode) -> Selection {
    if mode.ensembles() {
        Selection::ValleyEnsemble
    } else {
        Selection::BestValAccuracy
    }
}

/// Trains one trajectory from `init` on the given samples.
pub fn train_trajectory(
    cfg: &RunConfig,
    init: ParamVector,
    trajectory: Trajectory,
    shuffle_seed: u64,
    train: Vec<NormalizedSample>,
    val: Vec<NormalizedSample>,
    sink: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainingOutcome> {
    let mut trainer = NetworkTrainer::new(
        init,
        train_settings(cfg, trajectory, shuffle_seed),
        pools_from_samples(train),
        val,
    )?;
    run_training(&mut trainer, &cfg.valley, sink)
}

pub fn normalize_dataset(dataset: &DomainDataset) -> Vec<Vec<NormalizedSample>> {
    dataset
        .domains
        .iter()
        .map(|d| d.iter().map(normalize).collect())
        .collect()
}

fn gather(normalized: &[Vec<NormalizedSample>], refs: &[SampleRef]) -> Vec<NormalizedSample> {
    refs.iter().map(|&(d, i)| normalized[d][i].clone()).collect()
}

/// The most frequent class of `samples`, lowest id on ties.
pub fn majority_class(samples: &[NormalizedSample], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for s in samples {
        counts[s.label] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct JobOutput {
    results: Vec<(Mode, FoldResult)>,
    records: Vec<DiagnosticRecord>,
}

fn run_fold(
    cfg: &RunConfig,
    num_classes: usize,
    normalized: &[Vec<NormalizedSample>],
    seed: u64,
    fold: &Fold,
) -> Result<JobOutput> {
    let train = gather(normalized, &fold.train);
    let val = gather(normalized, &fold.val);
    let test = &normalized[fold.test_domain];
    let init = init_model(&model_config(cfg, num_classes, seed))?;
    let shuffle_seed = mix_seed(&[seed, fold.test_domain as u64]);
    let jsd_class = match cfg.eval.jsd_class {
        Some(c) if c < num_classes => c,
        Some(c) => {
            return Err(Error::Config(format!("eval.jsd_class {c} outside 0..{num_classes}")))
        }
        None => majority_class(test, num_classes),
    };
    let train_of_class: Vec<NormalizedSample> =
        train.iter().filter(|s| s.label == jsd_class).cloned().collect();
    let test_of_class: Vec<NormalizedSample> =
        test.iter().filter(|s| s.label == jsd_class).cloned().collect();

    let mut records = Vec::new();
    let mut results = Vec::new();
    for trajectory in [Trajectory::Aligned, Trajectory::Plain] {
        let modes: Vec<Mode> = cfg.modes.iter().copied().filter(|&m| Trajectory::of(m) == trajectory).collect();
        if modes.is_empty() {
            continue;
        }
        let outcome = train_trajectory(
            cfg,
            init.clone(),
            trajectory,
            shuffle_seed,
            train.clone(),
            val.clone(),
            &mut |r| {
                records.push(DiagnosticRecord {
                    seed,
                    test_domain: Some(fold.test_domain),
                    trajectory,
                    epoch: r.clone(),
                });
                Ok(())
            },
        )?;
        for mode in modes {
            let (params, fallback) = outcome.select(selection(mode));
            let ev = evaluate(params, test)?;
            let m = compute_metrics(&ev.predictions, &ev.labels, num_classes)?;
            let jsd = if train_of_class.len() >= 2 && test_of_class.len() >= 2 {
                let a = evaluate(params, &train_of_class)?;
                let b = evaluate(params, &test_of_class)?;
                Some(jsd_divergence(a.reps.view(), b.reps.view())?)
            } else {
                None
            };
            results.push((
                mode,
                FoldResult {
                    test_domain: fold.test_domain,
                    accuracy: m.accuracy,
                    literal_accuracy: m.literal_accuracy,
                    weighted_f1: m.weighted_f1,
                    jsd_class,
                    jsd,
                    status: outcome.status,
                    fallback,
                    converge_epoch: outcome.converge_epoch,
                    overfit_epoch: outcome.overfit_epoch,
                    stop_epoch: outcome.stop_epoch,
                    epochs_run: outcome.epochs_run(),
                    best_epoch: outcome.best_epoch,
                    merged_epochs: outcome.merged_epochs.clone(),
                    val_loss: outcome.trace.0.clone(),
                    val_accuracy: outcome.val_accuracy.clone(),
                },
            ));
        }
    }
    Ok(JobOutput { results, records })
}

/// Runs every seed and fold for `cfg.modes`, using up to `workers` threads.
/// Results and diagnostics are assembled in (seed, fold) order, so the report
/// does not depend on the worker count.
pub fn run_experiment(
    dataset: &DomainDataset,
    cfg: &RunConfig,
    workers: usize,
    sink: &mut dyn FnMut(&DiagnosticRecord) -> Result<()>,
) -> Result<EvalReport> {
    cfg.validate()?;
    dataset.validate()?;
    let plans: Vec<FoldPlan> = cfg
        .seeds
        .iter()
        .map(|&s| make_cross_domain_folds(dataset, s))
        .collect::<Result<_>>()?;
    let normalized = normalize_dataset(dataset);
    let jobs: Vec<(u64, &Fold)> = cfg
        .seeds
        .iter()
        .zip(&plans)
        .flat_map(|(&s, plan)| plan.folds.iter().map(move |f| (s, f)))
        .collect();
    let k = dataset.num_classes;

    let slots: Vec<Mutex<Option<Result<JobOutput>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(seed, fold)) = jobs.get(i) else { break };
        log::info!("seed {seed}: holding out domain {}", fold.test_domain);
        let out = run_fold(cfg, k, &normalized, seed, fold);
        *slots[i].lock().expect("slot lock") = Some(out);
    };
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }

    let mut by_mode: Vec<(Mode, Vec<SeedRun>)> = cfg.modes.iter().map(|&m| (m, Vec::new())).collect();
    let s = dataset.num_domains();
    for (job_idx, slot) in slots.into_iter().enumerate() {
        let out = slot.into_inner().expect("slot lock").expect("every job ran")?;
        for rec in &out.records {
            sink(rec)?;
        }
        let (seed, _) = jobs[job_idx];
        for (mode, fr) in out.results {
            let runs = &mut by_mode.iter_mut().find(|(m, _)| *m == mode).expect("requested mode").1;
            if runs.last().is_none_or(|r| r.seed != seed || r.folds.len() == s) {
                runs.push(SeedRun {
                    seed,
                    acc_avg: 0.0,
                    acc_std: 0.0,
                    literal_acc_avg: 0.0,
                    f1_avg: 0.0,
                    f1_std: 0.0,
                    folds: Vec::new(),
                });
            }
            runs.last_mut().expect("just pushed").folds.push(fr);
        }
    }

    let modes = by_mode
        .into_iter()
        .map(|(mode, mut runs)| {
            for r in runs.iter_mut() {
                let acc: Vec<f64> = r.folds.iter().map(|f| f.accuracy).collect();
                let lit: Vec<f64> = r.folds.iter().map(|f| f.literal_accuracy).collect();
                let f1: Vec<f64> = r.folds.iter().map(|f| f.weighted_f1).collect();
                (r.acc_avg, r.acc_std) = mean_std(&acc);
                r.literal_acc_avg = mean_std(&lit).0;
                (r.f1_avg, r.f1_std) = mean_std(&f1);
            }
            let acc: Vec<f64> = runs.iter().map(|r| r.acc_avg).collect();
            let lit: Vec<f64> = runs.iter().map(|r| r.literal_acc_avg).collect();
            let f1: Vec<f64> = runs.iter().map(|r| r.f1_avg).collect();
            let (acc_avg, acc_std) = mean_std(&acc);
            let (f1_avg, f1_std) = mean_std(&f1);
            let jsd_by_fold = (0..s)
                .map(|d| {
                    let vals: Vec<f64> = runs
                        .iter()
                        .filter_map(|r| r.folds.iter().find(|f| f.test_domain == d).and_then(|f| f.jsd))
                        .collect();
                    (!vals.is_empty()).then(|| mean_std(&vals).0)
                })
                .collect();
            ModeReport {
                mode,
                acc_avg,
                acc_std,
                literal_acc_avg: mean_std(&lit).0,
                f1_avg,
                f1_std,
                jsd_by_fold,
                runs,
            }
        })
        .collect();

    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        dataset: DatasetSummary {
            num_classes: k,
            num_domains: s,
            samples: dataset.len(),
            provenance: dataset.provenance,
        },
        config: cfg.clone(),
        seeds: cfg.seeds.clone(),
        modes,
    })
}
