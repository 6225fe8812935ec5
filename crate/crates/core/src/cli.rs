//! Command-line surface: `generate | extract | train | xdomain | report`.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage or
//! configuration error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::save_params;
use crate::config::{Mode, RunConfig};
use crate::data::features::extract_features;
use crate::data::flow::{assemble_flows, FlowCounters};
use crate::data::io::{load_dataset, save_dataset};
use crate::data::pcap::parse_pcap;
use crate::data::synthetic::generate_synthetic;
use crate::data::{DomainDataset, Provenance};
use crate::ensemble::{ValleyStatus, TrainingOutcome};
use crate::error::{Error, Result};
use crate::eval::experiment::{
    model_config, normalize_dataset, selection, train_trajectory, DiagnosticRecord, Trajectory,
};
use crate::eval::{compute_metrics, make_cross_domain_folds, make_iid_split, render_report, run_experiment, EvalReport, SampleRef};
use crate::model::init_model;
use crate::training::evaluate;

#[derive(Debug, Parser)]
#[command(name = "flowalign", version, about = "Domain-aligned traffic classifier training and evaluation")]
pub struct Cli {
    /// Console verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override any configuration leaf, e.g. `--set loss.alpha=0.25`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-domain dataset.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Extract flow features from pcap files listed in a `path,label,domain` map.
    Extract {
        #[arg(short, long)]
        map: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Class count; defaults to the largest label + 1 (at least 2).
        #[arg(long)]
        num_classes: Option<usize>,
    },
    /// Train one model, holding out a domain (or an 8:1:1 split when omitted).
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        holdout: Option<usize>,
        /// Checkpoint path.
        #[arg(short, long)]
        out: PathBuf,
        /// Per-epoch records; defaults to `<out>.diagnostics.jsonl`.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Run the cross-domain experiment for every configured mode and seed.
    Xdomain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// Report path.
        #[arg(short, long)]
        out: PathBuf,
        /// Per-epoch records; defaults to `<out>.diagnostics.jsonl`.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Folds trained in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Summarize a report.
    Report { path: PathBuf },
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_usage() {
        2
    } else {
        1
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate { config, out: path } => cmd_generate(&config.load()?, &path, out),
        Command::Extract { map, out: path, num_classes } => cmd_extract(&map, &path, num_classes, out),
        Command::Train { config, dataset, holdout, out: path, diagnostics } => {
            let cfg = config.load()?;
            let ds = open_dataset(dataset.as_deref(), &cfg)?;
            let diag = diagnostics.unwrap_or_else(|| sibling(&path, "diagnostics.jsonl"));
            cmd_train(&cfg, &ds, holdout, &path, &diag, out)
        }
        Command::Xdomain { config, dataset, out: path, diagnostics, workers } => {
            let cfg = config.load()?;
            let ds = open_dataset(dataset.as_deref(), &cfg)?;
            let diag = diagnostics.unwrap_or_else(|| sibling(&path, "diagnostics.jsonl"));
            cmd_xdomain(&cfg, &ds, &path, &diag, workers, out)
        }
        Command::Report { path } => cmd_report(&path, out),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Input files the user named must exist; a missing one is a usage error.
fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("cannot read {}", path.display())))
    }
}

fn open_dataset(arg: Option<&Path>, cfg: &RunConfig) -> Result<DomainDataset> {
    let path = arg
        .or(cfg.data.dataset.as_deref())
        .ok_or_else(|| Error::InvalidArgument("no dataset given (--dataset or data.dataset)".into()))?;
    require_file(path)?;
    load_dataset(path)
}

fn print_counts(ds: &DomainDataset, out: &mut dyn Write) -> Result<()> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    writeln!(out, "{} samples, {} classes, {} domains", ds.len(), ds.num_classes, ds.num_domains()).map_err(w)?;
    for (d, counts) in ds.class_counts().iter().enumerate() {
        let cells: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        writeln!(out, "domain {d}: {} (per class: {})", ds.domains[d].len(), cells.join(" ")).map_err(w)?;
    }
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<()> {
    let ds = generate_synthetic(&cfg.data.generator)?;
    if ds.num_domains() == 1 {
        writeln!(out, "warning: single domain, alignment will be disabled").map_err(io_err(path))?;
    }
    save_dataset(path, &ds)?;
    print_counts(&ds, out)
}

#[derive(Debug)]
struct MapEntry {
    path: PathBuf,
    label: usize,
    domain: usize,
}

fn parse_map(text: &str) -> Result<Vec<MapEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if i == 0 && line.replace(' ', "").eq_ignore_ascii_case("path,label,domain") {
            continue;
        }
        let bad = || Error::InvalidArgument(format!("map line {}: expected path,label,domain", i + 1));
        let mut parts = line.rsplitn(3, ',');
        let domain = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let label = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let path = parts.next().ok_or_else(bad)?.trim();
        entries.push(MapEntry {
            path: PathBuf::from(path),
            label,
            domain,
        });
    }
    Ok(entries)
}

pub fn cmd_extract(map: &Path, path: &Path, num_classes: Option<usize>, out: &mut dyn Write) -> Result<()> {
    require_file(map)?;
    let text = std::fs::read_to_string(map).map_err(io_err(map))?;
    let base = map.parent().unwrap_or(Path::new("."));
    let entries = parse_map(&text)?;
    let mut samples = Vec::new();
    let mut totals = FlowCounters::default();
    for e in &entries {
        let pcap_path = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
        require_file(&pcap_path)?;
        let capture = parse_pcap(&pcap_path)?;
        let (flows, counters) = assemble_flows(&capture)?;
        totals.absorb(&counters);
        for f in &flows {
            samples.push(extract_features(f, e.label, e.domain)?);
        }
    }
    let max_label = entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
    let k = num_classes.unwrap_or(max_label.max(2));
    if k < max_label {
        return Err(Error::InvalidArgument(format!("--num-classes {k} but the map uses label {}", max_label - 1)));
    }
    let s = entries.iter().map(|e| e.domain + 1).max().unwrap_or(1);
    let w = io_err(path);
    if samples.is_empty() {
        writeln!(out, "warning: no flows extracted; writing an empty dataset").map_err(&w)?;
    }
    let ds = DomainDataset::from_samples(k, s, samples, Provenance::Pcap)?;
    save_dataset(path, &ds)?;
    writeln!(
        out,
        "packets {} accepted {} | skipped: non-ip {} ipv6 {} vlan {} non-tcp/udp {} fragments {} | malformed {}",
        totals.packets,
        totals.accepted,
        totals.non_ip,
        totals.ipv6,
        totals.vlan,
        totals.non_tcp_udp,
        totals.fragments,
        totals.malformed
    )
    .map_err(&w)?;
    print_counts(&ds, out)
}

/// Summary written next to a single-run checkpoint.
#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub holdout: Option<usize>,
    pub status: ValleyStatus,
    pub fallback: bool,
    pub converge_epoch: Option<usize>,
    pub threshold: Option<f64>,
    pub overfit_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
    pub merged_epochs: Vec<usize>,
    pub best_epoch: usize,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub test_accuracy: f64,
    pub test_weighted_f1: f64,
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_record(w: &mut impl Write, path: &Path, rec: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, rec).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(io_err(path))
}

pub fn cmd_train(
    cfg: &RunConfig,
    ds: &DomainDataset,
    holdout: Option<usize>,
    path: &Path,
    diag_path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let seed = cfg.seeds[0];
    let (train_refs, val_refs, test_refs): (Vec<SampleRef>, Vec<SampleRef>, Vec<SampleRef>) = match holdout {
        Some(d) => {
            if d >= ds.num_domains() {
                return Err(Error::InvalidArgument(format!(
                    "--holdout {d} but the dataset has {} domains",
                    ds.num_domains()
                )));
            }
            let plan = make_cross_domain_folds(ds, seed)?;
            let fold = plan.folds.into_iter().nth(d).expect("one fold per domain");
            let test = fold.test(ds);
            (fold.train, fold.val, test)
        }
        None => {
            let s = make_iid_split(ds, seed)?;
            (s.train, s.val, s.test)
        }
    };
    let normalized = normalize_dataset(ds);
    let gather = |refs: &[SampleRef]| refs.iter().map(|&(d, i)| normalized[d][i].clone()).collect::<Vec<_>>();
    let init = init_model(&model_config(cfg, ds.num_classes, seed))?;
    let trajectory = Trajectory::of(cfg.mode);
    let mut diag = jsonl_writer(diag_path)?;
    let outcome: TrainingOutcome = train_trajectory(
        cfg,
        init,
        trajectory,
        crate::data::batches::mix_seed(&[seed, holdout.map_or(u64::MAX, |d| d as u64)]),
        gather(&train_refs),
        gather(&val_refs),
        &mut |r| {
            write_record(
                &mut diag,
                diag_path,
                &DiagnosticRecord {
                    seed,
                    test_domain: holdout,
                    trajectory,
                    epoch: r.clone(),
                },
            )
        },
    )?;
    diag.flush().map_err(io_err(diag_path))?;
    let (params, fallback) = outcome.select(selection(cfg.mode));
    save_params(path, params)?;

    let test = gather(&test_refs);
    let (test_accuracy, test_weighted_f1) = if test.is_empty() {
        (0.0, 0.0)
    } else {
        let ev = evaluate(params, &test)?;
        let m = compute_metrics(&ev.predictions, &ev.labels, ds.num_classes)?;
        (m.accuracy, m.weighted_f1)
    };
    let summary = TrainSummary {
        mode: cfg.mode,
        holdout,
        status: outcome.status,
        fallback,
        converge_epoch: outcome.converge_epoch,
        threshold: outcome.threshold,
        overfit_epoch: outcome.overfit_epoch,
        stop_epoch: outcome.stop_epoch,
        merged_epochs: outcome.merged_epochs.clone(),
        best_epoch: outcome.best_epoch,
        val_loss: outcome.trace.0.clone(),
        val_accuracy: outcome.val_accuracy.clone(),
        test_accuracy,
        test_weighted_f1,
    };
    let summary_path = sibling(path, "summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(io_err(&summary_path))?;
    let w = io_err(path);
    writeln!(
        out,
        "mode {} | epochs {} | t_s {} | stop {} | merged {} checkpoints{}",
        cfg.mode,
        outcome.epochs_run(),
        outcome.converge_epoch.map_or("-".into(), |e| e.to_string()),
        outcome.stop_epoch.map_or("-".into(), |e| e.to_string()),
        outcome.merged_epochs.len(),
        if fallback { " (no valley: best-accuracy fallback)" } else { "" }
    )
    .map_err(&w)?;
    writeln!(out, "test accuracy {:.4}, weighted F1 {:.4}", test_accuracy, test_weighted_f1).map_err(&w)?;
    writeln!(out, "checkpoint {}", path.display()).map_err(&w)?;
    Ok(())
}

pub fn cmd_xdomain(
    cfg: &RunConfig,
    ds: &DomainDataset,
    path: &Path,
    diag_path: &Path,
    workers: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let mut diag = jsonl_writer(diag_path)?;
    let report = run_experiment(ds, cfg, workers, &mut |r| write_record(&mut diag, diag_path, r))?;
    diag.flush().map_err(io_err(diag_path))?;
    std::fs::write(path, report.to_json()).map_err(io_err(path))?;
    out.write_all(render_report(&report).as_bytes()).map_err(io_err(path))
}

pub fn cmd_report(path: &Path, out: &mut dyn Write) -> Result<()> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let report = EvalReport::from_json(&text)?;
    out.write_all(render_report(&report).as_bytes()).map_err(io_err(path))
}
