//! `minn`: runs channel generation, gradient checks, training, evaluation,
//! power annealing and the conventional baseline from one configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use minn_core::channel::{pathloss_db, save_channel_set, ChannelSet};
use minn_core::config::{ExperimentConfig, Preset};
use minn_core::experiment::{
    anneal_runs, channel_pools, checkpoint_name, epoch_rows, evaluate_checkpoints, geometry_tag, load_images,
    run_baseline, train_baseline_system, train_variant, write_csv, write_json, AccuracySummary, EpochRow,
    RestartRun,
};
use minn_core::minn::{grad_check_suite, GradFault, MsKind};
use minn_core::Error;

#[derive(Parser)]
#[command(name = "minn", version, about = "Metasurface-integrated neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (JSON). Overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
    /// Replaces the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the training and test channel sets and write them as .chset files.
    GenChannels,
    /// Compare every analytic gradient block with central finite differences.
    GradCheck {
        /// Corrupt the surface gradient to confirm the check catches it.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train every configured variant over all restarts.
    Train,
    /// Evaluate the checkpoints of a previous `train` in the output directory.
    Eval,
    /// Train, then continue training while the transmit power steps down.
    Anneal,
    /// Run the compress-modulate-precode baseline over random channel draws.
    Baseline,
}

/// Exit status for a failure.
enum Failure {
    Config(String),
    Io(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Format { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(cli.preset),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    create_dir(&cli.out)?;
    write_json(&cli.out.join("config.json"), &cfg)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenChannels => gen_channels(&cfg, out),
        Command::GradCheck { inject_fault } => grad_check(&cfg, out, inject_fault),
        Command::Train => train(&cfg, out),
        Command::Eval => eval(&cfg, out),
        Command::Anneal => anneal(&cfg, out),
        Command::Baseline => baseline(&cfg, out),
    }
}

#[derive(Serialize)]
struct LinkPowerRow {
    set: String,
    link: &'static str,
    measured: f64,
    expected: f64,
    rel_error: f64,
}

fn gen_channels(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let kinds: BTreeSet<&str> = cfg.variants.iter().map(|v| geometry_tag(v.kind)).collect();
    let mut rows = Vec::new();
    for tag in kinds {
        let kind = if tag == "ris" { MsKind::Ris } else { MsKind::Sim };
        let pools = channel_pools(cfg, kind, cfg.geometry.tx_antennas)?;
        let geom = cfg.node_geometry(kind, cfg.geometry.tx_antennas);
        let params = cfg.fading(&geom)?;
        let distances = [geom.direct_distance(), geom.tx_ms_distance(), geom.ms_rx_distance()];
        for (split, set) in [("train", &pools.train), ("test", &pools.test)] {
            let path = out.join(format!("{tag}-{split}.chset"));
            save_channel_set(set, &path)?;
            rows.extend(link_power_rows(&format!("{tag}-{split}"), set, &distances, &params)?);
            let (n_r, n_t, n_m) = set.dims();
            println!(
                "{}: {} realizations, N_r={n_r} N_t={n_t} N_m={n_m}",
                path.display(),
                set.len()
            );
        }
    }
    for r in &rows {
        println!(
            "  {:<10} {:<6} mean power {:.4e} (analytic {:.4e}, rel. error {:.2}%)",
            r.set,
            r.link,
            r.measured,
            r.expected,
            100.0 * r.rel_error
        );
    }
    write_csv(&out.join("channel_summary.csv"), &rows)?;
    Ok(())
}

fn link_power_rows(
    set_name: &str,
    set: &ChannelSet,
    distances: &[f64; 3],
    params: &minn_core::channel::FadingParams,
) -> Result<Vec<LinkPowerRow>, Failure> {
    let measured = set.mean_link_power();
    let mut rows = Vec::new();
    for ((link, m), d) in ["direct", "tx-ms", "ms-rx"].into_iter().zip(measured).zip(distances) {
        let expected = 10f64.powf(-pathloss_db(*d, params)? / 10.0);
        rows.push(LinkPowerRow {
            set: set_name.to_string(),
            link,
            measured: m,
            expected,
            rel_error: (m - expected).abs() / expected,
        });
    }
    Ok(rows)
}

fn grad_check(cfg: &ExperimentConfig, out: &Path, inject_fault: bool) -> Result<(), Failure> {
    let fault = inject_fault.then_some(GradFault::FlipResponseSign);
    let report = grad_check_suite(cfg.seed, fault)?;
    for r in &report {
        println!(
            "{:<38} {:<16} {:>5} params  rel. error {:.3e}  {}",
            r.variant,
            r.block,
            r.params,
            r.rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    write_csv(&out.join("grad_check.csv"), &report)?;
    let failed: Vec<_> = report.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        println!("{} gradient blocks match finite differences", report.len());
        return Ok(());
    }
    let worst = failed
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .expect("non-empty");
    Err(Failure::Verification(format!(
        "{} of {} blocks exceed tolerance; worst {} / {} at {:.3e}",
        failed.len(),
        report.len(),
        worst.variant,
        worst.block,
        worst.rel_error
    )))
}

/// Trains all variants, saving checkpoints. Returns the runs per variant.
fn train_all(
    cfg: &ExperimentConfig,
    out: &Path,
    images: &minn_core::experiment::ImageData,
) -> Result<Vec<(Vec<RestartRun>, minn_core::experiment::ChannelPools)>, Failure> {
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut all = Vec::new();
    for &variant in &cfg.variants {
        let pools = channel_pools(cfg, variant.kind, cfg.geometry.tx_antennas)?;
        let runs = train_variant(cfg, variant, images, &pools)?;
        for r in &runs {
            r.trainer.model.save_checkpoint(&ckpt_dir.join(checkpoint_name(variant, r.restart)))?;
            println!(
                "{variant} restart {}: final test accuracy {:.4}",
                r.restart,
                r.final_accuracy()
            );
        }
        all.push((runs, pools));
    }
    Ok(all)
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let images = load_images(cfg)?;
    let all = train_all(cfg, out, &images)?;
    let mut rows: Vec<EpochRow> = Vec::new();
    let mut summaries = Vec::new();
    for (runs, _) in &all {
        for r in runs {
            rows.extend(epoch_rows(r, &r.history));
        }
        let accs: Vec<f64> = runs.iter().map(RestartRun::final_accuracy).collect();
        summaries.push(AccuracySummary::new(runs[0].variant.to_string(), &accs)?);
    }
    print_summaries(&summaries);
    write_csv(&out.join("train_metrics.csv"), &rows)?;
    write_json(&out.join("train_summary.json"), &summaries)?;
    Ok(())
}

fn eval(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let images = load_images(cfg)?;
    let rows = evaluate_checkpoints(cfg, &out.join("checkpoints"), &images)?;
    let mut summaries = Vec::new();
    for &variant in &cfg.variants {
        let name = variant.to_string();
        let accs: Vec<f64> = rows.iter().filter(|r| r.variant == name).map(|r| r.test_acc).collect();
        summaries.push(AccuracySummary::new(name, &accs)?);
    }
    print_summaries(&summaries);
    write_csv(&out.join("eval_metrics.csv"), &rows)?;
    write_json(&out.join("eval_summary.json"), &summaries)?;
    Ok(())
}

#[derive(Serialize)]
struct AnnealSummary {
    start: AccuracySummary,
    end: AccuracySummary,
    start_dbm: f64,
    end_dbm: f64,
}

fn anneal(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let images = load_images(cfg)?;
    let all = train_all(cfg, out, &images)?;
    let mut rows: Vec<EpochRow> = Vec::new();
    let mut summaries = Vec::new();
    for (runs, pools) in all {
        let name = runs[0].variant.to_string();
        let start: Vec<f64> = runs.iter().map(RestartRun::final_accuracy).collect();
        let continued = anneal_runs(cfg, runs, &images, &pools)?;
        let mut end = Vec::new();
        for (run, tail) in &continued {
            rows.extend(epoch_rows(run, &run.history));
            rows.extend(epoch_rows(run, tail));
            end.push(tail.last().map_or(run.final_accuracy(), |m| m.test_acc));
        }
        summaries.push(AnnealSummary {
            start: AccuracySummary::new(name.clone(), &start)?,
            end: AccuracySummary::new(name, &end)?,
            start_dbm: cfg.power_dbm,
            end_dbm: cfg.anneal.floor_dbm,
        });
    }
    for s in &summaries {
        println!(
            "{}: median accuracy {:.4} at {} dBm, {:.4} at {} dBm",
            s.start.variant, s.start.median, s.start_dbm, s.end.median, s.end_dbm
        );
    }
    write_csv(&out.join("anneal_metrics.csv"), &rows)?;
    write_json(&out.join("anneal_summary.json"), &summaries)?;
    Ok(())
}

fn baseline(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let images = load_images(cfg)?;
    let system = train_baseline_system(cfg, &images)?;
    let (rows, summary) = run_baseline(cfg, &system, &images, cfg.power_dbm)?;
    println!(
        "{}-PSK over {} streams: accuracy {:.4}, mean rate {:.2} bit/s/Hz, SER {:.4}",
        summary.psk_order, summary.streams, summary.accuracy, summary.mean_rate_bps_hz, summary.mean_ser
    );
    println!(
        "classifier on clean images {:.4}, autoencoder MSE {:.4}",
        summary.classifier_accuracy, summary.autoencoder_mse
    );
    write_csv(&out.join("baseline_metrics.csv"), &rows)?;
    write_json(&out.join("baseline_summary.json"), &summary)?;
    Ok(())
}

fn print_summaries(summaries: &[AccuracySummary]) {
    for s in summaries {
        println!(
            "{}: top {:.4}, median {:.4}, Q1 {:.4}, Q3 {:.4} over {} restarts",
            s.variant, s.top, s.median, s.q1, s.q3, s.restarts
        );
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))
}
