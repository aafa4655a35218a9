use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use promptbench::cache::RunMode;
use promptbench::dataset::load_manifest;
use promptbench::harness::{
    consistency_check, emit_report, export_failures, run, write_outputs, Cell, ClaimFile, ReportFormat, RunConfig,
    RunContext, RunReport,
};
use promptbench::metrics::format_pp;

#[derive(Parser)]
#[command(name = "promptbench", version, about = "Prompt-robustness benchmark for language-conditioned detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the full condition grid and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's mode: live, cached or replay.
        #[arg(long)]
        mode: Option<RunMode>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-render a finished run's report in other formats.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "csv,json,md")]
        format: String,
    },
    /// Check a run's gains against a claim file; exits 1 if any claim fails.
    Check {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        claims: PathBuf,
    },
    /// Render every target whose IoU falls below the threshold.
    Failures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        /// Defaults to `<run>/failures`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn cmd_run(config: PathBuf, mode: Option<RunMode>, out: Option<PathBuf>, workers: Option<usize>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&config)?;
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if let Some(out) = out {
        cfg.output_dir = std::path::absolute(&out).unwrap_or(out);
    }
    if let Some(workers) = workers {
        cfg.workers = workers;
    }
    let outcome = run(&cfg)?;
    let out_dir = cfg.output_path();
    for path in write_outputs(&outcome, &cfg, &out_dir)? {
        println!("wrote {}", path.display());
    }
    let meta = &outcome.report.metadata;
    println!(
        "{} cells, {} gaps; {} VLM requests, {} network calls, cache hit rate {}%",
        outcome.report.cells.len(),
        outcome.report.gaps().count(),
        meta.vlm_requests,
        meta.vlm_network_calls,
        format_pp(100.0 * meta.cache_hit_rate)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(run_dir: PathBuf, format: String) -> Result<ExitCode> {
    let report = RunReport::load_dir(&run_dir)?;
    let formats = ReportFormat::parse_list(&format)?;
    for path in emit_report(&report, &formats, &run_dir)? {
        println!("wrote {}", path.display());
    }
    for cell in &report.cells {
        if let Cell::Gap(g) = cell {
            eprintln!("gap: {}: {}", cell.key(), g.error);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(run_dir: PathBuf, claims: PathBuf) -> Result<ExitCode> {
    let report = RunReport::load_dir(&run_dir)?;
    let claims = ClaimFile::load(&claims)?;
    let summary = consistency_check(&report, &claims);
    let text = summary.render();
    let path = run_dir.join("claims.txt");
    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    print!("{text}");
    Ok(if summary.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_failures(run_dir: PathBuf, threshold: f64, out: Option<PathBuf>) -> Result<ExitCode> {
    if !(0.0..=1.0).contains(&threshold) {
        bail!("--iou-threshold must lie in [0, 1]");
    }
    let report = RunReport::load_dir(&run_dir)?;
    let context = RunContext::load_dir(&run_dir)?;
    let manifest_dir = context.manifest.parent().map(PathBuf::from).unwrap_or_default();
    let images: BTreeMap<String, PathBuf> = load_manifest(&context.manifest)?
        .into_iter()
        .map(|img| {
            let path = img.resolve_path(&manifest_dir);
            (img.image_id, path)
        })
        .collect();
    let out_dir = out.unwrap_or_else(|| run_dir.join("failures"));
    let cases = export_failures(&report, threshold, &images, &out_dir)?;
    println!("{} failure cases written to {}", cases.len(), out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            mode,
            out,
            workers,
        } => cmd_run(config, mode, out, workers),
        Command::Report { run, format } => cmd_report(run, format),
        Command::Check { run, claims } => cmd_check(run, claims),
        Command::Failures {
            run,
            iou_threshold,
            out,
        } => cmd_failures(run, iou_threshold, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
