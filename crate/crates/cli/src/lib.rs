//! Experiment runner: command-line parsing, Monte Carlo execution and
//! report files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use mtt_core::simgen::{run_monte_carlo, RunReport, SimError};
use mtt_core::{validate_config, ScenarioConfig, ScenarioId, TrackerKind};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "mtt", version, about = "Multitarget tracking Monte Carlo workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo batch and write the metric curves.
    Run(RunArgs),
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Scenario: s1, s2, s3, s4, s4-7, s4-8, s4-9 or custom.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated tracker names.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub trackers: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub runs: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// JSON configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hand the true target appearances to the trackers.
    #[arg(long)]
    pub known_births: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Io { .. } => 2,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::NoRuns => CliError::Config(e.to_string()),
            SimError::ThreadPool(_) => CliError::Runtime(e.to_string()),
        }
    }
}

/// A file written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

pub fn parse_trackers(names: &[String]) -> Result<Vec<TrackerKind>, CliError> {
    let mut out = Vec::new();
    for name in names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()) {
        let kind: TrackerKind = name.parse().map_err(CliError::Config)?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    Ok(out)
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = &args.scenario {
        let id: ScenarioId = s.parse().map_err(CliError::Config)?;
        cfg.scenario = Some(id);
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if args.known_births {
        cfg.known_births = Some(true);
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str, manifest: &mut Vec<ManifestEntry>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
    manifest.push(ManifestEntry {
        name: name.to_string(),
        sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        bytes: contents.len(),
    });
    Ok(())
}

fn dat_value(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NaN".into())
}

/// Whitespace-separated columns for gnuplot; undefined values are `NaN`.
fn dat_file(title: &str, columns: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = format!("# {title}\n# {}\n", columns.join(" "));
    for row in rows {
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Writes the metric CSV, the runtime summary, plot data files and a
/// manifest with content hashes. Without trackers only the summary is
/// written.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let mut manifest = Vec::new();
    let summary = serde_json::to_string_pretty(&report.summary_json()).expect("summary is valid JSON") + "\n";
    write(dir, "runtime.json", &summary, &mut manifest)?;
    if !report.trackers.is_empty() {
        write(dir, "metrics.csv", &report.to_csv(), &mut manifest)?;
        let names: Vec<String> = report.trackers.iter().map(|c| c.kind.name().to_string()).collect();
        let steps = 0..report.steps;

        let mut cols = vec!["time".to_string(), "truth".into()];
        cols.extend(names.iter().cloned());
        let separation =
            |title: &str, truth: &[Option<f64>], pick: fn(&mtt_core::simgen::TrackerCurves) -> &Vec<Option<f64>>| {
                dat_file(
                    title,
                    &cols,
                    steps.clone().map(|k| {
                        let mut row = vec![(k + 1).to_string(), dat_value(truth[k])];
                        row.extend(report.trackers.iter().map(|c| dat_value(pick(c)[k])));
                        row
                    }),
                )
            };
        write(
            dir,
            "d_tracks.dat",
            &separation("D-Tracks [m]", &report.truth_d_tracks, |c| &c.d_tracks),
            &mut manifest,
        )?;
        write(
            dir,
            "d_center.dat",
            &separation("D-Center [m]", &report.truth_d_center, |c| &c.d_center),
            &mut manifest,
        )?;

        let mut cols = vec!["time".to_string()];
        cols.extend(names.iter().cloned());
        let gospa = dat_file(
            "mean GOSPA",
            &cols,
            steps.clone().map(|k| {
                let mut row = vec![(k + 1).to_string()];
                row.extend(report.trackers.iter().map(|c| c.gospa_total[k].to_string()));
                row
            }),
        );
        write(dir, "gospa.dat", &gospa, &mut manifest)?;

        let mut cols = vec!["time".to_string()];
        for n in &names {
            cols.extend([format!("{n}_loc"), format!("{n}_missed"), format!("{n}_false")]);
        }
        let components = dat_file(
            "mean GOSPA components",
            &cols,
            steps.map(|k| {
                let mut row = vec![(k + 1).to_string()];
                for c in &report.trackers {
                    row.extend([
                        c.gospa_loc[k].to_string(),
                        c.gospa_missed[k].to_string(),
                        c.gospa_false[k].to_string(),
                    ]);
                }
                row
            }),
        );
        write(dir, "gospa_components.dat", &components, &mut manifest)?;
    }
    let listing: Vec<serde_json::Value> =
        manifest.iter().map(|e| serde_json::json!({"file": e.name, "sha256": e.sha256, "bytes": e.bytes})).collect();
    let text =
        serde_json::to_string_pretty(&serde_json::json!({ "files": listing })).expect("manifest is valid JSON") + "\n";
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;
    Ok(manifest)
}

/// Validates the invocation, runs the batch and writes the report. Runs in
/// which a tracker failed are excluded from its averages; the report is
/// still written and the failure is returned as a runtime error.
pub fn run_experiment(args: &RunArgs) -> Result<(RunReport, Vec<ManifestEntry>), CliError> {
    let trackers = parse_trackers(&args.trackers)?;
    if args.runs == 0 {
        return Err(CliError::Config("runs must be at least 1".into()));
    }
    let cfg = validate_config(&load_config(args)?).map_err(|e| CliError::Config(e.to_string()))?;
    info!("{} with {} runs, seed {}", cfg.scenario, args.runs, cfg.seed);
    let report = run_monte_carlo(&cfg, &trackers, args.runs)?;
    let manifest = emit_report(&report, &args.out)?;
    let failed: Vec<String> = report
        .trackers
        .iter()
        .filter(|c| !c.failures.is_empty())
        .map(|c| format!("{} failed on {} run(s)", c.kind, c.failures.len()))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Runtime(failed.join("; ")));
    }
    Ok((report, manifest))
}
