//! Command-line runner: loads a JSON config, runs placement, refinement and
//! evaluation, and writes JSON and CSV artifacts into an output directory.
//!
//! Every JSON artifact except `timings.json` is a pure function of the
//! effective config and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cfvq::examples1d::{run_all, OnedResults};
use cfvq::experiment::{place, run_experiment, ExperimentOutput, PlacementOutcome};
use cfvq::metrics::{compare_reports, fmt_sig, Improvement};
use cfvq::vq::LloydConfig;
use cfvq::{ExperimentConfig, Method, RateReport};

#[derive(Debug, Parser)]
#[command(name = "cfvq", version, about = "AP placement for cell-free massive MIMO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Place APs for the configured density.
    Place(PlaceArgs),
    /// Monte Carlo rates of a placement file, or of a fresh placement.
    Evaluate(EvaluateArgs),
    /// Lloyd, TSVQ and PDFVQ on three spherical clusters.
    Experiment1(RunArgs),
    /// Lloyd, TSVQ and PDFVQ on full-covariance clusters.
    Experiment2(RunArgs),
    /// Max-sum and max-min gradient refinement of every quantizer.
    Experiment3(RunArgs),
    /// PDFVQ under a drifting user density.
    Experiment4(RunArgs),
    /// One-dimensional colocated versus distributed study.
    Oned(OnedArgs),
    /// Improvement ratios between two rate reports.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment config; experiment subcommands fall back to their preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of Monte Carlo trials.
    #[arg(long = "mc-iters")]
    pub mc_iters: Option<usize>,
    /// Overrides the Lloyd restart count.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PlaceArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Placement method such as `lloyd`, `tsvq+maxsum` or `pdfvq+maxmin`.
    #[arg(long)]
    pub method: Option<Method>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A `placement.json` written by `place`; placed from the config when absent.
    pub placement: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub method: Option<Method>,
}

#[derive(Debug, Args)]
pub struct OnedArgs {
    /// JSON with optional `seed`, `num_samples` and `lloyd` fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of sampled users per density.
    #[arg(long = "mc-iters")]
    pub mc_iters: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `rates.json` of the method under test.
    pub new: PathBuf,
    /// `rates.json` of the baseline.
    pub baseline: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quiet: bool,
}

/// Settings of the `oned` subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnedRunConfig {
    pub seed: u64,
    /// Users sampled per density; the preset count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<usize>,
    pub lloyd: LloydConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective config (`config.json`), or of the compared reports.
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub outputs: Vec<String>,
    /// Wall-clock timings live in this file so that the manifest stays reproducible.
    pub timings: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPlacement {
    pub label: String,
    #[serde(flatten)]
    pub outcome: PlacementOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlacements {
    pub experiment: u8,
    pub placements: Vec<LabeledPlacement>,
}

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

struct Output {
    dir: PathBuf,
    written: Vec<String>,
    stages: Vec<StageTiming>,
    start: Instant,
    quiet: bool,
}

impl Output {
    fn create(dir: &Path, quiet: bool) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            stages: Vec::new(),
            start: Instant::now(),
            quiet,
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.stages.push(StageTiming {
            stage: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn finish(mut self, command: &str, hash: String, seed: Option<u64>, method: Option<String>) -> Result<RunManifest> {
        let timings = Timings {
            stages: std::mem::take(&mut self.stages),
            total_seconds: self.start.elapsed().as_secs_f64(),
        };
        self.write_json(TIMINGS, &timings)?;
        let manifest = RunManifest {
            command: command.to_string(),
            config_sha256: hash,
            seed,
            method,
            outputs: self.written.clone(),
            timings: TIMINGS.to_string(),
        };
        self.write_json(MANIFEST, &manifest)?;
        self.say(format!("wrote {} files to {}", self.written.len(), self.dir.display()));
        Ok(manifest)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads the config (or `fallback`), applies command-line overrides and validates.
pub fn load_config(args: &RunArgs, fallback: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, fallback) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        (None, Some(cfg)) => cfg,
        (None, None) => bail!("--config is required for this subcommand"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.mc_iters {
        cfg.mc_iterations = n;
    }
    if let Some(n) = args.restarts {
        cfg.lloyd.restarts = n;
    }
    cfg.validate().context("invalid config after command-line overrides")?;
    Ok(cfg)
}

fn config_json(cfg: &ExperimentConfig) -> Result<String> {
    let mut s = serde_json::to_string_pretty(cfg)?;
    s.push('\n');
    Ok(s)
}

pub fn run(cli: Cli) -> Result<RunManifest> {
    match cli.command {
        Command::Place(a) => cmd_place(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment1(a) => cmd_experiment(1, a),
        Command::Experiment2(a) => cmd_experiment(2, a),
        Command::Experiment3(a) => cmd_experiment(3, a),
        Command::Experiment4(a) => cmd_experiment(4, a),
        Command::Oned(a) => cmd_oned(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn cmd_place(a: PlaceArgs) -> Result<RunManifest> {
    let mut cfg = load_config(&a.run, None)?;
    if let Some(m) = a.method {
        cfg.method = m;
    }
    let mut out = Output::create(&a.run.out, a.run.quiet)?;
    let text = config_json(&cfg)?;
    out.write("config.json", &text)?;
    let outcome = out.stage("place", || Ok(place(&cfg, &cfg.density, cfg.method)?))?;
    out.write_json("placement.json", &outcome)?;
    out.say(format!("{}: {} APs, training MSE {}", cfg.method, outcome.placement.len(), fmt_sig(outcome.training_mse)));
    out.finish("place", sha256_hex(text.as_bytes()), Some(cfg.seed), Some(cfg.method.to_string()))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<RunManifest> {
    let mut cfg = load_config(&a.run, None)?;
    if let Some(m) = a.method {
        cfg.method = m;
    }
    let mut out = Output::create(&a.run.out, a.run.quiet)?;
    let text = config_json(&cfg)?;
    out.write("config.json", &text)?;
    let outcome: PlacementOutcome = match &a.placement {
        Some(path) => read_json(path)?,
        None => {
            let outcome = out.stage("place", || Ok(place(&cfg, &cfg.density, cfg.method)?))?;
            out.write_json("placement.json", &outcome)?;
            outcome
        }
    };
    if outcome.placement.len() < cfg.num_users_eval {
        bail!(
            "placement has {} APs but {} users are served per trial",
            outcome.placement.len(),
            cfg.num_users_eval
        );
    }
    let report = out.stage("evaluate", || Ok(cfg.evaluate(&outcome.placement, &cfg.density)?))?;
    out.write("rates.csv", &report.to_csv())?;
    out.write_json("rates.json", &report)?;
    for row in &report.rows {
        out.say(format!(
            "{:>6} dB  sum {}  95%-likely {}",
            row.rho_r_db,
            fmt_sig(row.sum_rate),
            fmt_sig(row.likely95_rate)
        ));
    }
    out.finish("evaluate", sha256_hex(text.as_bytes()), Some(cfg.seed), Some(outcome.method.to_string()))
}

fn cmd_experiment(n: u8, a: RunArgs) -> Result<RunManifest> {
    let cfg = load_config(&a, ExperimentConfig::preset(n))?;
    let mut out = Output::create(&a.out, a.quiet)?;
    let text = config_json(&cfg)?;
    out.write("config.json", &text)?;
    let result: ExperimentOutput = out.stage("experiment", || Ok(run_experiment(n, &cfg)?))?;
    let placements = ExperimentPlacements {
        experiment: n,
        placements: result
            .results
            .iter()
            .map(|r| LabeledPlacement {
                label: r.label.clone(),
                outcome: r.outcome.clone(),
            })
            .collect(),
    };
    out.write_json("placement.json", &placements)?;
    out.write("rates.csv", &result.rates_csv())?;
    out.write_json("rates.json", &result)?;
    out.write("improvements.csv", &result.improvements_csv())?;
    let top = cfg.top_power_db();
    for r in result.improvements.iter().filter(|r| r.rho_r_db == top) {
        out.say(format!(
            "{:<18} vs {:<16} sum {:>+8.2}%  95%-likely {:>+8.2}%",
            r.method, r.baseline, r.sum_rate_pct, r.likely95_pct
        ));
    }
    out.finish(&format!("experiment{n}"), sha256_hex(text.as_bytes()), Some(cfg.seed), None)
}

fn cmd_oned(a: OnedArgs) -> Result<RunManifest> {
    let mut cfg: OnedRunConfig = match &a.config {
        Some(path) => read_json(path).context("invalid 1-D config")?,
        None => OnedRunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.mc_iters {
        cfg.num_samples = Some(n);
    }
    if let Some(n) = a.restarts {
        cfg.lloyd.restarts = n;
    }
    if cfg.lloyd.restarts == 0 {
        bail!("invalid 1-D config: lloyd.restarts must be positive");
    }
    if cfg.num_samples.is_some_and(|n| n < 20) {
        bail!("invalid 1-D config: num_samples must be at least 20");
    }
    let mut out = Output::create(&a.out, a.quiet)?;
    let mut text = serde_json::to_string_pretty(&cfg)?;
    text.push('\n');
    out.write("config.json", &text)?;
    let results: OnedResults = out.stage("oned", || Ok(run_all(cfg.seed, &cfg.lloyd, cfg.num_samples)?))?;
    out.write_json("oned.json", &results)?;
    for (name, csv) in results.figures() {
        out.write(&name, &csv)?;
    }
    for (label, study) in [("conf1", &results.conf1), ("conf2", &results.conf2), ("unimodal", &results.unimodal)] {
        for p in &study.placements {
            out.say(format!(
                "{label:<9} {:<28} sum SNR {}  sum rate {}  95%-likely {}",
                p.label,
                fmt_sig(p.metrics.sum_snr),
                fmt_sig(p.metrics.sum_rate),
                fmt_sig(p.metrics.likely95)
            ));
        }
    }
    out.finish("oned", sha256_hex(text.as_bytes()), Some(cfg.seed), None)
}

/// CSV with columns `rho_r_db,sum_rate_pct,likely95_pct`.
pub fn comparison_csv(rows: &[Improvement]) -> String {
    let mut s = String::from("rho_r_db,sum_rate_pct,likely95_pct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{}\n",
            fmt_sig(r.rho_r_db),
            fmt_sig(r.sum_rate_pct),
            fmt_sig(r.likely95_pct)
        ));
    }
    s
}

fn cmd_compare(a: CompareArgs) -> Result<RunManifest> {
    let new_bytes = fs::read(&a.new).with_context(|| format!("reading {}", a.new.display()))?;
    let base_bytes = fs::read(&a.baseline).with_context(|| format!("reading {}", a.baseline.display()))?;
    let new: RateReport = serde_json::from_slice(&new_bytes).with_context(|| format!("parsing {}", a.new.display()))?;
    let base: RateReport =
        serde_json::from_slice(&base_bytes).with_context(|| format!("parsing {}", a.baseline.display()))?;
    let rows = compare_reports(&new, &base)?;
    let mut out = Output::create(&a.out, a.quiet)?;
    out.write("improvements.csv", &comparison_csv(&rows))?;
    for r in &rows {
        out.say(format!(
            "{:>6} dB  sum {:>+8.2}%  95%-likely {:>+8.2}%",
            r.rho_r_db,
            r.sum_rate_pct,
            r.likely95_pct
        ));
    }
    let mut hashed = new_bytes;
    hashed.extend_from_slice(&base_bytes);
    out.finish("compare", sha256_hex(&hashed), None, None)
}
