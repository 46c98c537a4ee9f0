//! End-to-end placement experiments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::gradient::{ascend, AscentConfig, Objective};
use crate::metrics::{compare_reports, evaluate_placement, evaluate_placement_on, LikelyRateMode, RateReport};
use crate::pdfvq::{pdfvq_run, IntegerPlan};
use crate::rng::{stream_rng, streams};
use crate::scenario::{
    drift_density_a, drift_density_b, full_covariance_density, three_cluster_density, MeanUnit, Point2, UserDensity,
};
use crate::tsvq::tsvq_run;
use crate::vq::{lloyd_best, nearest_neighbor_partition, LloydConfig, Placement};

/// Pathloss constant used by the bundled experiment presets. It puts the
/// median SNR of a user 100 m from a single AP near 0 dB at 30 dB transmit power.
pub const PRESET_CONSTANT_C: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VqMethod {
    Lloyd,
    Tsvq,
    Pdfvq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Refinement {
    #[default]
    None,
    MaxSum,
    MaxMin,
}

/// A base quantizer with an optional gradient refinement, written `lloyd`,
/// `tsvq+maxsum`, `pdfvq+maxmin` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub vq: VqMethod,
    pub refinement: Refinement,
}

impl Method {
    pub const fn new(vq: VqMethod, refinement: Refinement) -> Self {
        Method { vq, refinement }
    }

    pub const fn plain(vq: VqMethod) -> Self {
        Method::new(vq, Refinement::None)
    }
}

impl fmt::Display for VqMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VqMethod::Lloyd => "lloyd",
            VqMethod::Tsvq => "tsvq",
            VqMethod::Pdfvq => "pdfvq",
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.refinement {
            Refinement::None => write!(f, "{}", self.vq),
            Refinement::MaxSum => write!(f, "{}+maxsum", self.vq),
            Refinement::MaxMin => write!(f, "{}+maxmin", self.vq),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, refine) = match lower.split_once('+') {
            Some((b, r)) => (b, Some(r)),
            None => (lower.as_str(), None),
        };
        let vq = match base {
            "lloyd" => VqMethod::Lloyd,
            "tsvq" => VqMethod::Tsvq,
            "pdfvq" => VqMethod::Pdfvq,
            _ => return Err(Error::config("method", format!("unknown quantizer `{base}` (lloyd, tsvq, pdfvq)"))),
        };
        let refinement = match refine.map(|r| r.replace(['-', '_'], "")) {
            None => Refinement::None,
            Some(r) if r == "maxsum" => Refinement::MaxSum,
            Some(r) if r == "maxmin" => Refinement::MaxMin,
            Some(r) => return Err(Error::config("method", format!("unknown refinement `{r}` (maxsum, maxmin)"))),
        };
        Ok(Method { vq, refinement })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Gradient refinement settings shared by both objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentSettings {
    pub max_sum_step: f64,
    pub max_min_step: f64,
    pub max_iters: usize,
    pub tail_fraction: f64,
    /// Transmit power used inside the objective; the top of the power grid when absent.
    pub rho_r_db: Option<f64>,
}

impl Default for AscentSettings {
    fn default() -> Self {
        AscentSettings {
            max_sum_step: 3e2,
            max_min_step: 2.0,
            max_iters: 500,
            tail_fraction: 0.05,
            rho_r_db: None,
        }
    }
}

/// How PDFVQ ranks candidate integer level plans. Rate scores use Monte Carlo
/// evaluation at the top power on a validation stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairScore {
    /// `ln(sum rate) + ln(95%-likely rate)`: equal weight to relative changes of both.
    #[default]
    Balanced,
    SumRate,
    Likely95,
    /// Negative training-set MSE.
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairSettings {
    pub score: RepairScore,
    pub trials: usize,
}

impl Default for RepairSettings {
    fn default() -> Self {
        RepairSettings {
            score: RepairScore::Balanced,
            trials: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub density: UserDensity,
    /// Second density; experiment 4 places for `density` and evaluates on this one.
    #[serde(default)]
    pub alt_density: Option<UserDensity>,
    pub num_aps: usize,
    #[serde(default = "default_training")]
    pub num_users_placement: usize,
    #[serde(default = "default_eval_users")]
    pub num_users_eval: usize,
    #[serde(default = "default_powers")]
    pub power_grid_db: Vec<f64>,
    #[serde(default = "default_mc")]
    pub mc_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub lloyd: LloydConfig,
    #[serde(default)]
    pub ascent: AscentSettings,
    #[serde(default)]
    pub likely_rate_mode: LikelyRateMode,
    #[serde(default)]
    pub repair: RepairSettings,
}

fn default_training() -> usize {
    2000
}
fn default_eval_users() -> usize {
    4
}
fn default_powers() -> Vec<f64> {
    vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
}
fn default_mc() -> usize {
    1000
}
fn default_method() -> Method {
    Method::plain(VqMethod::Lloyd)
}

impl ExperimentConfig {
    /// Desk-scale defaults around `density` with `num_aps` APs.
    pub fn new(density: UserDensity, num_aps: usize) -> Self {
        ExperimentConfig {
            density,
            alt_density: None,
            num_aps,
            num_users_placement: default_training(),
            num_users_eval: default_eval_users(),
            power_grid_db: default_powers(),
            mc_iterations: default_mc(),
            seed: 0,
            method: default_method(),
            channel: ChannelParams {
                constant_c: PRESET_CONSTANT_C,
                ..ChannelParams::default()
            },
            lloyd: LloydConfig::default(),
            ascent: AscentSettings::default(),
            likely_rate_mode: LikelyRateMode::Pooled,
            repair: RepairSettings::default(),
        }
    }

    /// Three spherical clusters, 32 APs.
    pub fn experiment1() -> Self {
        Self::new(three_cluster_density(MeanUnit::Km), 32)
    }

    /// The second cluster stretched by a full covariance, 32 APs.
    pub fn experiment2() -> Self {
        Self::new(full_covariance_density(), 32)
    }

    /// Same density as experiment 2, with gradient refinement.
    pub fn experiment3() -> Self {
        Self::new(full_covariance_density(), 32)
    }

    /// Placement for one single-cluster density evaluated on a drifted one, 18 APs.
    pub fn experiment4() -> Self {
        ExperimentConfig {
            alt_density: Some(drift_density_b()),
            ..Self::new(drift_density_a(), 18)
        }
    }

    pub fn preset(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::experiment1()),
            2 => Some(Self::experiment2()),
            3 => Some(Self::experiment3()),
            4 => Some(Self::experiment4()),
            _ => None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.num_aps == 0 {
            return Err(Error::config("num_aps", "must be positive"));
        }
        if self.num_users_eval == 0 {
            return Err(Error::config("num_users_eval", "must be positive"));
        }
        if self.num_aps < self.num_users_eval {
            return Err(Error::TooFewAps {
                aps: self.num_aps,
                users: self.num_users_eval,
            });
        }
        for d in std::iter::once(&self.density).chain(self.alt_density.as_ref()) {
            if self.num_aps < d.num_components() {
                return Err(Error::config(
                    "num_aps",
                    format!("{} APs cannot cover {} clusters", self.num_aps, d.num_components()),
                ));
            }
        }
        if self.num_users_placement < self.num_aps {
            return Err(Error::config("num_users_placement", "must be at least num_aps"));
        }
        if self.power_grid_db.is_empty() || self.power_grid_db.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("power_grid_db", "must be a nonempty list of finite values"));
        }
        if self.mc_iterations == 0 {
            return Err(Error::config("mc_iterations", "must be positive"));
        }
        if self.lloyd.restarts == 0 {
            return Err(Error::config("lloyd.restarts", "must be positive"));
        }
        if !(self.lloyd.tol >= 0.0) {
            return Err(Error::config("lloyd.tol", "must be nonnegative"));
        }
        if self.repair.trials == 0 {
            return Err(Error::config("repair.trials", "must be positive"));
        }
        self.ascent_config(Objective::MaxSum).validate()?;
        self.ascent_config(Objective::MaxMin).validate()?;
        Ok(())
    }

    pub fn top_power_db(&self) -> f64 {
        self.power_grid_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn ascent_config(&self, objective: Objective) -> AscentConfig {
        AscentConfig {
            step_delta: match objective {
                Objective::MaxSum => self.ascent.max_sum_step,
                Objective::MaxMin => self.ascent.max_min_step,
            },
            max_iters: self.ascent.max_iters,
            objective,
            tail_fraction: self.ascent.tail_fraction,
            rho_r_db: self.ascent.rho_r_db.unwrap_or_else(|| self.top_power_db()),
        }
    }

    /// Training users for placement, drawn from the training stream of `seed`.
    pub fn training_users(&self, density: &UserDensity) -> Vec<Point2> {
        density.sample(self.num_users_placement, &mut stream_rng(self.seed, streams::TRAINING))
    }

    pub fn evaluate(&self, placement: &Placement, density: &UserDensity) -> Result<RateReport> {
        evaluate_placement(
            placement,
            density,
            &self.channel,
            self.num_users_eval,
            &self.power_grid_db,
            self.mc_iterations,
            self.seed,
            self.likely_rate_mode,
        )
    }
}

/// A placement together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementOutcome {
    pub method: Method,
    pub placement: Placement,
    /// Integer levels per cluster and eigen-direction, for PDFVQ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<IntegerPlan>,
    /// Training-set MSE of the final placement.
    pub training_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ascent: Option<AscentSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentSummary {
    pub start_objective: f64,
    pub best_objective: f64,
    pub iterations: usize,
    pub halvings: usize,
}

fn base_placement(
    cfg: &ExperimentConfig,
    density: &UserDensity,
    users: &[Point2],
    vq: VqMethod,
) -> Result<(Placement, Option<IntegerPlan>)> {
    match vq {
        VqMethod::Lloyd => Ok((lloyd_best(users, cfg.num_aps, &cfg.lloyd, cfg.seed)?.placement, None)),
        VqMethod::Tsvq => Ok((tsvq_run(users, cfg.num_aps)?, None)),
        VqMethod::Pdfvq => {
            let top = [cfg.top_power_db()];
            let score = |p: &Placement| {
                if cfg.repair.score == RepairScore::Mse {
                    return -nearest_neighbor_partition(users, p).mse;
                }
                let report = evaluate_placement_on(
                    p,
                    density,
                    &cfg.channel,
                    cfg.num_users_eval.min(p.len()),
                    &top,
                    cfg.repair.trials,
                    cfg.seed,
                    cfg.likely_rate_mode,
                    streams::VALIDATION,
                );
                match report {
                    Ok(r) => {
                        let row = &r.rows[0];
                        match cfg.repair.score {
                            RepairScore::Balanced => row.sum_rate.ln() + row.likely95_rate.ln(),
                            RepairScore::SumRate => row.sum_rate,
                            RepairScore::Likely95 => row.likely95_rate,
                            RepairScore::Mse => unreachable!(),
                        }
                    }
                    Err(_) => f64::NEG_INFINITY,
                }
            };
            let res = pdfvq_run(density, cfg.num_aps, score)?;
            Ok((res.placement, Some(res.levels)))
        }
    }
}

fn refine(
    cfg: &ExperimentConfig,
    users: &[Point2],
    placement: Placement,
    refinement: Refinement,
) -> Result<(Placement, Option<AscentSummary>)> {
    let objective = match refinement {
        Refinement::None => return Ok((placement, None)),
        Refinement::MaxSum => Objective::MaxSum,
        Refinement::MaxMin => Objective::MaxMin,
    };
    let res = ascend(&placement, users, &cfg.channel, &cfg.ascent_config(objective))?;
    let summary = AscentSummary {
        start_objective: res.trace[0],
        best_objective: res.best_objective,
        iterations: res.iterations,
        halvings: res.halvings,
    };
    Ok((res.placement, Some(summary)))
}

/// Places `cfg.num_aps` APs for `density` with `method`.
pub fn place(cfg: &ExperimentConfig, density: &UserDensity, method: Method) -> Result<PlacementOutcome> {
    let users = cfg.training_users(density);
    let (base, levels) = base_placement(cfg, density, &users, method.vq)?;
    let (placement, ascent) = refine(cfg, &users, base, method.refinement)?;
    Ok(PlacementOutcome {
        method,
        training_mse: nearest_neighbor_partition(&users, &placement).mse,
        placement,
        levels,
        ascent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub label: String,
    pub outcome: PlacementOutcome,
    pub report: RateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub method: String,
    pub baseline: String,
    pub rho_r_db: f64,
    pub sum_rate_pct: f64,
    pub likely95_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub experiment: u8,
    pub results: Vec<MethodResult>,
    pub improvements: Vec<ImprovementRow>,
}

impl ExperimentOutput {
    pub fn result(&self, label: &str) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.label == label)
    }

    /// Improvement of `method` over `baseline` at `rho_r_db`.
    pub fn improvement(&self, method: &str, baseline: &str, rho_r_db: f64) -> Option<&ImprovementRow> {
        self.improvements
            .iter()
            .find(|r| r.method == method && r.baseline == baseline && r.rho_r_db == rho_r_db)
    }

    /// CSV with columns `method,baseline,rho_r_db,sum_rate_pct,likely95_pct`.
    pub fn improvements_csv(&self) -> String {
        use crate::metrics::fmt_sig;
        let mut s = String::from("method,baseline,rho_r_db,sum_rate_pct,likely95_pct\n");
        for r in &self.improvements {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                r.baseline,
                fmt_sig(r.rho_r_db),
                fmt_sig(r.sum_rate_pct),
                fmt_sig(r.likely95_pct)
            ));
        }
        s
    }

    /// One CSV for all methods: `method,rho_r_db,sum_rate,likely95_rate,stderr_sum,stderr_95`.
    pub fn rates_csv(&self) -> String {
        use crate::metrics::fmt_sig;
        let mut s = String::from("method,rho_r_db,sum_rate,likely95_rate,stderr_sum,stderr_95\n");
        for r in &self.results {
            for row in &r.report.rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.label,
                    fmt_sig(row.rho_r_db),
                    fmt_sig(row.sum_rate),
                    fmt_sig(row.likely95_rate),
                    fmt_sig(row.stderr_sum),
                    fmt_sig(row.stderr_95)
                ));
            }
        }
        s
    }
}

fn improvement_rows(method: &str, new: &RateReport, baseline: &str, base: &RateReport) -> Result<Vec<ImprovementRow>> {
    Ok(compare_reports(new, base)?
        .into_iter()
        .map(|i| ImprovementRow {
            method: method.into(),
            baseline: baseline.into(),
            rho_r_db: i.rho_r_db,
            sum_rate_pct: i.sum_rate_pct,
            likely95_pct: i.likely95_pct,
        })
        .collect())
}

fn run_methods(cfg: &ExperimentConfig, methods: &[Method], experiment: u8) -> Result<ExperimentOutput> {
    let users = cfg.training_users(&cfg.density);
    let mut bases: Vec<(VqMethod, Placement, Option<IntegerPlan>)> = Vec::new();
    let mut results = Vec::new();
    for &method in methods {
        let (base, levels) = match bases.iter().find(|b| b.0 == method.vq) {
            Some((_, p, l)) => (p.clone(), l.clone()),
            None => {
                let (p, l) = base_placement(cfg, &cfg.density, &users, method.vq)?;
                bases.push((method.vq, p.clone(), l.clone()));
                (p, l)
            }
        };
        let (placement, ascent) = refine(cfg, &users, base, method.refinement)?;
        let report = cfg.evaluate(&placement, &cfg.density)?;
        results.push(MethodResult {
            label: method.to_string(),
            outcome: PlacementOutcome {
                method,
                training_mse: nearest_neighbor_partition(&users, &placement).mse,
                placement,
                levels,
                ascent,
            },
            report,
        });
    }
    let baseline = &results[0];
    let mut improvements = Vec::new();
    for r in &results[1..] {
        improvements.extend(improvement_rows(&r.label, &r.report, &baseline.label, &baseline.report)?);
    }
    Ok(ExperimentOutput {
        experiment,
        results,
        improvements,
    })
}

/// Lloyd, TSVQ and PDFVQ on `cfg.density`, compared against Lloyd.
pub fn run_vq_comparison(cfg: &ExperimentConfig, experiment: u8) -> Result<ExperimentOutput> {
    cfg.validate()?;
    use VqMethod::*;
    run_methods(cfg, &[Method::plain(Lloyd), Method::plain(Tsvq), Method::plain(Pdfvq)], experiment)
}

pub fn experiment1(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_vq_comparison(cfg, 1)
}

pub fn experiment2(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_vq_comparison(cfg, 2)
}

/// Every quantizer with and without each refinement, compared against plain Lloyd.
pub fn experiment3(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    use Refinement::*;
    use VqMethod::*;
    let mut methods = vec![Method::plain(Lloyd)];
    for r in [MaxSum, MaxMin] {
        for vq in [Lloyd, Tsvq, Pdfvq] {
            methods.push(Method::new(vq, r));
        }
    }
    methods.push(Method::plain(Tsvq));
    methods.push(Method::plain(Pdfvq));
    run_methods(cfg, &methods, 3)
}

pub const MATCHED_LABEL: &str = "pdfvq_matched";
pub const MISMATCHED_LABEL: &str = "pdfvq_mismatched";
pub const PRE_DRIFT_LABEL: &str = "pdfvq_pre_drift";

/// PDFVQ placed for `cfg.density` (mismatched) and for `cfg.alt_density`
/// (matched), both evaluated on `cfg.alt_density`, plus the mismatched
/// placement evaluated on its own density before the drift. The mismatched
/// placement is compared against both; negative improvements are losses.
pub fn experiment4(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let target = cfg
        .alt_density
        .as_ref()
        .ok_or_else(|| Error::config("alt_density", "experiment 4 needs a second density"))?;
    let method = Method::plain(VqMethod::Pdfvq);
    let matched = place(cfg, target, method)?;
    let mismatched = place(cfg, &cfg.density, method)?;
    let matched_report = cfg.evaluate(&matched.placement, target)?;
    let mismatched_report = cfg.evaluate(&mismatched.placement, target)?;
    let pre_drift_report = cfg.evaluate(&mismatched.placement, &cfg.density)?;
    let mut improvements = improvement_rows(MISMATCHED_LABEL, &mismatched_report, MATCHED_LABEL, &matched_report)?;
    improvements.extend(improvement_rows(
        MISMATCHED_LABEL,
        &mismatched_report,
        PRE_DRIFT_LABEL,
        &pre_drift_report,
    )?);
    Ok(ExperimentOutput {
        experiment: 4,
        results: vec![
            MethodResult {
                label: MATCHED_LABEL.into(),
                outcome: matched,
                report: matched_report,
            },
            MethodResult {
                label: MISMATCHED_LABEL.into(),
                outcome: mismatched.clone(),
                report: mismatched_report,
            },
            MethodResult {
                label: PRE_DRIFT_LABEL.into(),
                outcome: mismatched,
                report: pre_drift_report,
            },
        ],
        improvements,
    })
}

pub fn run_experiment(n: u8, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match n {
        1 => experiment1(cfg),
        2 => experiment2(cfg),
        3 => experiment3(cfg),
        4 => experiment4(cfg),
        _ => Err(Error::config("experiment", format!("no experiment {n} (1 to 4)"))),
    }
}
