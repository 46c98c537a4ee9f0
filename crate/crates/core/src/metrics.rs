//! Monte Carlo rate evaluation of placements.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, draw_fading, large_scale_matrix, zf_inverse_diag, ChannelParams};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::scenario::{Point2, UserDensity};
use crate::vq::Placement;

/// Fading redraws tolerated for one trial before giving up.
pub const MAX_REDRAWS: usize = 8;
/// Batches used for the standard error of the 95%-likely rate.
pub const LIKELY_BATCHES: usize = 10;
/// Fading draws averaged per user position in [`LikelyRateMode::PerUser`].
pub const PER_USER_FADING_DRAWS: usize = 10;

/// How the 95%-likely rate is read off the rate samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelyRateMode {
    /// 5th percentile of all per-user per-trial rates.
    #[default]
    Pooled,
    /// 5th percentile of per-position rates averaged over fading first.
    PerUser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRates {
    pub rho_r_db: f64,
    pub sum_rate: f64,
    pub likely95_rate: f64,
    pub stderr_sum: f64,
    pub stderr_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<PowerRates>,
    pub num_users: usize,
    pub mc_iterations: usize,
    pub seed: u64,
    pub likely_rate_mode: LikelyRateMode,
    /// Per-user rate samples per power, trial-major.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl RateReport {
    pub fn row(&self, rho_r_db: f64) -> Option<&PowerRates> {
        self.rows.iter().find(|r| r.rho_r_db == rho_r_db)
    }

    pub fn top(&self) -> &PowerRates {
        self.rows.last().expect("report has at least one power")
    }

    /// CSV with columns `rho_r_db,sum_rate,likely95_rate,stderr_sum,stderr_95`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rho_r_db,sum_rate,likely95_rate,stderr_sum,stderr_95\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt_sig(r.rho_r_db),
                fmt_sig(r.sum_rate),
                fmt_sig(r.likely95_rate),
                fmt_sig(r.stderr_sum),
                fmt_sig(r.stderr_95)
            );
        }
        s
    }
}

/// Formats `x` with 9 significant digits in plain decimal notation, falling
/// back to exponent notation outside `[1e-6, 1e15)`. A rounding carry (9.999…
/// to 10.0) yields one extra digit.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if !(1e-6..1e15).contains(&a) {
        return format!("{x:.8e}");
    }
    let exp = a.log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Empirical quantile with linear interpolation: position `h = (n − 1) q`.
pub fn rate_percentile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "rate_percentile needs samples");
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_percentile(&v, q)
}

pub fn sorted_percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `100 (new − base) / base`.
pub fn improvement_ratio(new: f64, base: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::NonPositiveBaseline(base));
    }
    Ok(100.0 * (new - base) / base)
}

/// Sorts APs lexicographically so that evaluation ignores AP indexing.
fn canonical(placement: &Placement) -> Placement {
    let mut aps = placement.aps().to_vec();
    aps.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    Placement::new(aps)
}

struct Trial {
    /// `[(GᴴG)⁻¹]_kk` per user, one vector per fading draw.
    inv_diags: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    placement: &Placement,
    density: &UserDensity,
    params: &ChannelParams,
    k: usize,
    draws: usize,
    seed: u64,
    stream: u64,
) -> Result<Trial> {
    let mut rng = stream_rng(seed, stream);
    let users: Vec<Point2> = density.sample(k, &mut rng);
    let betas = large_scale_matrix(&users, placement, params, &mut rng);
    let mut inv_diags = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut attempt = 0;
        loop {
            match zf_inverse_diag(&draw_fading(&betas, &mut rng)) {
                Ok(d) => {
                    inv_diags.push(d);
                    break;
                }
                Err(Error::SingularGram) if attempt < MAX_REDRAWS => attempt += 1,
                Err(Error::SingularGram) => return Err(Error::DegenerateChannel(MAX_REDRAWS)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Trial { inv_diags })
}

fn std_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Monte Carlo ZF uplink rates of `placement` for `k` users drawn from `density`.
///
/// Every trial draws fresh user positions and fading from its own stream of
/// `seed`, so two placements evaluated with the same seed see the same users.
/// The placement is put in a canonical AP order first.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_placement(
    placement: &Placement,
    density: &UserDensity,
    params: &ChannelParams,
    k: usize,
    powers_db: &[f64],
    mc_iters: usize,
    seed: u64,
    mode: LikelyRateMode,
) -> Result<RateReport> {
    evaluate_placement_on(placement, density, params, k, powers_db, mc_iters, seed, mode, streams::EVALUATION)
}

/// [`evaluate_placement`] with trial `t` drawn from stream `stream_base + t`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_placement_on(
    placement: &Placement,
    density: &UserDensity,
    params: &ChannelParams,
    k: usize,
    powers_db: &[f64],
    mc_iters: usize,
    seed: u64,
    mode: LikelyRateMode,
    stream_base: u64,
) -> Result<RateReport> {
    params.validate()?;
    if placement.len() < k {
        return Err(Error::TooFewAps {
            aps: placement.len(),
            users: k,
        });
    }
    if k == 0 || mc_iters == 0 || powers_db.is_empty() {
        return Err(Error::config("evaluation", "needs users, trials and powers"));
    }
    let placement = canonical(placement);
    let draws = match mode {
        LikelyRateMode::Pooled => 1,
        LikelyRateMode::PerUser => PER_USER_FADING_DRAWS,
    };
    let trials: Vec<Trial> = (0..mc_iters)
        .into_par_iter()
        .map(|t| run_trial(&placement, density, params, k, draws, seed, stream_base + t as u64))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(powers_db.len());
    let mut samples = Vec::with_capacity(powers_db.len());
    for &db in powers_db {
        let rho = db_to_linear(db);
        let mut rates = Vec::with_capacity(mc_iters * k);
        let mut sums = Vec::with_capacity(mc_iters);
        for trial in &trials {
            let mut total = 0.0;
            for user in 0..k {
                let rate = trial
                    .inv_diags
                    .iter()
                    .map(|d| (rho / d[user]).ln_1p() / std::f64::consts::LN_2)
                    .sum::<f64>()
                    / draws as f64;
                total += rate;
                rates.push(rate);
            }
            sums.push(total);
        }
        let sum_rate = sums.iter().sum::<f64>() / mc_iters as f64;
        let mut sorted = rates.clone();
        sorted.sort_by(f64::total_cmp);
        let likely95_rate = sorted_percentile(&sorted, 0.05);
        let batch = mc_iters / LIKELY_BATCHES;
        let stderr_95 = if batch == 0 {
            0.0
        } else {
            let per_batch: Vec<f64> = rates
                .chunks(batch * k)
                .take(LIKELY_BATCHES)
                .map(|c| rate_percentile(c, 0.05))
                .collect();
            std_error(&per_batch)
        };
        rows.push(PowerRates {
            rho_r_db: db,
            sum_rate,
            likely95_rate,
            stderr_sum: std_error(&sums),
            stderr_95,
        });
        samples.push(rates);
    }
    Ok(RateReport {
        rows,
        num_users: k,
        mc_iterations: mc_iters,
        seed,
        likely_rate_mode: mode,
        samples,
    })
}

/// Improvement of `new` over `base` at every shared power, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub rho_r_db: f64,
    pub sum_rate_pct: f64,
    pub likely95_pct: f64,
}

pub fn compare_reports(new: &RateReport, base: &RateReport) -> Result<Vec<Improvement>> {
    base.rows
        .iter()
        .filter_map(|b| new.row(b.rho_r_db).map(|n| (n, b)))
        .map(|(n, b)| {
            Ok(Improvement {
                rho_r_db: b.rho_r_db,
                sum_rate_pct: improvement_ratio(n.sum_rate, b.sum_rate)?,
                likely95_pct: improvement_ratio(n.likely95_rate, b.likely95_rate)?,
            })
        })
        .collect()
}
