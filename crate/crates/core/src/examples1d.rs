//! One-dimensional study of colocated versus distributed placements.
//!
//! Users lie on a line with a Gaussian-mixture density, four APs serve them and
//! the SNR of a user at `p` is `ψ(p) = Σ_m 1 / ((p − q_m)² + ε)`. Sum SNR is
//! the exact expectation `E[ψ]`, computed by quadrature because with tiny `ε`
//! the sample mean is dominated by the single closest sample. Sum rate
//! `E[log₂(1 + ψ)]` and the 95%-likely rate are computed over a fixed user sample.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::fmt_sig;
use crate::rng::{stream_rng, streams};
use crate::scenario::Point2;
use crate::vq::{lloyd_best, LloydConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode1D {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config1D {
    pub modes: Vec<Mode1D>,
    #[serde(default = "default_num_aps")]
    pub num_aps: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
}

fn default_num_aps() -> usize {
    4
}
fn default_epsilon() -> f64 {
    1e-9
}
fn default_num_samples() -> usize {
    100_000
}

fn bimodal(w1: f64, m1: f64, m2: f64) -> Config1D {
    Config1D {
        modes: vec![
            Mode1D { weight: w1, mean: m1, sigma: 1.0 },
            Mode1D { weight: 1.0 - w1, mean: m2, sigma: 1.0 },
        ],
        num_aps: default_num_aps(),
        epsilon: default_epsilon(),
        num_samples: default_num_samples(),
    }
}

/// Equal modes at ±3, unit spread.
pub fn conf1() -> Config1D {
    bimodal(0.5, -3.0, 3.0)
}

/// Modes at −3 (weight 0.35) and 4 (weight 0.65), unit spread.
pub fn conf2() -> Config1D {
    bimodal(0.35, -3.0, 4.0)
}

pub fn unimodal() -> Config1D {
    Config1D {
        modes: vec![Mode1D { weight: 1.0, mean: 0.0, sigma: 1.0 }],
        ..conf1()
    }
}

impl Config1D {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::config("modes", "need at least one mode"));
        }
        let total: f64 = self.modes.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config("modes", format!("weights sum to {total}, not 1")));
        }
        for m in &self.modes {
            if !(m.weight > 0.0 && m.sigma > 0.0 && m.mean.is_finite() && m.sigma.is_finite()) {
                return Err(Error::config("modes", "weights and spreads must be positive and finite"));
            }
        }
        if self.num_aps == 0 {
            return Err(Error::config("num_aps", "must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if self.num_samples == 0 {
            return Err(Error::config("num_samples", "must be positive"));
        }
        Ok(())
    }

    pub fn pdf(&self, p: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let z = (p - m.mean) / m.sigma;
                m.weight * (-0.5 * z * z).exp() / (m.sigma * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    /// User sample drawn from the dedicated 1-D stream of `seed`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, streams::ONED);
        (0..self.num_samples)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut mode = self.modes[self.modes.len() - 1];
                for m in &self.modes {
                    acc += m.weight;
                    if u < acc {
                        mode = *m;
                        break;
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                mode.mean + mode.sigma * z
            })
            .collect()
    }

    pub fn mirrored(&self) -> Config1D {
        Config1D {
            modes: self.modes.iter().map(|m| Mode1D { mean: -m.mean, ..*m }).collect(),
            ..self.clone()
        }
    }

    /// Sweep grid with step 0.01 covering every mode ± 5σ.
    pub fn default_grid(&self) -> Vec<f64> {
        let lo = self.modes.iter().map(|m| m.mean - 5.0 * m.sigma).fold(f64::INFINITY, f64::min);
        let hi = self.modes.iter().map(|m| m.mean + 5.0 * m.sigma).fold(f64::NEG_INFINITY, f64::max);
        let n = ((hi - lo) / 0.01).round() as usize;
        (0..=n).map(|i| ((lo + i as f64 * 0.01) * 100.0).round() / 100.0).collect()
    }
}

pub fn snr_1d(p: f64, aps: &[f64], epsilon: f64) -> f64 {
    aps.iter().map(|&q| 1.0 / ((p - q) * (p - q) + epsilon)).sum()
}

/// `E[1 / ((P − q)² + ε)]` under the configured density.
///
/// Folding around `q` and subtracting `2 f(q)` leaves a smooth integrand; the
/// subtracted part integrates in closed form to `f(q) π / √ε`.
pub fn expected_inverse(config: &Config1D, q: f64) -> f64 {
    const INTERVALS: usize = 20_000;
    let eps = config.epsilon;
    let se = eps.sqrt();
    let fq = config.pdf(q);
    let t_max = config
        .modes
        .iter()
        .map(|m| (q - m.mean).abs() + 12.0 * m.sigma)
        .fold(0.0, f64::max);
    let h = t_max / INTERVALS as f64;
    let g = |t: f64| (config.pdf(q + t) + config.pdf(q - t) - 2.0 * fq) / (t * t + eps);
    let mut simpson = g(0.0) + g(t_max);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        simpson += w * g(i as f64 * h);
    }
    let smooth = simpson * h / 3.0;
    // Beyond t_max the folded density is negligible but −2 f(q) is not.
    let tail = -2.0 * fq * (std::f64::consts::FRAC_PI_2 - (t_max / se).atan()) / se;
    smooth + tail + fq * std::f64::consts::PI / se
}

/// Expected sum SNR `Σ_m E[1 / ((P − q_m)² + ε)]`. Coincident APs share one
/// quadrature.
pub fn expected_sum_snr(config: &Config1D, aps: &[f64]) -> f64 {
    let mut qs = aps.to_vec();
    qs.sort_by(f64::total_cmp);
    qs.chunk_by(|a, b| a == b)
        .map(|run| run.len() as f64 * expected_inverse(config, run[0]))
        .sum()
}

fn rates(samples: &[f64], aps: &[f64], epsilon: f64) -> Vec<f64> {
    samples
        .par_iter()
        .map(|&p| snr_1d(p, aps, epsilon).ln_1p() / std::f64::consts::LN_2)
        .collect()
}

fn mean_rate(rates: &[f64]) -> f64 {
    let chunks: Vec<f64> = rates.par_chunks(4096).map(|c| c.iter().sum::<f64>()).collect();
    chunks.iter().sum::<f64>() / rates.len() as f64
}

fn fifth_percentile(mut r: Vec<f64>) -> f64 {
    let h = (r.len() - 1) as f64 * 0.05;
    let lo = h.floor() as usize;
    let (_, &mut a, upper) = r.select_nth_unstable_by(lo, f64::total_cmp);
    let b = upper.iter().cloned().fold(f64::INFINITY, f64::min);
    if b.is_finite() {
        a + (h - lo as f64) * (b - a)
    } else {
        a
    }
}

/// Mean of `log₂(1 + ψ)` over the user sample.
pub fn sum_rate_1d(samples: &[f64], aps: &[f64], epsilon: f64) -> f64 {
    mean_rate(&rates(samples, aps, epsilon))
}

/// 5th percentile of the per-user rates with linear interpolation.
pub fn likely95_1d(samples: &[f64], aps: &[f64], epsilon: f64) -> f64 {
    fifth_percentile(rates(samples, aps, epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics1D {
    pub sum_snr: f64,
    pub sum_rate: f64,
    pub likely95: f64,
}

pub fn evaluate_1d(config: &Config1D, samples: &[f64], aps: &[f64]) -> Metrics1D {
    let r = rates(samples, aps, config.epsilon);
    Metrics1D {
        sum_snr: expected_sum_snr(config, aps),
        sum_rate: mean_rate(&r),
        likely95: fifth_percentile(r),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub q: f64,
    pub sum_snr: f64,
    pub sum_rate: f64,
    pub likely95: f64,
}

/// All APs colocated at each grid point.
pub fn colocated_sweep(config: &Config1D, samples: &[f64], grid: &[f64]) -> Vec<SweepPoint> {
    grid.par_iter()
        .map(|&q| {
            let aps = vec![q; config.num_aps];
            let m = evaluate_1d(config, samples, &aps);
            SweepPoint {
                q,
                sum_snr: m.sum_snr,
                sum_rate: m.sum_rate,
                likely95: m.likely95,
            }
        })
        .collect()
}

/// Indices of strict interior local maxima.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

/// `a` APs at the first mode's mean and the rest at the second's.
pub fn semi_distributed(config: &Config1D, a: usize) -> Result<Vec<f64>> {
    if config.modes.len() != 2 || a == 0 || a >= config.num_aps {
        return Err(Error::config("split", "needs two modes and 0 < a < num_aps"));
    }
    let mut aps = vec![config.modes[0].mean; a];
    aps.extend(std::iter::repeat_n(config.modes[1].mean, config.num_aps - a));
    Ok(aps)
}

pub fn semi_distributed_eval(config: &Config1D, samples: &[f64], a: usize) -> Result<Metrics1D> {
    Ok(evaluate_1d(config, samples, &semi_distributed(config, a)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective1D {
    SumSnr,
    SumRate,
    Likely95,
}

impl Objective1D {
    pub fn value(self, config: &Config1D, samples: &[f64], aps: &[f64]) -> f64 {
        match self {
            Objective1D::SumSnr => expected_sum_snr(config, aps),
            Objective1D::SumRate => sum_rate_1d(samples, aps, config.epsilon),
            Objective1D::Likely95 => likely95_1d(samples, aps, config.epsilon),
        }
    }
}

/// Two APs per mode at `center ± spread`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullyDistributed {
    pub centers: [f64; 2],
    pub spreads: [f64; 2],
    pub aps: Vec<f64>,
    pub objective: f64,
}

fn pair_aps(centers: [f64; 2], spreads: [f64; 2]) -> Vec<f64> {
    vec![
        centers[0] - spreads[0],
        centers[0] + spreads[0],
        centers[1] - spreads[1],
        centers[1] + spreads[1],
    ]
}

const SEARCH_ROUNDS: usize = 20;
const COARSE_STEP: f64 = 0.05;
const CENTER_RANGE: f64 = 1.0;
const REFINE_LEVELS: usize = 2;

#[derive(Clone, Copy)]
enum Coord {
    BothSpreads,
    Spread(usize),
    Center(usize),
}

/// Local search from the (2+2) placement, pulling the two APs of each mode
/// apart and sliding their midpoint.
///
/// Coordinate ascent over `(spread₁ = spread₂, spread₁, spread₂, center₁,
/// center₂)`. The joint direction moves off the plateau of the 95%-likely
/// objective, which stays flat while either mode keeps a colocated pair. Each
/// line search scans a coarse grid (step 0.05; spreads over `[0, 3σ]`, centers
/// within ±1 of the current value) and then refines around the best point twice
/// at a tenth of the step. The result is a local optimum.
pub fn fully_distributed_search(config: &Config1D, samples: &[f64], objective: Objective1D) -> Result<FullyDistributed> {
    if config.modes.len() != 2 || config.num_aps != 4 {
        return Err(Error::config("modes", "the fully distributed search needs two modes and four APs"));
    }
    let eval = |c: [f64; 2], s: [f64; 2]| objective.value(config, samples, &pair_aps(c, s));
    let mut centers = [config.modes[0].mean, config.modes[1].mean];
    let mut spreads = [0.0, 0.0];
    let mut best = eval(centers, spreads);
    let max_spread = |m: usize| 3.0 * config.modes[m].sigma;
    let coords = [
        Coord::BothSpreads,
        Coord::Spread(0),
        Coord::Spread(1),
        Coord::Center(0),
        Coord::Center(1),
    ];
    for _ in 0..SEARCH_ROUNDS {
        let before = best;
        for &coord in &coords {
            let apply = |x: f64| {
                let (mut c, mut s) = (centers, spreads);
                match coord {
                    Coord::BothSpreads => s = [x, x],
                    Coord::Spread(m) => s[m] = x,
                    Coord::Center(m) => c[m] = x,
                }
                (c, s)
            };
            let (current, lo, hi, is_spread) = match coord {
                Coord::BothSpreads => (spreads[0], 0.0, max_spread(0).min(max_spread(1)), true),
                Coord::Spread(m) => (spreads[m], 0.0, max_spread(m), true),
                Coord::Center(m) => (centers[m], centers[m] - CENTER_RANGE, centers[m] + CENTER_RANGE, false),
            };
            let mut step = COARSE_STEP;
            let n = ((hi - lo) / step).round() as usize;
            let mut points: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
            let mut arg = None;
            let mut val = best;
            for level in 0..=REFINE_LEVELS {
                let values: Vec<f64> = points
                    .par_iter()
                    .map(|&x| {
                        let (c, s) = apply(x);
                        eval(c, s)
                    })
                    .collect();
                for (&x, &v) in points.iter().zip(&values) {
                    if v > val {
                        val = v;
                        arg = Some(x);
                    }
                }
                if level < REFINE_LEVELS {
                    let center = arg.unwrap_or(current);
                    step /= 10.0;
                    points = (-10..=10)
                        .map(|i| center + i as f64 * step)
                        .filter(|&x| !is_spread || x >= 0.0)
                        .collect();
                }
            }
            if let Some(x) = arg {
                best = val;
                (centers, spreads) = apply(x);
            }
        }
        if best - before <= 1e-12 * before.abs() {
            break;
        }
    }
    Ok(FullyDistributed {
        centers,
        spreads,
        aps: pair_aps(centers, spreads),
        objective: best,
    })
}

/// Lloyd placement of `num_aps` points on the user sample, sorted ascending.
pub fn lloyd_1d(config: &Config1D, samples: &[f64], lloyd: &LloydConfig, seed: u64) -> Result<Vec<f64>> {
    let pts: Vec<Point2> = samples.iter().map(|&x| Point2::new(x, 0.0)).collect();
    let res = lloyd_best(&pts, config.num_aps, lloyd, seed)?;
    let mut aps: Vec<f64> = res.placement.aps().iter().map(|p| p.x).collect();
    aps.sort_by(f64::total_cmp);
    Ok(aps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPlacement {
    pub label: String,
    pub aps: Vec<f64>,
    pub metrics: Metrics1D,
}

/// Everything the 1-D figures need for one density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study1D {
    pub config: Config1D,
    #[serde(skip)]
    pub sweep: Vec<SweepPoint>,
    pub colocated_peak: Metrics1D,
    pub placements: Vec<NamedPlacement>,
}

impl Study1D {
    pub fn placement(&self, label: &str) -> Option<&NamedPlacement> {
        self.placements.iter().find(|p| p.label == label)
    }

    /// `(series, q, value)` rows for one metric: the colocated sweep followed by
    /// one row per fixed placement with an empty `q`.
    pub fn figure_csv(&self, metric: impl Fn(&Metrics1D) -> f64, fully: Option<&str>) -> String {
        let mut s = String::from("series,q,value\n");
        for p in &self.sweep {
            let m = Metrics1D {
                sum_snr: p.sum_snr,
                sum_rate: p.sum_rate,
                likely95: p.likely95,
            };
            let _ = writeln!(s, "colocated,{},{}", fmt_sig(p.q), fmt_sig(metric(&m)));
        }
        for p in &self.placements {
            if p.label.starts_with("fully_distributed") && Some(p.label.as_str()) != fully {
                continue;
            }
            let label = if p.label.starts_with("fully_distributed") { "fully_distributed" } else { &p.label };
            let _ = writeln!(s, "{label},,{}", fmt_sig(metric(&p.metrics)));
        }
        s
    }
}

fn peak(sweep: &[SweepPoint], f: impl Fn(&SweepPoint) -> f64) -> f64 {
    sweep.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the colocated sweep, the semi-distributed splits, the fully distributed
/// search for each objective and 1-D Lloyd on one density.
pub fn run_study(config: &Config1D, seed: u64, lloyd: &LloydConfig) -> Result<Study1D> {
    config.validate()?;
    let samples = config.sample(seed);
    let sweep = colocated_sweep(config, &samples, &config.default_grid());
    let colocated_peak = Metrics1D {
        sum_snr: peak(&sweep, |p| p.sum_snr),
        sum_rate: peak(&sweep, |p| p.sum_rate),
        likely95: peak(&sweep, |p| p.likely95),
    };
    let mut placements = Vec::new();
    if config.modes.len() == 2 && config.num_aps == 4 {
        for a in [2, 3, 1] {
            let aps = semi_distributed(config, a)?;
            placements.push(NamedPlacement {
                label: format!("distributed_{}_{}", a, 4 - a),
                metrics: evaluate_1d(config, &samples, &aps),
                aps,
            });
        }
        for (objective, label) in [
            (Objective1D::SumSnr, "fully_distributed_sum_snr"),
            (Objective1D::SumRate, "fully_distributed_sum_rate"),
            (Objective1D::Likely95, "fully_distributed_likely95"),
        ] {
            let fd = fully_distributed_search(config, &samples, objective)?;
            placements.push(NamedPlacement {
                label: label.into(),
                metrics: evaluate_1d(config, &samples, &fd.aps),
                aps: fd.aps,
            });
        }
    }
    let aps = lloyd_1d(config, &samples, lloyd, seed)?;
    placements.push(NamedPlacement {
        label: "lloyd".into(),
        metrics: evaluate_1d(config, &samples, &aps),
        aps,
    });
    Ok(Study1D {
        config: config.clone(),
        sweep,
        colocated_peak,
        placements,
    })
}

/// The full 1-D study: both bimodal configurations and the unimodal one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnedResults {
    pub seed: u64,
    pub conf1: Study1D,
    pub conf2: Study1D,
    pub unimodal: Study1D,
}

/// Runs the study on all three presets, optionally with `num_samples` users
/// each instead of the preset count.
pub fn run_all(seed: u64, lloyd: &LloydConfig, num_samples: Option<usize>) -> Result<OnedResults> {
    let with_samples = |mut c: Config1D| {
        if let Some(n) = num_samples {
            c.num_samples = n;
        }
        c
    };
    Ok(OnedResults {
        seed,
        conf1: run_study(&with_samples(conf1()), seed, lloyd)?,
        conf2: run_study(&with_samples(conf2()), seed, lloyd)?,
        unimodal: run_study(&with_samples(unimodal()), seed, lloyd)?,
    })
}

impl OnedResults {
    /// One `(file name, csv)` pair per figure.
    pub fn figures(&self) -> Vec<(String, String)> {
        let snr = |m: &Metrics1D| m.sum_snr;
        let rate = |m: &Metrics1D| m.sum_rate;
        let likely = |m: &Metrics1D| m.likely95;
        vec![
            ("fig1_sum_snr_conf1.csv".into(), self.conf1.figure_csv(snr, Some("fully_distributed_sum_snr"))),
            ("fig2_sum_snr_conf2.csv".into(), self.conf2.figure_csv(snr, Some("fully_distributed_sum_snr"))),
            ("fig3_sum_rate_conf1.csv".into(), self.conf1.figure_csv(rate, Some("fully_distributed_sum_rate"))),
            ("fig4_sum_rate_conf2.csv".into(), self.conf2.figure_csv(rate, Some("fully_distributed_sum_rate"))),
            ("fig5_likely95_conf1.csv".into(), self.conf1.figure_csv(likely, Some("fully_distributed_likely95"))),
            ("fig6_likely95_conf2.csv".into(), self.conf2.figure_csv(likely, Some("fully_distributed_likely95"))),
            ("fig7_sum_snr_unimodal.csv".into(), self.unimodal.figure_csv(snr, None)),
            ("fig8_sum_rate_unimodal.csv".into(), self.unimodal.figure_csv(rate, None)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(config: Config1D, n: usize) -> Config1D {
        Config1D { num_samples: n, ..config }
    }

    #[test]
    fn presets_are_valid() {
        for c in [conf1(), conf2(), unimodal()] {
            c.validate().unwrap();
        }
        let mut bad = conf1();
        bad.modes[0].weight = 0.6;
        assert!(bad.validate().is_err());
        bad = conf1();
        bad.modes[1].sigma = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn expected_inverse_matches_closed_form_for_wide_gaussian() {
        // For ε = 1 and a single N(0, s²) mode, E[1/(P² + 1)] at q = 0 equals
        // √(π/2)/s · e^{1/(2s²)} · erfc(1/(√2 s)).
        use statrs::function::erf::erfc;
        for s in [0.5, 1.0, 3.0] {
            let c = Config1D {
                modes: vec![Mode1D { weight: 1.0, mean: 0.0, sigma: s }],
                epsilon: 1.0,
                ..unimodal()
            };
            let want = (std::f64::consts::PI / 2.0).sqrt() / s * (0.5 / (s * s)).exp() * erfc(1.0 / (2f64.sqrt() * s));
            let got = expected_inverse(&c, 0.0);
            assert!((got - want).abs() < 1e-8 * want, "{s}: {got} vs {want}");
        }
    }

    #[test]
    fn expected_inverse_against_direct_quadrature_for_moderate_epsilon() {
        let c = Config1D { epsilon: 1e-2, ..conf2() };
        for q in [-3.0, 0.3, 4.0, 6.5] {
            // Dense trapezoid directly on f(p)/((p−q)²+ε).
            let n = 2_000_000;
            let (lo, hi) = (-20.0, 20.0);
            let h = (hi - lo) / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let p = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                s += w * c.pdf(p) / ((p - q) * (p - q) + c.epsilon);
            }
            let want = s * h;
            let got = expected_inverse(&c, q);
            assert!((got - want).abs() < 1e-6 * want, "{q}: {got} vs {want}");
        }
    }

    #[test]
    fn sum_snr_is_dominated_by_density_at_the_aps() {
        let c = conf1();
        let v = expected_inverse(&c, 3.0);
        let lead = c.pdf(3.0) * std::f64::consts::PI / c.epsilon.sqrt();
        assert!((v - lead).abs() < 1e-3 * lead);
    }

    #[test]
    fn colocated_sum_snr_peaks_at_both_means() {
        let c = small(conf1(), 2000);
        let samples = c.sample(1);
        let grid: Vec<f64> = (-700..=700).map(|i| i as f64 * 0.01).collect();
        let sweep = colocated_sweep(&c, &samples, &grid);
        let snr: Vec<f64> = sweep.iter().map(|p| p.sum_snr).collect();
        let peaks: Vec<f64> = local_maxima(&snr).into_iter().map(|i| grid[i]).collect();
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        assert!((peaks[0] + 3.0).abs() <= 0.02 && (peaks[1] - 3.0).abs() <= 0.02);
    }

    #[test]
    fn unimodal_sum_snr_has_one_peak_at_zero() {
        let c = small(unimodal(), 1000);
        let samples = c.sample(2);
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.01).collect();
        let sweep = colocated_sweep(&c, &samples, &grid);
        let snr: Vec<f64> = sweep.iter().map(|p| p.sum_snr).collect();
        let peaks = local_maxima(&snr);
        assert_eq!(peaks.len(), 1);
        assert!(grid[peaks[0]].abs() <= 0.01);
    }

    #[test]
    fn mirrored_sweep_is_mirrored() {
        let c = small(conf2(), 5000);
        let samples = c.sample(3);
        let mirrored_samples: Vec<f64> = samples.iter().map(|x| -x).collect();
        let grid: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.13).collect();
        let neg: Vec<f64> = grid.iter().map(|x| -x).collect();
        let a = colocated_sweep(&c, &samples, &grid);
        let b = colocated_sweep(&c.mirrored(), &mirrored_samples, &neg);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.sum_snr - y.sum_snr).abs() <= 1e-9 * x.sum_snr);
            assert!((x.sum_rate - y.sum_rate).abs() <= 1e-12 * x.sum_rate.max(1.0));
            assert_eq!(x.likely95, y.likely95);
        }
    }

    #[test]
    fn semi_distributed_splits() {
        let c = conf2();
        assert_eq!(semi_distributed(&c, 3).unwrap(), vec![-3.0, -3.0, -3.0, 4.0]);
        assert_eq!(semi_distributed(&c, 1).unwrap(), vec![-3.0, 4.0, 4.0, 4.0]);
        assert!(semi_distributed(&c, 0).is_err());
        assert!(semi_distributed(&unimodal(), 2).is_err());
    }

    #[test]
    fn conf1_semi_distributed_sum_snr_matches_colocated_peak() {
        let c = small(conf1(), 100);
        let samples = c.sample(4);
        let colocated = expected_sum_snr(&c, &[3.0; 4]);
        for a in 1..=3 {
            let m = semi_distributed_eval(&c, &samples, a).unwrap();
            assert!((m.sum_snr - colocated).abs() < 0.02 * colocated);
        }
    }

    #[test]
    fn percentile_helper_matches_sorting() {
        let samples = small(conf2(), 3001).sample(5);
        let aps = [-3.5, -2.0, 3.0, 5.0];
        let mut r = rates(&samples, &aps, 1e-9);
        r.sort_by(f64::total_cmp);
        let want = crate::metrics::sorted_percentile(&r, 0.05);
        assert_eq!(likely95_1d(&samples, &aps, 1e-9), want);
    }

    #[test]
    fn fully_distributed_sum_snr_stays_at_two_plus_two() {
        let c = small(conf1(), 500);
        let samples = c.sample(6);
        let fd = fully_distributed_search(&c, &samples, Objective1D::SumSnr).unwrap();
        assert!(fd.spreads.iter().all(|&s| s == 0.0), "{fd:?}");
        assert!((fd.centers[0] + 3.0).abs() < 0.01 && (fd.centers[1] - 3.0).abs() < 0.01);
    }

    #[test]
    fn fully_distributed_sum_rate_spreads_out() {
        let c = small(conf1(), 20_000);
        let samples = c.sample(7);
        let fd = fully_distributed_search(&c, &samples, Objective1D::SumRate).unwrap();
        assert!(fd.spreads.iter().all(|&s| s > 0.0));
        let two_two = sum_rate_1d(&samples, &semi_distributed(&c, 2).unwrap(), c.epsilon);
        assert!(fd.objective > two_two);
    }

    #[test]
    fn lloyd_on_conf1_is_symmetric() {
        let c = small(conf1(), 20_000);
        let samples = c.sample(8);
        let aps = lloyd_1d(&c, &samples, &LloydConfig { restarts: 4, ..LloydConfig::default() }, 8).unwrap();
        for i in 0..4 {
            assert!((aps[i] + aps[3 - i]).abs() < 0.1, "{aps:?}");
        }
    }

    #[test]
    fn samples_follow_the_mixture() {
        let c = small(conf2(), 50_000);
        let s = c.sample(9);
        let left = s.iter().filter(|&&x| x < 0.5).count() as f64 / s.len() as f64;
        assert!((left - 0.35).abs() < 0.01);
        assert_eq!(s, c.sample(9));
    }
}
