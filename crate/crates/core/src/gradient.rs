//! Gradient-ascent refinement of AP placements.
//!
//! Both objectives use the asymptotic SNR `ψ_k = ρ Σ_m c / (‖p_k − q_m‖^γ + ε)`
//! with natural-log rates. Max-sum ascends `Σ_k ln(1 + ψ_k)`; max-min ascends the
//! same sum restricted to the `⌈f K⌉` users with the lowest current rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, ChannelParams};
use crate::error::{Error, Result};
use crate::scenario::Point2;
use crate::vq::Placement;

const CHUNK: usize = 64;
const STALL_WINDOW: usize = 20;
const STALL_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaxSum,
    MaxMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    pub step_delta: f64,
    pub max_iters: usize,
    pub objective: Objective,
    pub tail_fraction: f64,
    pub rho_r_db: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            step_delta: 1e3,
            max_iters: 500,
            objective: Objective::MaxSum,
            tail_fraction: 0.05,
            rho_r_db: 30.0,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_delta.is_finite() && self.step_delta > 0.0) {
            return Err(Error::config("step_delta", "must be positive"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::config("tail_fraction", "must lie in (0, 1]"));
        }
        if !self.rho_r_db.is_finite() {
            return Err(Error::config("rho_r_db", "must be finite"));
        }
        Ok(())
    }

    pub fn rho_r(&self) -> f64 {
        db_to_linear(self.rho_r_db)
    }
}

fn kernel_terms(p: Point2, q: Point2, params: &ChannelParams) -> (f64, f64) {
    // Returns (β, ∂β/∂s) with s = ‖p − q‖².
    let s = p.dist_sq(q);
    let half = 0.5 * params.gamma;
    let sh = s.powf(half);
    let den = sh + params.epsilon;
    let beta = params.constant_c / den;
    let dbeta = if s > 0.0 {
        -params.constant_c * half * sh / s / (den * den)
    } else {
        0.0
    };
    (beta, dbeta)
}

/// Asymptotic per-user SNRs, shadowing ignored.
pub fn user_snrs(placement: &Placement, users: &[Point2], params: &ChannelParams, rho_r: f64) -> Vec<f64> {
    users
        .par_iter()
        .map(|&p| {
            rho_r
                * placement
                    .aps()
                    .iter()
                    .map(|&q| params.beta_from_dist_sq(p.dist_sq(q)))
                    .sum::<f64>()
        })
        .collect()
}

/// `Σ_k ln(1 + ψ_k)`.
pub fn sum_rate_objective(placement: &Placement, users: &[Point2], params: &ChannelParams, rho_r: f64) -> f64 {
    user_snrs(placement, users, params, rho_r).iter().map(|s| s.ln_1p()).sum()
}

/// Indices of the `⌈f K⌉` users with the lowest SNR; ties broken by index.
pub fn tail_set(snrs: &[f64], tail_fraction: f64) -> Vec<usize> {
    let n = tail_count(snrs.len(), tail_fraction);
    let mut idx: Vec<usize> = (0..snrs.len()).collect();
    idx.sort_by(|&a, &b| snrs[a].total_cmp(&snrs[b]).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

pub fn tail_count(k: usize, tail_fraction: f64) -> usize {
    // Guard against 0.05 · 100 evaluating to 5.000000000000001.
    let x = tail_fraction * k as f64;
    let n = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    (n as usize).clamp(k.min(1), k)
}

/// `Σ_{k ∈ tail} ln(1 + ψ_k)` with the tail recomputed at this placement.
pub fn tail_rate_objective(
    placement: &Placement,
    users: &[Point2],
    params: &ChannelParams,
    rho_r: f64,
    tail_fraction: f64,
) -> f64 {
    let snrs = user_snrs(placement, users, params, rho_r);
    tail_set(&snrs, tail_fraction).iter().map(|&k| snrs[k].ln_1p()).sum()
}

/// Gradient of `Σ_{k ∈ subset} ln(1 + ψ_k)` with respect to every AP position.
pub fn subset_rate_gradient(
    placement: &Placement,
    users: &[Point2],
    subset: &[usize],
    params: &ChannelParams,
    rho_r: f64,
) -> Vec<Point2> {
    let m = placement.len();
    let partials: Vec<Vec<Point2>> = subset
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![Point2::ORIGIN; m];
            let mut dbeta = vec![0.0; m];
            for &k in chunk {
                let p = users[k];
                let mut psi = 0.0;
                for (d, &q) in dbeta.iter_mut().zip(placement.aps()) {
                    let (b, db) = kernel_terms(p, q, params);
                    psi += b;
                    *d = db;
                }
                let w = rho_r / (1.0 + rho_r * psi);
                // ∂s/∂q = −2 (p − q)
                for ((a, &d), &q) in acc.iter_mut().zip(&dbeta).zip(placement.aps()) {
                    *a += (p - q) * (-2.0 * w * d);
                }
            }
            acc
        })
        .collect();
    let mut grad = vec![Point2::ORIGIN; m];
    for part in partials {
        for (g, v) in grad.iter_mut().zip(part) {
            *g += v;
        }
    }
    grad
}

pub fn sum_rate_gradient(placement: &Placement, users: &[Point2], params: &ChannelParams, rho_r: f64) -> Vec<Point2> {
    let all: Vec<usize> = (0..users.len()).collect();
    subset_rate_gradient(placement, users, &all, params, rho_r)
}

pub fn tail_rate_gradient(
    placement: &Placement,
    users: &[Point2],
    params: &ChannelParams,
    rho_r: f64,
    tail_fraction: f64,
) -> Vec<Point2> {
    let tail = tail_set(&user_snrs(placement, users, params, rho_r), tail_fraction);
    subset_rate_gradient(placement, users, &tail, params, rho_r)
}

pub fn objective_value(placement: &Placement, users: &[Point2], params: &ChannelParams, cfg: &AscentConfig) -> f64 {
    match cfg.objective {
        Objective::MaxSum => sum_rate_objective(placement, users, params, cfg.rho_r()),
        Objective::MaxMin => tail_rate_objective(placement, users, params, cfg.rho_r(), cfg.tail_fraction),
    }
}

fn objective_gradient(placement: &Placement, users: &[Point2], params: &ChannelParams, cfg: &AscentConfig) -> Vec<Point2> {
    match cfg.objective {
        Objective::MaxSum => sum_rate_gradient(placement, users, params, cfg.rho_r()),
        Objective::MaxMin => tail_rate_gradient(placement, users, params, cfg.rho_r(), cfg.tail_fraction),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    /// Best placement seen.
    pub placement: Placement,
    /// Objective after every accepted or rejected step, starting with the input.
    pub trace: Vec<f64>,
    /// Running maximum of `trace`.
    pub best_trace: Vec<f64>,
    pub best_objective: f64,
    pub iterations: usize,
    pub halvings: usize,
    pub final_step: f64,
}

/// Fixed-step ascent `q ← q + δ ∇`, returning the best iterate.
///
/// Stops after `max_iters` steps, when the objective changes by less than 1e-8
/// (relative) over 20 steps, or on a sixth collapse below half the running
/// maximum. Each earlier collapse halves `δ` and restarts from the best iterate.
pub fn ascend(placement: &Placement, users: &[Point2], params: &ChannelParams, cfg: &AscentConfig) -> Result<AscentResult> {
    cfg.validate()?;
    if users.is_empty() {
        return Err(Error::config("users", "must be nonempty"));
    }
    let mut current = placement.clone();
    let mut delta = cfg.step_delta;
    let start = objective_value(&current, users, params, cfg);
    let mut best = (start, current.clone());
    let mut trace = vec![start];
    let mut best_trace = vec![start];
    let mut halvings = 0;
    let mut iterations = 0;
    let mut accepted: Vec<f64> = vec![start];
    while iterations < cfg.max_iters {
        iterations += 1;
        let grad = objective_gradient(&current, users, params, cfg);
        let next = Placement::new(
            current
                .aps()
                .iter()
                .zip(&grad)
                .map(|(&q, &g)| q + g * delta)
                .collect(),
        );
        let value = if next.is_finite() {
            objective_value(&next, users, params, cfg)
        } else {
            f64::NAN
        };
        trace.push(value);
        if !value.is_finite() || value < 0.5 * best.0 {
            best_trace.push(best.0);
            if halvings == MAX_HALVINGS {
                break;
            }
            halvings += 1;
            delta *= 0.5;
            current = best.1.clone();
            accepted.clear();
            accepted.push(best.0);
            continue;
        }
        current = next;
        if value > best.0 {
            best = (value, current.clone());
        }
        best_trace.push(best.0);
        accepted.push(value);
        if accepted.len() > STALL_WINDOW {
            let old = accepted[accepted.len() - 1 - STALL_WINDOW];
            if (value - old).abs() <= STALL_TOL * old.abs() {
                break;
            }
        }
    }
    Ok(AscentResult {
        placement: best.1,
        trace,
        best_trace,
        best_objective: best.0,
        iterations,
        halvings,
        final_step: delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn params() -> ChannelParams {
        ChannelParams {
            constant_c: 1e4,
            ..ChannelParams::default()
        }
    }

    fn random_points(n: usize, rng: &mut impl Rng, span: f64) -> Vec<Point2> {
        (0..n)
            .map(|_| Point2::new(rng.random_range(-span..span), rng.random_range(-span..span)))
            .collect()
    }

    #[test]
    fn coincident_single_user_has_zero_gradient() {
        let p = Point2::new(3.0, -2.0);
        let g = sum_rate_gradient(&Placement::new(vec![p]), &[p], &params(), 1e3);
        assert_eq!(g[0], Point2::ORIGIN);
    }

    #[test]
    fn symmetric_pulls_cancel() {
        let users = [Point2::new(-50.0, 0.0), Point2::new(50.0, 0.0)];
        let g = sum_rate_gradient(&Placement::new(vec![Point2::ORIGIN]), &users, &params(), 1e3);
        assert!(g[0].x.abs() < 1e-18 && g[0].y.abs() < 1e-18);
    }

    #[test]
    fn gradient_points_toward_a_lone_user() {
        let g = sum_rate_gradient(&Placement::new(vec![Point2::ORIGIN]), &[Point2::new(30.0, 40.0)], &params(), 1e3);
        assert!(g[0].x > 0.0 && g[0].y > 0.0);
        assert!((g[0].y / g[0].x - 4.0 / 3.0).abs() < 1e-12);
    }

    fn fd_check(f: impl Fn(&Placement) -> f64, placement: &Placement, grad: &[Point2]) {
        let h = 1e-3;
        for m in 0..placement.len() {
            for axis in 0..2 {
                let mut plus = placement.clone();
                let mut minus = placement.clone();
                let e = if axis == 0 { Point2::new(h, 0.0) } else { Point2::new(0.0, h) };
                plus.aps_mut()[m] += e;
                minus.aps_mut()[m] += -e;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = if axis == 0 { grad[m].x } else { grad[m].y };
                assert!(
                    (fd - an).abs() <= 1e-4 * an.abs().max(1e-9),
                    "ap {m} axis {axis}: fd {fd} analytic {an}"
                );
            }
        }
    }

    #[test]
    fn sum_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let prm = params();
        for _ in 0..10 {
            let users = random_points(5, &mut rng, 150.0);
            let placement = Placement::new(random_points(3, &mut rng, 150.0));
            let g = sum_rate_gradient(&placement, &users, &prm, 1e3);
            fd_check(|p| sum_rate_objective(p, &users, &prm, 1e3), &placement, &g);
        }
    }

    #[test]
    fn tail_gradient_matches_finite_differences_with_frozen_membership() {
        let mut rng = rng_from_seed(12);
        let prm = params();
        for _ in 0..10 {
            let users = random_points(5, &mut rng, 150.0);
            let placement = Placement::new(random_points(4, &mut rng, 150.0));
            let tail = tail_set(&user_snrs(&placement, &users, &prm, 1e3), 0.4);
            assert_eq!(tail.len(), 2);
            let g = tail_rate_gradient(&placement, &users, &prm, 1e3, 0.4);
            let frozen = |p: &Placement| {
                let s = user_snrs(p, &users, &prm, 1e3);
                tail.iter().map(|&k| s[k].ln_1p()).sum::<f64>()
            };
            fd_check(frozen, &placement, &g);
        }
    }

    #[test]
    fn tail_set_matches_sorting_oracle() {
        let mut rng = rng_from_seed(13);
        for k in [1, 7, 20, 100, 101] {
            let snrs: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let n = (0.05 * k as f64).ceil() as usize;
            let mut sorted = snrs.clone();
            sorted.sort_by(f64::total_cmp);
            let cutoff = sorted[n - 1];
            let tail = tail_set(&snrs, 0.05);
            assert_eq!(tail.len(), n);
            assert!(tail.iter().all(|&i| snrs[i] <= cutoff));
        }
        assert_eq!(tail_count(100, 0.05), 5);
        assert_eq!(tail_count(2000, 0.05), 100);
        assert_eq!(tail_count(3, 0.05), 1);
    }

    #[test]
    fn single_user_tail_equals_sum() {
        let users = [Point2::new(12.0, 7.0)];
        let placement = Placement::new(vec![Point2::ORIGIN, Point2::new(40.0, -9.0)]);
        let a = sum_rate_gradient(&placement, &users, &params(), 1e2);
        let b = tail_rate_gradient(&placement, &users, &params(), 1e2, 0.05);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_iterations_keep_input() {
        let users = random_points(20, &mut rng_from_seed(3), 100.0);
        let placement = Placement::new(random_points(4, &mut rng_from_seed(4), 100.0));
        let cfg = AscentConfig {
            max_iters: 0,
            ..AscentConfig::default()
        };
        let r = ascend(&placement, &users, &params(), &cfg).unwrap();
        assert_eq!(r.placement, placement);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn ascent_improves_and_best_trace_is_monotone() {
        let users = random_points(200, &mut rng_from_seed(5), 300.0);
        let placement = Placement::new(random_points(6, &mut rng_from_seed(6), 300.0));
        for objective in [Objective::MaxSum, Objective::MaxMin] {
            let cfg = AscentConfig {
                step_delta: 1e4,
                max_iters: 100,
                objective,
                tail_fraction: 0.1,
                rho_r_db: 30.0,
            };
            let r = ascend(&placement, &users, &params(), &cfg).unwrap();
            assert!(r.best_trace.windows(2).all(|w| w[1] >= w[0]));
            assert!(r.best_objective >= r.trace[0]);
            assert_eq!(r.best_objective, objective_value(&r.placement, &users, &params(), &cfg));
        }
    }

    #[test]
    fn huge_step_triggers_the_guard() {
        let users = random_points(50, &mut rng_from_seed(7), 100.0);
        let placement = Placement::new(random_points(3, &mut rng_from_seed(8), 100.0));
        let cfg = AscentConfig {
            step_delta: 1e12,
            max_iters: 50,
            ..AscentConfig::default()
        };
        let r = ascend(&placement, &users, &params(), &cfg).unwrap();
        assert!(r.halvings > 0);
        assert!(r.final_step < cfg.step_delta);
        assert!(r.best_objective >= r.trace[0]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let p = Placement::new(vec![Point2::ORIGIN]);
        let u = [Point2::ORIGIN];
        for cfg in [
            AscentConfig { step_delta: 0.0, ..AscentConfig::default() },
            AscentConfig { tail_fraction: 0.0, ..AscentConfig::default() },
            AscentConfig { tail_fraction: 1.5, ..AscentConfig::default() },
        ] {
            assert!(ascend(&p, &u, &params(), &cfg).is_err());
        }
        assert!(ascend(&p, &[], &params(), &AscentConfig::default()).is_err());
    }

    fn pts(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-200.0..200.0f64, -200.0..200.0f64), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn translation_leaves_gradient_unchanged(u in pts(6), q in pts(3), dx in -500.0..500.0f64, dy in -500.0..500.0f64) {
            let users: Vec<Point2> = u.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let aps: Vec<Point2> = q.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let t = Point2::new(dx, dy);
            let g0 = sum_rate_gradient(&Placement::new(aps.clone()), &users, &params(), 1e3);
            let users_t: Vec<Point2> = users.iter().map(|&p| p + t).collect();
            let aps_t: Vec<Point2> = aps.iter().map(|&p| p + t).collect();
            let g1 = sum_rate_gradient(&Placement::new(aps_t), &users_t, &params(), 1e3);
            for (a, b) in g0.iter().zip(&g1) {
                let scale = a.norm().max(1e-12);
                prop_assert!((*a - *b).norm() <= 1e-6 * scale);
            }
        }

        #[test]
        fn swapping_aps_swaps_gradient_rows(u in pts(5), q in pts(4), i in 0usize..4, j in 0usize..4) {
            let users: Vec<Point2> = u.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let mut aps: Vec<Point2> = q.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let g0 = tail_rate_gradient(&Placement::new(aps.clone()), &users, &params(), 1e3, 0.4);
            aps.swap(i, j);
            let mut g1 = tail_rate_gradient(&Placement::new(aps), &users, &params(), 1e3, 0.4);
            g1.swap(i, j);
            for (a, b) in g0.iter().zip(&g1) {
                prop_assert!((*a - *b).norm() <= 1e-12 * a.norm().max(1e-300));
            }
        }

        #[test]
        fn full_tail_is_the_sum_gradient(u in pts(7), q in pts(3)) {
            let users: Vec<Point2> = u.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let p = Placement::new(q.iter().map(|&(x, y)| Point2::new(x, y)).collect());
            let a = sum_rate_gradient(&p, &users, &params(), 1e3);
            let b = tail_rate_gradient(&p, &users, &params(), 1e3, 1.0);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.x - y.x).abs() <= 1e-12 * x.x.abs().max(1e-300));
                prop_assert!((x.y - y.y).abs() <= 1e-12 * x.y.abs().max(1e-300));
            }
        }
    }
}
