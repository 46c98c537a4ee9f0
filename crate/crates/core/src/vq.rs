//! Standard VQ placement: the Lloyd algorithm under squared-error distortion.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::scenario::{Point2, Region, UserDensity};

/// Ordered AP positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    aps: Vec<Point2>,
}

impl Placement {
    pub fn new(aps: Vec<Point2>) -> Self {
        Placement { aps }
    }

    pub fn aps(&self) -> &[Point2] {
        &self.aps
    }

    pub fn aps_mut(&mut self) -> &mut [Point2] {
        &mut self.aps
    }

    pub fn len(&self) -> usize {
        self.aps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aps.is_empty()
    }

    pub fn into_aps(self) -> Vec<Point2> {
        self.aps
    }

    pub fn is_finite(&self) -> bool {
        self.aps.iter().all(|p| p.is_finite())
    }

    /// Index and squared distance of the AP nearest to `p`; ties go to the lowest index.
    pub fn nearest(&self, p: Point2) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (m, q) in self.aps.iter().enumerate() {
            let d = p.dist_sq(*q);
            if d < best.1 {
                best = (m, d);
            }
        }
        best
    }
}

/// Nearest-neighbor partition of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionResult {
    /// AP index for each user.
    pub assignment: Vec<usize>,
    /// User indices per AP.
    pub cells: Vec<Vec<usize>>,
    /// Squared distance from each user to its AP.
    pub distortion: Vec<f64>,
    /// Mean squared distance, m².
    pub mse: f64,
}

pub fn nearest_neighbor_partition(users: &[Point2], placement: &Placement) -> PartitionResult {
    let mut cells = vec![Vec::new(); placement.len()];
    let mut assignment = Vec::with_capacity(users.len());
    let mut distortion = Vec::with_capacity(users.len());
    for (k, p) in users.iter().enumerate() {
        let (m, d) = placement.nearest(*p);
        cells[m].push(k);
        assignment.push(m);
        distortion.push(d);
    }
    let mse = distortion.iter().sum::<f64>() / users.len().max(1) as f64;
    PartitionResult {
        assignment,
        cells,
        distortion,
        mse,
    }
}

/// Moves each AP to the mean of its cell. An empty cell's AP is re-seeded at the
/// training point with the largest current distortion (distinct points for
/// distinct empty cells).
pub fn centroid_update(users: &[Point2], partition: &PartitionResult, previous: &Placement) -> Placement {
    let mut aps: Vec<Point2> = partition
        .cells
        .iter()
        .zip(previous.aps())
        .map(|(cell, old)| crate::scenario::centroid(cell.iter().map(|&k| &users[k])).unwrap_or(*old))
        .collect();

    let empty: Vec<usize> = partition
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_empty())
        .map(|(m, _)| m)
        .collect();
    if !empty.is_empty() {
        let mut order: Vec<usize> = (0..users.len()).collect();
        order.sort_by(|&a, &b| {
            partition.distortion[b]
                .total_cmp(&partition.distortion[a])
                .then(a.cmp(&b))
        });
        let mut taken: Vec<Point2> = Vec::new();
        let mut candidates = order.into_iter().map(|k| users[k]);
        for m in empty {
            for p in candidates.by_ref() {
                if !taken.contains(&p) && !aps.contains(&p) {
                    aps[m] = p;
                    taken.push(p);
                    break;
                }
            }
        }
    }
    Placement::new(aps)
}

/// How a Lloyd run picks its starting codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LloydInit {
    /// D²-weighted seeding from the training set.
    #[default]
    #[serde(rename = "kmeans++")]
    KMeansPlusPlus,
    /// Distinct training points chosen uniformly at random.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LloydConfig {
    pub max_iters: usize,
    /// Stop once the relative MSE improvement of a pass drops below this.
    pub tol: f64,
    pub restarts: usize,
    pub init: LloydInit,
}

impl Default for LloydConfig {
    fn default() -> Self {
        LloydConfig {
            max_iters: 50,
            tol: 1e-6,
            restarts: 10,
            init: LloydInit::KMeansPlusPlus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydResult {
    pub placement: Placement,
    /// MSE of the initial codebook followed by the MSE after each pass.
    pub mse_trace: Vec<f64>,
    /// Number of NNC/CC passes performed.
    pub iterations: usize,
    pub converged: bool,
}

impl LloydResult {
    pub fn mse(&self) -> f64 {
        *self.mse_trace.last().expect("trace is never empty")
    }
}

pub fn count_distinct(users: &[Point2]) -> usize {
    let mut keys: Vec<(u64, u64)> = users.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// D²-weighted (k-means++) seeding.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(users: &[Point2], m: usize, rng: &mut R) -> Placement {
    let mut aps = Vec::with_capacity(m);
    aps.push(users[rng.random_range(0..users.len())]);
    let mut d2: Vec<f64> = users.iter().map(|p| p.dist_sq(aps[0])).collect();
    while aps.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (k, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = k;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..users.len())
        };
        let q = users[next];
        aps.push(q);
        for (d, p) in d2.iter_mut().zip(users) {
            *d = d.min(p.dist_sq(q));
        }
    }
    Placement::new(aps)
}

/// `m` distinct training points chosen uniformly.
pub fn random_init<R: Rng + ?Sized>(users: &[Point2], m: usize, rng: &mut R) -> Placement {
    Placement::new(index::sample(rng, users.len(), m).into_iter().map(|k| users[k]).collect())
}

/// Runs Lloyd iterations from `init` until the relative MSE improvement falls below
/// `tol` or `max_iters` passes have run.
pub fn lloyd_from(users: &[Point2], init: Placement, max_iters: usize, tol: f64) -> LloydResult {
    let mut placement = init;
    let mut partition = nearest_neighbor_partition(users, &placement);
    let mut mse_trace = vec![partition.mse];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let next = centroid_update(users, &partition, &placement);
        let next_partition = nearest_neighbor_partition(users, &next);
        iterations += 1;
        let prev = partition.mse;
        // Guard the monotone trace against rounding in the centroid sums.
        if next_partition.mse > prev {
            converged = true;
            break;
        }
        placement = next;
        partition = next_partition;
        mse_trace.push(partition.mse);
        if prev - partition.mse <= tol * prev {
            converged = true;
            break;
        }
    }
    LloydResult {
        placement,
        mse_trace,
        iterations,
        converged,
    }
}

/// A single seeded Lloyd run.
pub fn lloyd_run<R: Rng + ?Sized>(
    users: &[Point2],
    m: usize,
    config: &LloydConfig,
    rng: &mut R,
) -> Result<LloydResult> {
    check_codebook_size(users, m)?;
    let init = match config.init {
        LloydInit::KMeansPlusPlus => kmeans_plus_plus(users, m, rng),
        LloydInit::Random => random_init(users, m, rng),
    };
    Ok(lloyd_from(users, init, config.max_iters, config.tol))
}

/// Best-of-`config.restarts` Lloyd. Restarts run in parallel on separate seed streams;
/// the lowest final MSE wins, ties broken by restart index.
pub fn lloyd_best(users: &[Point2], m: usize, config: &LloydConfig, seed: u64) -> Result<LloydResult> {
    check_codebook_size(users, m)?;
    let restarts = config.restarts.max(1);
    let runs: Vec<LloydResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, streams::LLOYD + r as u64);
            lloyd_run(users, m, config, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(runs
        .into_iter()
        .reduce(|best, run| if run.mse() < best.mse() { run } else { best })
        .expect("at least one restart"))
}

fn check_codebook_size(users: &[Point2], m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::config("num_aps", "must be at least 1"));
    }
    let available = count_distinct(users);
    if m > available {
        return Err(Error::TooFewDistinctPoints { requested: m, available });
    }
    Ok(())
}

/// High-resolution AP density `g(p) = f(p)^{1/2} / ∫ f^{1/2}`.
#[derive(Debug, Clone)]
pub struct ApDensity<F> {
    density: F,
    norm: f64,
}

impl<F: Fn(Point2) -> f64> ApDensity<F> {
    /// Normalizes `√density` by midpoint quadrature on an `n x n` grid over `region`.
    pub fn from_fn(density: F, region: Region, n: usize) -> Self {
        let norm = region.integrate(n, |p| density(p).max(0.0).sqrt());
        ApDensity { density, norm }
    }

    pub fn eval(&self, p: Point2) -> f64 {
        (self.density)(p).max(0.0).sqrt() / self.norm
    }
}

/// `g(p)` for a user mixture, normalized over the density's region.
pub fn high_res_ap_density(density: &UserDensity, p: Point2) -> f64 {
    ApDensity::from_fn(|x| density.pdf(x), density.region(), 600).eval(p)
}
