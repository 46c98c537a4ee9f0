//! PDF-optimized VQ placement.
//!
//! The AP budget `b_tot = log₂ M` is split across mixture clusters in
//! proportion to `√(p_l c_l)`, then across the two eigen-directions of each
//! cluster's covariance. Each direction gets a Lloyd-Max quantizer of the
//! matching Gaussian, and the cluster codebook is the rotated Cartesian product
//! of the two scalar codebooks. Continuous level counts are rounded to
//! integers by a small scored search that keeps the total within `M`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Matrix2, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::scenario::{Covariance, Point2, UserDensity};
use crate::vq::Placement;

/// Eigen-decomposition `Σ = Q diag(λ) Qᵀ` of a cluster covariance, `λ₁ ≥ λ₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpectrum {
    pub eigvals: [f64; 2],
    /// Columns are the eigenvectors, each with its first nonzero component positive.
    pub eigvecs: Matrix2<f64>,
    /// Geometric mean `√(λ₁λ₂)`.
    pub c: f64,
}

impl ClusterSpectrum {
    pub fn from_covariance(cov: &Covariance) -> Self {
        let eig = SymmetricEigen::new(cov.as_nalgebra());
        let (i1, i2) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let mut q = Matrix2::zeros();
        for (dst, src) in [(0, i1), (1, i2)] {
            let mut v = eig.eigenvectors.column(src).into_owned();
            v /= v.norm();
            let lead = if v[0].abs() > 1e-15 { v[0] } else { v[1] };
            if lead < 0.0 {
                v = -v;
            }
            q.set_column(dst, &v);
        }
        let eigvals = [eig.eigenvalues[i1], eig.eigenvalues[i2]];
        ClusterSpectrum {
            eigvals,
            eigvecs: q,
            c: (eigvals[0] * eigvals[1]).sqrt(),
        }
    }

    /// Maps eigen-coordinates `y` to the plane: `Q y`.
    pub fn rotate(&self, y: Point2) -> Point2 {
        let v = self.eigvecs * nalgebra::Vector2::new(y.x, y.y);
        Point2::new(v[0], v[1])
    }

    pub fn reconstruct(&self) -> Matrix2<f64> {
        self.eigvecs * Matrix2::from_diagonal(&self.eigvals.into()) * self.eigvecs.transpose()
    }
}

/// Continuous allocation of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAllocation {
    pub spectrum: ClusterSpectrum,
    /// `b_l`.
    pub bits: f64,
    /// `2^{b_l}`.
    pub levels: f64,
    /// `b_{l,j}` along each eigen-direction.
    pub dim_bits: [f64; 2],
    /// `V_{l,j} = 2^{b_{l,j}}`.
    pub dim_levels: [f64; 2],
}

/// Continuous allocation for the whole mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub total_bits: f64,
    pub clusters: Vec<ClusterAllocation>,
}

/// Per-cluster level counts `2^{b_l} = M √(p_l c_l) / Σ_j √(p_j c_j)`.
pub fn cluster_allocation(density: &UserDensity, m: usize) -> Vec<f64> {
    let scores: Vec<f64> = density
        .components()
        .iter()
        .map(|c| (c.weight * ClusterSpectrum::from_covariance(&c.covariance).c).sqrt())
        .collect();
    let sum: f64 = scores.iter().sum();
    scores.iter().map(|s| m as f64 * s / sum).collect()
}

/// Splits `b_l` across eigen-directions: `b_{l,j} = b_l/2 + ½ log₂(λ_j / c_l)`.
/// Returns `(b_{l,j}, V_{l,j})`.
pub fn dimension_allocation(bits: f64, spectrum: &ClusterSpectrum) -> ([f64; 2], [f64; 2]) {
    let b = spectrum
        .eigvals
        .map(|lambda| 0.5 * bits + 0.5 * (lambda / spectrum.c).log2());
    (b, b.map(f64::exp2))
}

impl AllocationPlan {
    pub fn new(density: &UserDensity, m: usize) -> Self {
        let clusters = cluster_allocation(density, m)
            .into_iter()
            .zip(density.components())
            .map(|(levels, comp)| {
                let spectrum = ClusterSpectrum::from_covariance(&comp.covariance);
                let bits = levels.log2();
                let (dim_bits, dim_levels) = dimension_allocation(bits, &spectrum);
                ClusterAllocation {
                    spectrum,
                    bits,
                    levels,
                    dim_bits,
                    dim_levels,
                }
            })
            .collect();
        AllocationPlan {
            total_bits: (m as f64).log2(),
            clusters,
        }
    }

    pub fn continuous_levels(&self) -> Vec<[f64; 2]> {
        self.clusters.iter().map(|c| c.dim_levels).collect()
    }
}

/// Integer level counts per cluster and eigen-direction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntegerPlan {
    pub levels: Vec<[usize; 2]>,
}

impl IntegerPlan {
    pub fn total(&self) -> usize {
        self.levels.iter().map(|[a, b]| a * b).sum()
    }
}

// ---------------------------------------------------------------------------
// Lloyd-Max scalar quantizers

/// Sorted reproduction levels of a scalar quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCodebook {
    pub levels: usize,
    pub codepoints: Vec<f64>,
}

const LLOYD_MAX_TOL: f64 = 1e-10;
const LLOYD_MAX_MAX_ITERS: usize = 200_000;

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(a < X < b)` for standard normal `X`, accurate in both tails.
pub fn std_normal_mass(a: f64, b: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    } else {
        0.5 * (erf(b / s) - erf(a / s))
    }
}

/// `E[X | a < X < b]` for standard normal `X`.
pub fn std_normal_interval_mean(a: f64, b: f64) -> f64 {
    let pa = if a.is_finite() { std_normal_pdf(a) } else { 0.0 };
    let pb = if b.is_finite() { std_normal_pdf(b) } else { 0.0 };
    (pa - pb) / std_normal_mass(a, b)
}

/// Decision thresholds of a sorted codebook: midpoints, padded with ±∞.
pub fn thresholds(codepoints: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(codepoints.len() + 1);
    t.push(f64::NEG_INFINITY);
    t.extend(codepoints.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    t.push(f64::INFINITY);
    t
}

fn compute_standard_normal_codebook(levels: usize) -> Vec<f64> {
    assert!(levels >= 1);
    if levels == 1 {
        return vec![0.0];
    }
    let normal = Normal::standard();
    let mut c: Vec<f64> = (0..levels)
        .map(|i| normal.inverse_cdf((i as f64 + 0.5) / levels as f64))
        .collect();
    for _ in 0..LLOYD_MAX_MAX_ITERS {
        let t = thresholds(&c);
        let mut next: Vec<f64> = (0..levels)
            .map(|i| std_normal_interval_mean(t[i], t[i + 1]))
            .collect();
        // The optimum is odd-symmetric; enforce it exactly.
        for i in 0..levels / 2 {
            let j = levels - 1 - i;
            let h = 0.5 * (next[j] - next[i]);
            next[i] = -h;
            next[j] = h;
        }
        if levels % 2 == 1 {
            next[levels / 2] = 0.0;
        }
        let moved = c
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        c = next;
        if moved < LLOYD_MAX_TOL {
            break;
        }
    }
    c
}

fn table() -> &'static Mutex<HashMap<usize, Arc<Vec<f64>>>> {
    static TABLE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    TABLE.get_or_init(Default::default)
}

/// Lloyd-Max codepoints for `N(0, 1)` with `levels` levels, memoized per level count.
pub fn standard_normal_codebook(levels: usize) -> Arc<Vec<f64>> {
    if let Some(c) = table().lock().expect("table poisoned").get(&levels) {
        return c.clone();
    }
    let c = Arc::new(compute_standard_normal_codebook(levels));
    table()
        .lock()
        .expect("table poisoned")
        .entry(levels)
        .or_insert(c)
        .clone()
}

/// Optimal `levels`-level quantizer of `N(0, variance)`.
pub fn lloyd_max_scalar(levels: usize, variance: f64) -> ScalarCodebook {
    let s = variance.sqrt();
    ScalarCodebook {
        levels,
        codepoints: standard_normal_codebook(levels).iter().map(|c| c * s).collect(),
    }
}

/// On-disk table of standard-normal Lloyd-Max codebooks.
///
/// JSON: `{"format": "cfvq-lloyd-max", "version": 1, "codebooks": {"<levels>": [c_1, …]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookCache {
    pub format: String,
    pub version: u32,
    pub codebooks: BTreeMap<usize, Vec<f64>>,
}

impl CodebookCache {
    pub const FORMAT: &'static str = "cfvq-lloyd-max";
    pub const VERSION: u32 = 1;

    pub fn build(max_levels: usize) -> Self {
        CodebookCache {
            format: Self::FORMAT.into(),
            version: Self::VERSION,
            codebooks: (1..=max_levels)
                .map(|v| (v, standard_normal_codebook(v).to_vec()))
                .collect(),
        }
    }

    /// Loads the cache at `path` into the in-memory table; regenerates and rewrites
    /// it when missing, unreadable, of another format, or short of `max_levels`.
    pub fn load_or_build(path: &Path, max_levels: usize) -> Result<Self> {
        let parsed = std::fs::read_to_string(path)
            .ok()
            .and_then(|s| serde_json::from_str::<CodebookCache>(&s).ok())
            .filter(|c| {
                c.format == Self::FORMAT
                    && c.version == Self::VERSION
                    && (1..=max_levels).all(|v| c.codebooks.get(&v).is_some_and(|cb| cb.len() == v))
            });
        if let Some(cache) = parsed {
            let mut t = table().lock().expect("table poisoned");
            for (v, cb) in &cache.codebooks {
                t.entry(*v).or_insert_with(|| Arc::new(cb.clone()));
            }
            return Ok(cache);
        }
        let cache = Self::build(max_levels);
        std::fs::write(path, serde_json::to_string_pretty(&cache)?)?;
        Ok(cache)
    }
}

// ---------------------------------------------------------------------------
// Codebook assembly and integer repair

/// Places `levels[l][0] × levels[l][1]` APs per cluster on the rotated product grid
/// of the two scalar codebooks, shifted to the cluster mean.
pub fn assemble_codebook(density: &UserDensity, plan: &IntegerPlan) -> Placement {
    let mut aps = Vec::with_capacity(plan.total());
    for (comp, lv) in density.components().iter().zip(&plan.levels) {
        let spectrum = ClusterSpectrum::from_covariance(&comp.covariance);
        let s1 = lloyd_max_scalar(lv[0], spectrum.eigvals[0]);
        let s2 = lloyd_max_scalar(lv[1], spectrum.eigvals[1]);
        for &a in &s1.codepoints {
            for &b in &s2.codepoints {
                aps.push(comp.mean + spectrum.rotate(Point2::new(a, b)));
            }
        }
    }
    Placement::new(aps)
}

/// Per-dimension levels must stay within a factor of 2 of the continuous level.
pub const DIM_LOG2_WINDOW: f64 = 1.0;
/// A cluster's AP count must stay within a factor of √2 of `2^{b_l}`.
pub const CLUSTER_LOG2_WINDOW: f64 = 0.5;

fn dim_candidates(bits: f64) -> Vec<usize> {
    let lo = (bits - DIM_LOG2_WINDOW).exp2().ceil().max(1.0) as usize;
    let hi = ((bits + DIM_LOG2_WINDOW).exp2().floor() as usize).max(lo);
    (lo..=hi).collect()
}

fn cluster_candidates(c: &ClusterAllocation) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for a in dim_candidates(c.dim_bits[0]) {
        for b in dim_candidates(c.dim_bits[1]) {
            if ((a * b) as f64).log2() - c.bits <= CLUSTER_LOG2_WINDOW + 1e-12
                && c.bits - ((a * b) as f64).log2() <= CLUSTER_LOG2_WINDOW + 1e-12
            {
                out.push([a, b]);
            }
        }
    }
    if out.is_empty() {
        out.push([1, 1]);
    }
    out
}

/// Integer plans considered by [`budget_repair`]. Each level `V` satisfies
/// `|log₂V − b_{l,j}| ≤ 1`, each cluster total `P` satisfies `|log₂P − b_l| ≤ ½`,
/// and only plans using the largest reachable AP total `≤ m` are kept.
/// Sorted lexicographically.
pub fn repair_candidates(plan: &AllocationPlan, m: usize) -> Vec<IntegerPlan> {
    let mut per_cluster: Vec<Vec<[usize; 2]>> = plan.clusters.iter().map(cluster_candidates).collect();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(per_cluster.len());
    enumerate(&per_cluster, &mut current, 0, m, &mut out);
    if out.is_empty() {
        // Tight budgets: allow single-AP clusters so any m ≥ L stays feasible.
        for c in &mut per_cluster {
            if !c.contains(&[1, 1]) {
                c.insert(0, [1, 1]);
            }
        }
        enumerate(&per_cluster, &mut current, 0, m, &mut out);
    }
    let best = out.iter().map(|p: &IntegerPlan| p.total()).max();
    out.retain(|p| Some(p.total()) == best);
    out.sort();
    out
}

fn enumerate(clusters: &[Vec<[usize; 2]>], current: &mut Vec<[usize; 2]>, used: usize, m: usize, out: &mut Vec<IntegerPlan>) {
    let depth = current.len();
    if depth == clusters.len() {
        out.push(IntegerPlan { levels: current.clone() });
        return;
    }
    let reserve: usize = clusters[depth + 1..]
        .iter()
        .map(|c| c.iter().map(|[a, b]| a * b).min().unwrap_or(1))
        .sum();
    for &lv in &clusters[depth] {
        let used = used + lv[0] * lv[1];
        if used + reserve <= m {
            current.push(lv);
            enumerate(clusters, current, used, m, out);
            current.pop();
        }
    }
}

/// Picks integer levels for `plan` within `m` APs by maximizing `score` over
/// [`repair_candidates`]. Ties go to the lexicographically smallest plan.
pub fn budget_repair<F>(density: &UserDensity, plan: &AllocationPlan, m: usize, score: F) -> Result<IntegerPlan>
where
    F: Fn(&Placement) -> f64 + Sync,
{
    if plan.clusters.len() > m {
        return Err(Error::NoFeasiblePlan(m));
    }
    let rounded: Vec<[f64; 2]> = plan.continuous_levels();
    let integral = rounded
        .iter()
        .all(|l| l.iter().all(|v| (v - v.round()).abs() < 1e-9 && *v >= 1.0 - 1e-9));
    if integral {
        let direct = IntegerPlan {
            levels: rounded.iter().map(|l| l.map(|v| v.round() as usize)).collect(),
        };
        if direct.total() <= m {
            return Ok(direct);
        }
    }
    let candidates = repair_candidates(plan, m);
    if candidates.is_empty() {
        return Err(Error::NoFeasiblePlan(m));
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| score(&assemble_codebook(density, c)))
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(candidates[best].clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdfvqResult {
    pub plan: AllocationPlan,
    pub levels: IntegerPlan,
    pub placement: Placement,
}

/// Full PDFVQ placement of `m` APs for `density`, with `score` ranking integer plans.
pub fn pdfvq_run<F>(density: &UserDensity, m: usize, score: F) -> Result<PdfvqResult>
where
    F: Fn(&Placement) -> f64 + Sync,
{
    let plan = AllocationPlan::new(density, m);
    let levels = budget_repair(density, &plan, m, score)?;
    let placement = assemble_codebook(density, &levels);
    Ok(PdfvqResult {
        plan,
        levels,
        placement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::scenario::{full_covariance_density, three_cluster_density, GmmComponent, MeanUnit, Region};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn spectrum_is_orthonormal_and_reconstructs() {
        for cov in [
            Covariance::new(1e4, 2e4 / 3.0, 2e4).unwrap(),
            Covariance::new(4e4, 4e4 / 3.0, 2e4).unwrap(),
            Covariance::new(4.5e4, 4.5e4, 9e4).unwrap(),
            Covariance::spherical(1e4).unwrap(),
        ] {
            let s = ClusterSpectrum::from_covariance(&cov);
            assert!(s.eigvals[0] >= s.eigvals[1]);
            let qtq = s.eigvecs.transpose() * s.eigvecs;
            assert!((qtq - Matrix2::identity()).abs().max() < 1e-12);
            let r = s.reconstruct();
            let scale = cov.xx.abs().max(cov.yy.abs());
            assert!((r - cov.as_nalgebra()).abs().max() / scale < 1e-9);
            for j in 0..2 {
                let col = s.eigvecs.column(j);
                let lead = if col[0].abs() > 1e-15 { col[0] } else { col[1] };
                assert!(lead > 0.0);
            }
        }
    }

    #[test]
    fn full_covariance_eigenvalues_by_hand() {
        // [[1, 2/3], [2/3, 2]]: trace 3, det 14/9 → λ = (3 ± 5/3)/2.
        let s2 = 1e4;
        let s = ClusterSpectrum::from_covariance(&Covariance::new(s2, 2.0 * s2 / 3.0, 2.0 * s2).unwrap());
        assert!(rel(s.eigvals[0], s2 * 7.0 / 3.0) < 1e-12);
        assert!(rel(s.eigvals[1], s2 * 2.0 / 3.0) < 1e-12);
        assert!(rel(s.c, s2 * 14f64.sqrt() / 3.0) < 1e-12);
    }

    #[test]
    fn single_cluster_takes_the_whole_budget() {
        let d = UserDensity::gaussian(Point2::ORIGIN, Covariance::new(3.0, 1.0, 2.0).unwrap());
        for m in [1, 7, 18, 32] {
            assert!(rel(cluster_allocation(&d, m)[0], m as f64) < 1e-12);
        }
    }

    #[test]
    fn spherical_three_cluster_allocation() {
        let plan = AllocationPlan::new(&three_cluster_density(MeanUnit::Km), 32);
        let totals: Vec<f64> = plan.clusters.iter().map(|c| c.levels).collect();
        for (got, want) in totals.iter().zip([14.85, 8.57, 8.57]) {
            assert!((got - want).abs() < 0.01, "{got}");
        }
        for (c, want) in plan.clusters.iter().zip([3.85, 2.93, 2.93]) {
            for v in c.dim_levels {
                assert!((v - want).abs() < 0.01, "{v}");
            }
        }
    }

    #[test]
    fn full_covariance_allocation_and_identities() {
        let density = full_covariance_density();
        let plan = AllocationPlan::new(&density, 32);
        // Independent oracle: √(p c) with c from the hand eigen-decomposition.
        let s2 = 1e4;
        let c = [s2, s2 * 14f64.sqrt() / 3.0, s2];
        let w = [0.6, 0.2, 0.2];
        let scores: Vec<f64> = (0..3).map(|l| (w[l] * c[l]).sqrt()).collect();
        let sum: f64 = scores.iter().sum();
        for (l, alloc) in plan.clusters.iter().enumerate() {
            assert!(rel(alloc.levels, 32.0 * scores[l] / sum) < 1e-12);
        }
        for (got, want) in plan.clusters.iter().zip([14.40, 9.29, 8.31]) {
            assert!(rel(got.levels, want) < 0.02);
        }
        let total: f64 = plan.clusters.iter().map(|c| c.levels).sum();
        assert!(rel(total, 32.0) < 1e-9);

        let c2 = &plan.clusters[1];
        assert!((c2.bits - 9.285f64.log2()).abs() < 2e-3);
        let ratios = c2.spectrum.eigvals.map(|l| l / c2.spectrum.c);
        assert!((ratios[0] - 1.871).abs() < 1e-3 && (ratios[1] - 0.535).abs() < 1e-3);
        assert!((c2.dim_levels[0] - 4.17).abs() < 0.01 && (c2.dim_levels[1] - 2.23).abs() < 0.01);
        for a in &plan.clusters {
            assert!(rel(a.dim_levels[0] * a.dim_levels[1], a.levels) < 1e-9);
            assert!((a.dim_bits[0] + a.dim_bits[1] - a.bits).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_clusters_split_bits_evenly() {
        let s = ClusterSpectrum::from_covariance(&Covariance::spherical(50.0).unwrap());
        let (b, v) = dimension_allocation(3.3, &s);
        assert!((b[0] - 1.65).abs() < 1e-12 && (b[1] - 1.65).abs() < 1e-12);
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn lloyd_max_small_cases() {
        assert_eq!(lloyd_max_scalar(1, 4.0).codepoints, vec![0.0]);
        let two = lloyd_max_scalar(2, 1.0).codepoints;
        let a = (2.0 / std::f64::consts::PI).sqrt();
        assert!((two[0] + a).abs() < 1e-9 && (two[1] - a).abs() < 1e-9);
        let scaled = lloyd_max_scalar(2, 9.0).codepoints;
        assert!((scaled[1] - 3.0 * a).abs() < 1e-9);
    }

    #[test]
    fn lloyd_max_is_a_fixed_point() {
        for v in 1..=16 {
            let c = standard_normal_codebook(v);
            assert!(c.windows(2).all(|w| w[0] < w[1]));
            for i in 0..v {
                assert!((c[i] + c[v - 1 - i]).abs() < 1e-9);
            }
            let t = thresholds(&c);
            for i in 0..v {
                assert!((std_normal_interval_mean(t[i], t[i + 1]) - c[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lloyd_max_four_levels_against_sampled_lloyd() {
        // Reduced-size version of the acceptance oracle (10⁶ samples, looser tolerance).
        let mut rng = rng_from_seed(5);
        let mut xs: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        xs.sort_by(f64::total_cmp);
        let mut c = vec![-1.5, -0.5, 0.5, 1.5];
        for _ in 0..200 {
            let t = thresholds(&c);
            let mut sums = [0.0; 4];
            let mut counts = [0usize; 4];
            let mut cell = 0;
            for &x in &xs {
                while x > t[cell + 1] {
                    cell += 1;
                }
                sums[cell] += x;
                counts[cell] += 1;
            }
            c = (0..4).map(|i| sums[i] / counts[i] as f64).collect();
        }
        let lm = standard_normal_codebook(4);
        for (a, b) in c.iter().zip(lm.iter()) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn assembled_codebook_for_two_by_two() {
        let d = UserDensity::gaussian(Point2::new(10.0, -20.0), Covariance::spherical(4.0).unwrap());
        let p = assemble_codebook(&d, &IntegerPlan { levels: vec![[2, 2]] });
        let a = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        let mut want = Vec::new();
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                want.push(Point2::new(10.0 + sx * a, -20.0 + sy * a));
            }
        }
        for (g, w) in p.aps().iter().zip(&want) {
            assert!(g.dist(*w) < 1e-9);
        }
    }

    #[test]
    fn origin_codebook_is_sign_symmetric() {
        let d = UserDensity::gaussian(Point2::ORIGIN, Covariance::new(9.0, 0.0, 4.0).unwrap());
        let p = assemble_codebook(&d, &IntegerPlan { levels: vec![[3, 4]] });
        for q in p.aps() {
            for mirror in [Point2::new(-q.x, q.y), Point2::new(q.x, -q.y)] {
                assert!(p.aps().iter().any(|r| r.dist(mirror) < 1e-9));
            }
        }
    }

    #[test]
    fn rotated_cluster_is_equivariant() {
        let s2 = 1e4;
        let cov = Covariance::new(s2, 2.0 * s2 / 3.0, 2.0 * s2).unwrap();
        let spectrum = ClusterSpectrum::from_covariance(&cov);
        let mean = Point2::new(30.0, 40.0);
        let rotated = UserDensity::gaussian(mean, cov);
        let axis = UserDensity::gaussian(
            Point2::ORIGIN,
            Covariance::new(spectrum.eigvals[0], 0.0, spectrum.eigvals[1]).unwrap(),
        );
        let plan = IntegerPlan { levels: vec![[4, 2]] };
        let a = assemble_codebook(&rotated, &plan);
        let b = assemble_codebook(&axis, &plan);
        for (p, q) in a.aps().iter().zip(b.aps()) {
            assert!(p.dist(mean + spectrum.rotate(*q)) < 1e-12 * 1e3);
        }
    }

    #[test]
    fn integral_plan_needs_no_search() {
        let d = UserDensity::gaussian(Point2::ORIGIN, Covariance::spherical(1.0).unwrap());
        let plan = AllocationPlan::new(&d, 4);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let got = budget_repair(&d, &plan, 4, |_| {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            0.0
        })
        .unwrap();
        assert_eq!(got.levels, vec![[2, 2]]);
        assert_eq!(calls.into_inner(), 0);
    }

    #[test]
    fn candidates_reach_full_budget_plans_off_the_rounding_grid() {
        let spherical = AllocationPlan::new(&three_cluster_density(MeanUnit::Km), 32);
        let cands = repair_candidates(&spherical, 32);
        assert!(cands.iter().all(|c| c.total() == 32));
        assert!(cands.contains(&IntegerPlan { levels: vec![[4, 4], [2, 4], [2, 4]] }));

        let full = AllocationPlan::new(&full_covariance_density(), 32);
        let cands = repair_candidates(&full, 32);
        assert!(cands.iter().all(|c| c.total() == 32));
        // Cluster 2 levels are (major, minor) eigen-directions.
        assert!(cands.contains(&IntegerPlan { levels: vec![[4, 4], [4, 2], [4, 2]] }));
    }

    #[test]
    fn repair_picks_the_best_score_and_respects_budget() {
        let d = three_cluster_density(MeanUnit::Km);
        let plan = AllocationPlan::new(&d, 32);
        // Prefer spreading APs: score by the sum of pairwise distances.
        let score = |p: &Placement| {
            let a = p.aps();
            let mut s = 0.0;
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    s += a[i].dist(a[j]);
                }
            }
            s
        };
        let best = budget_repair(&d, &plan, 32, score).unwrap();
        assert!(best.total() <= 32);
        for c in repair_candidates(&plan, 32) {
            assert!(score(&assemble_codebook(&d, &c)) <= score(&assemble_codebook(&d, &best)) + 1e-9);
        }
        let res = pdfvq_run(&d, 32, score).unwrap();
        assert_eq!(res.placement.len(), res.levels.total());
    }

    #[test]
    fn non_power_of_two_budget() {
        let d = crate::scenario::drift_density_a();
        let plan = AllocationPlan::new(&d, 18);
        assert!(rel(plan.clusters[0].levels, 18.0) < 1e-12);
        let res = pdfvq_run(&d, 18, |p| -(p.len() as f64)).unwrap();
        assert!(res.levels.total() <= 18);
        assert_eq!(res.placement.len(), res.levels.total());
    }

    #[test]
    fn too_many_clusters_for_budget() {
        let d = three_cluster_density(MeanUnit::Km);
        let plan = AllocationPlan::new(&d, 2);
        assert!(matches!(budget_repair(&d, &plan, 2, |_| 0.0), Err(Error::NoFeasiblePlan(2))));
    }

    #[test]
    fn covariance_scaling_leaves_allocation_unchanged() {
        let d = full_covariance_density();
        let scaled = d.with_scaled_covariances(4.0).unwrap();
        let a = AllocationPlan::new(&d, 32);
        let b = AllocationPlan::new(&scaled, 32);
        for (x, y) in a.clusters.iter().zip(&b.clusters) {
            assert!((x.bits - y.bits).abs() < 1e-12);
            assert!((x.dim_bits[0] - y.dim_bits[0]).abs() < 1e-12);
        }
        let plan = IntegerPlan { levels: vec![[4, 4], [4, 2], [4, 2]] };
        let pa = assemble_codebook(&d, &plan);
        let pb = assemble_codebook(&scaled, &plan);
        let means: Vec<Point2> = d.components().iter().map(|c| c.mean).collect();
        let owners = plan.levels.iter().enumerate().flat_map(|(l, [a, b])| std::iter::repeat_n(l, a * b));
        for ((p, q), l) in pa.aps().iter().zip(pb.aps()).zip(owners) {
            let want = means[l] + (*p - means[l]) * 2.0;
            assert!(q.dist(want) < 1e-9);
        }
    }

    #[test]
    fn cache_file_round_trip_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lloyd_max.json");
        let built = CodebookCache::load_or_build(&path, 8).unwrap();
        assert!(path.exists());
        let loaded = CodebookCache::load_or_build(&path, 8).unwrap();
        assert_eq!(built, loaded);
        std::fs::write(&path, "not json").unwrap();
        let rebuilt = CodebookCache::load_or_build(&path, 8).unwrap();
        assert_eq!(rebuilt, built);
    }

    #[test]
    fn interval_mass_matches_cdf_in_tails() {
        let n = Normal::standard();
        for (a, b) in [(-8.0, -6.0), (5.0, 7.0), (-1.0, 2.0), (0.5, f64::INFINITY)] {
            let want = n.cdf(b) - n.cdf(a);
            let got = std_normal_mass(a, b);
            assert!((got - want).abs() <= 1e-12 + 1e-6 * want, "({a}, {b}) {got} vs {want}");
        }
    }

    #[test]
    fn unused_region_does_not_matter() {
        let comp = GmmComponent { weight: 1.0, mean: Point2::ORIGIN, covariance: Covariance::spherical(1.0).unwrap() };
        let a = UserDensity::new(vec![comp], Region::centered_square(10.0)).unwrap();
        let b = UserDensity::new(vec![comp], Region::centered_square(1e4)).unwrap();
        assert_eq!(AllocationPlan::new(&a, 9), AllocationPlan::new(&b, 9));
    }
}
