//! User-density models and deterministic user sampling.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A position in the plane, in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(self, other: Point2) -> f64 {
        (self - other).norm_sq()
    }

    pub fn dist(self, other: Point2) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Point2 {
    fn add_assign(&mut self, rhs: Point2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Arithmetic mean of a non-empty set of points.
pub fn centroid<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Option<Point2> {
    let mut sum = Point2::ORIGIN;
    let mut n = 0usize;
    for p in points {
        sum += *p;
        n += 1;
    }
    (n > 0).then(|| sum * (1.0 / n as f64))
}

/// Symmetric positive-definite 2x2 covariance in m², serialized as `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Covariance {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Covariance {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Result<Self> {
        let cov = Covariance { xx, xy, yy };
        if ![xx, xy, yy].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidDensity("covariance has non-finite entries".into()));
        }
        if xx <= 0.0 || cov.det() <= 0.0 {
            return Err(Error::InvalidDensity(format!(
                "covariance [[{xx}, {xy}], [{xy}, {yy}]] is not positive definite"
            )));
        }
        Ok(cov)
    }

    pub fn spherical(variance: f64) -> Result<Self> {
        Self::new(variance, 0.0, variance)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(self.xx * a, self.xy * a, self.yy * a)
    }

    /// Quadratic form `dᵀ Σ⁻¹ d`.
    pub fn mahalanobis_sq(&self, d: Point2) -> f64 {
        (self.yy * d.x * d.x - 2.0 * self.xy * d.x * d.y + self.xx * d.y * d.y) / self.det()
    }

    /// Symmetric square root `S` with `S S = Σ`, returned as `(s_xx, s_xy, s_yy)`.
    pub fn sqrt(&self) -> (f64, f64, f64) {
        // For SPD 2x2: sqrt(A) = (A + sqrt(det A) I) / sqrt(tr A + 2 sqrt(det A)).
        let s = self.det().sqrt();
        let t = (self.trace() + 2.0 * s).sqrt();
        ((self.xx + s) / t, self.xy / t, (self.yy + s) / t)
    }

    pub fn as_nalgebra(&self) -> nalgebra::Matrix2<f64> {
        nalgebra::Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }
}

impl TryFrom<[[f64; 2]; 2]> for Covariance {
    type Error = Error;

    fn try_from(m: [[f64; 2]; 2]) -> Result<Self> {
        let scale = m[0][0].abs().max(m[1][1].abs()).max(1.0);
        if (m[0][1] - m[1][0]).abs() > 1e-9 * scale {
            return Err(Error::InvalidDensity(format!(
                "covariance is not symmetric: off-diagonals {} and {}",
                m[0][1], m[1][0]
            )));
        }
        Covariance::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1])
    }
}

impl From<Covariance> for [[f64; 2]; 2] {
    fn from(c: Covariance) -> Self {
        [[c.xx, c.xy], [c.xy, c.yy]]
    }
}

/// One Gaussian mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Point2,
    pub covariance: Covariance,
}

impl GmmComponent {
    pub fn pdf(&self, p: Point2) -> f64 {
        let q = self.covariance.mahalanobis_sq(p - self.mean);
        (-0.5 * q).exp() / (2.0 * PI * self.covariance.det().sqrt())
    }
}

/// Axis-aligned bounding box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Point2,
    pub max: Point2,
}

impl Region {
    /// Square of side `side` centered at the origin.
    pub fn centered_square(side: f64) -> Self {
        let h = 0.5 * side;
        Region {
            min: Point2::new(-h, -h),
            max: Point2::new(h, h),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Grows the box by `margin` meters on every side.
    pub fn padded(&self, margin: f64) -> Self {
        Region {
            min: self.min - Point2::new(margin, margin),
            max: self.max + Point2::new(margin, margin),
        }
    }

    /// Midpoint-rule integral of `f` on an `n x n` grid.
    pub fn integrate(&self, n: usize, f: impl Fn(Point2) -> f64) -> f64 {
        let hx = self.width() / n as f64;
        let hy = self.height() / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x = self.min.x + (i as f64 + 0.5) * hx;
            let mut row = 0.0;
            for j in 0..n {
                let y = self.min.y + (j as f64 + 0.5) * hy;
                row += f(Point2::new(x, y));
            }
            total += row;
        }
        total * hx * hy
    }
}

impl Default for Region {
    fn default() -> Self {
        Region::centered_square(2000.0)
    }
}

/// Unit in which mixture means are written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanUnit {
    #[default]
    M,
    Km,
}

impl MeanUnit {
    fn meters(self) -> f64 {
        match self {
            MeanUnit::M => 1.0,
            MeanUnit::Km => 1000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensitySpec {
    components: Vec<GmmComponent>,
    #[serde(default)]
    region: Region,
    #[serde(default)]
    mean_unit: MeanUnit,
}

/// Gaussian mixture model of user positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensitySpec", into = "DensitySpec")]
pub struct UserDensity {
    components: Vec<GmmComponent>,
    region: Region,
    // Cumulative weights and covariance square roots, derived.
    cumulative: Vec<f64>,
    roots: Vec<(f64, f64, f64)>,
}

impl UserDensity {
    pub fn new(components: Vec<GmmComponent>, region: Region) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidDensity("mixture needs at least one component".into()));
        }
        for (l, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::InvalidDensity(format!(
                    "component {l} weight {} outside (0, 1]",
                    c.weight
                )));
            }
            if !c.mean.is_finite() {
                return Err(Error::InvalidDensity(format!("component {l} mean is not finite")));
            }
            // Re-validate in case the covariance was built field by field.
            Covariance::new(c.covariance.xx, c.covariance.xy, c.covariance.yy)?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDensity(format!("weights sum to {total}, expected 1")));
        }
        if !(region.width() > 0.0 && region.height() > 0.0) {
            return Err(Error::InvalidDensity("region has zero area".into()));
        }
        let mut acc = 0.0;
        let cumulative = components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        let roots = components.iter().map(|c| c.covariance.sqrt()).collect();
        Ok(UserDensity {
            components,
            region,
            cumulative,
            roots,
        })
    }

    /// Single Gaussian over the default region.
    pub fn gaussian(mean: Point2, covariance: Covariance) -> Self {
        Self::new(
            vec![GmmComponent {
                weight: 1.0,
                mean,
                covariance,
            }],
            Region::default(),
        )
        .expect("single valid component")
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Mixture density at `p`, in 1/m².
    pub fn pdf(&self, p: Point2) -> f64 {
        self.components.iter().map(|c| c.weight * c.pdf(p)).sum()
    }

    /// Index of the component an inverse-CDF draw `u ∈ [0, 1)` selects.
    pub fn component_for(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1)
    }

    /// Draws one user position.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        let l = self.component_for(rng.random::<f64>());
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let (a, b, c) = self.roots[l];
        self.components[l].mean + Point2::new(a * z0 + b * z1, b * z0 + c * z1)
    }

    /// Draws `n` i.i.d. user positions from `rng`. Samples are not clipped to the region.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point2> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Returns a copy with every covariance multiplied by `a`.
    pub fn with_scaled_covariances(&self, a: f64) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(GmmComponent {
                    covariance: c.covariance.scaled(a)?,
                    ..*c
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components, self.region)
    }

    /// Bounding box padded to cover every component out to `n_sigma` standard deviations.
    pub fn support_box(&self, n_sigma: f64) -> Region {
        let mut r = self.region;
        for c in &self.components {
            let sx = n_sigma * c.covariance.xx.sqrt();
            let sy = n_sigma * c.covariance.yy.sqrt();
            r.min.x = r.min.x.min(c.mean.x - sx);
            r.min.y = r.min.y.min(c.mean.y - sy);
            r.max.x = r.max.x.max(c.mean.x + sx);
            r.max.y = r.max.y.max(c.mean.y + sy);
        }
        r
    }
}

impl TryFrom<DensitySpec> for UserDensity {
    type Error = Error;

    fn try_from(spec: DensitySpec) -> Result<Self> {
        let scale = spec.mean_unit.meters();
        let components = spec
            .components
            .into_iter()
            .map(|c| GmmComponent {
                mean: c.mean * scale,
                ..c
            })
            .collect();
        UserDensity::new(components, spec.region)
    }
}

impl From<UserDensity> for DensitySpec {
    fn from(d: UserDensity) -> Self {
        DensitySpec {
            components: d.components,
            region: d.region,
            mean_unit: MeanUnit::M,
        }
    }
}

/// Draws `n` users from `density` with a generator seeded by `seed`.
pub fn sample_users(density: &UserDensity, n: usize, seed: u64) -> Vec<Point2> {
    density.sample(n, &mut rng_from_seed(seed))
}

/// Mixture density value at `p`.
pub fn pdf_eval(density: &UserDensity, p: Point2) -> f64 {
    density.pdf(p)
}

/// Mixture used throughout the desk-scale experiments: three spherical clusters
/// with σ = 100 m and weights 0.6 / 0.2 / 0.2, means at (0.5, −0.5), (0, 0.5) and
/// (−0.5, 0) read in `unit`.
pub fn three_cluster_density(unit: MeanUnit) -> UserDensity {
    let s = unit.meters();
    let cov = Covariance::spherical(100.0 * 100.0).expect("valid");
    let comp = |w: f64, x: f64, y: f64| GmmComponent {
        weight: w,
        mean: Point2::new(x * s, y * s),
        covariance: cov,
    };
    UserDensity::new(
        vec![comp(0.6, 0.5, -0.5), comp(0.2, 0.0, 0.5), comp(0.2, -0.5, 0.0)],
        Region::default(),
    )
    .expect("valid preset")
}

/// Three-cluster mixture whose second component has the full covariance
/// σ²·[[1, 2/3], [2/3, 2]], σ = 100 m.
pub fn full_covariance_density() -> UserDensity {
    let mut d = three_cluster_density(MeanUnit::Km);
    let s2 = 100.0 * 100.0;
    d.components[1].covariance =
        Covariance::new(s2, 2.0 * s2 / 3.0, 2.0 * s2).expect("valid preset");
    UserDensity::new(d.components, d.region).expect("valid preset")
}

/// Single-cluster density "A": σ = 200 m, Σ = σ²·[[1, 1/3], [1/3, 1/2]].
pub fn drift_density_a() -> UserDensity {
    let s2 = 200.0 * 200.0;
    UserDensity::gaussian(
        Point2::ORIGIN,
        Covariance::new(s2, s2 / 3.0, s2 / 2.0).expect("valid preset"),
    )
}

/// Single-cluster density "B": σ = 300 m, Σ = σ²·[[1/2, 1/2], [1/2, 1]].
pub fn drift_density_b() -> UserDensity {
    let s2 = 300.0 * 300.0;
    UserDensity::gaussian(
        Point2::ORIGIN,
        Covariance::new(s2 / 2.0, s2 / 2.0, s2).expect("valid preset"),
    )
}
