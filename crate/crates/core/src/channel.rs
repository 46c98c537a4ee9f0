//! Large-scale fading, Rayleigh small-scale fading and zero-forcing SNR.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Point2;
use crate::vq::Placement;

/// Pathloss model `β = c·z / (d^γ + ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Pathloss constant `c`.
    #[serde(default = "default_constant")]
    pub constant_c: f64,
    /// Pathloss exponent `γ`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Regularizer added to `d^γ`, in m^γ.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Log-normal shadowing standard deviation in dB. `None` disables shadowing.
    #[serde(default)]
    pub shadowing_sigma_db: Option<f64>,
}

fn default_constant() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    3.5
}
fn default_epsilon() -> f64 {
    1.0
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            constant_c: default_constant(),
            gamma: default_gamma(),
            epsilon: default_epsilon(),
            shadowing_sigma_db: None,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.constant_c > 0.0 && self.constant_c.is_finite()) {
            return Err(Error::config("channel.constant_c", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("channel.gamma", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("channel.epsilon", "must be positive"));
        }
        if let Some(s) = self.shadowing_sigma_db {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("channel.shadowing_sigma_db", "must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Pathloss for squared distance `d2` without shadowing.
    #[inline]
    pub fn beta_from_dist_sq(&self, d2: f64) -> f64 {
        self.constant_c / (d2.powf(0.5 * self.gamma) + self.epsilon)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Large-scale fading coefficient between user `p` and AP `q`; `shadow` is the
/// linear shadowing draw `z` (1 when absent).
pub fn large_scale_coeff(p: Point2, q: Point2, params: &ChannelParams, shadow: Option<f64>) -> f64 {
    shadow.unwrap_or(1.0) * params.beta_from_dist_sq(p.dist_sq(q))
}

/// One realization of the M×K uplink channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    /// `g_mk = √β_mk · h_mk`, row per AP, column per user.
    pub gains: DMatrix<Complex64>,
    pub betas: DMatrix<f64>,
}

impl ChannelMatrix {
    pub fn num_aps(&self) -> usize {
        self.gains.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.gains.ncols()
    }
}

/// Circularly-symmetric complex normal draw with unit variance.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Large-scale coefficients for every (AP, user) pair, drawing shadowing if enabled.
pub fn large_scale_matrix<R: Rng + ?Sized>(
    users: &[Point2],
    placement: &Placement,
    params: &ChannelParams,
    rng: &mut R,
) -> DMatrix<f64> {
    let aps = placement.aps();
    DMatrix::from_fn(aps.len(), users.len(), |m, k| {
        let z = params.shadowing_sigma_db.map(|sigma| {
            let n: f64 = rng.sample(StandardNormal);
            10f64.powf(sigma * n / 10.0)
        });
        large_scale_coeff(users[k], aps[m], params, z)
    })
}

/// Draws small-scale fading on top of fixed large-scale coefficients.
pub fn draw_fading<R: Rng + ?Sized>(betas: &DMatrix<f64>, rng: &mut R) -> ChannelMatrix {
    let gains = DMatrix::from_fn(betas.nrows(), betas.ncols(), |m, k| {
        cn01(rng) * betas[(m, k)].sqrt()
    });
    ChannelMatrix {
        gains,
        betas: betas.clone(),
    }
}

/// Draws a full channel realization for `users` served by `placement`.
pub fn draw_channel<R: Rng + ?Sized>(
    users: &[Point2],
    placement: &Placement,
    params: &ChannelParams,
    rng: &mut R,
) -> ChannelMatrix {
    let betas = large_scale_matrix(users, placement, params, rng);
    draw_fading(&betas, rng)
}

const PIVOT_TOL: f64 = 1e-12;

/// Diagonal of `(GᴴG)⁻¹`. Fails when the Gram matrix is not numerically positive definite.
pub fn zf_inverse_diag(channel: &ChannelMatrix) -> Result<Vec<f64>> {
    let g = &channel.gains;
    if g.nrows() < g.ncols() {
        return Err(Error::TooFewAps {
            aps: g.nrows(),
            users: g.ncols(),
        });
    }
    let gram = g.adjoint() * g;
    let chol = gram.clone().cholesky().ok_or(Error::SingularGram)?;
    // A pivot that keeps almost none of the user's own channel energy means the
    // column lies in the span of the previous ones.
    let l = chol.l_dirty();
    let degenerate = (0..gram.nrows()).any(|k| l[(k, k)].norm_sqr() <= PIVOT_TOL * gram[(k, k)].re);
    if degenerate {
        return Err(Error::SingularGram);
    }
    let inv = chol.inverse();
    let diag: Vec<f64> = (0..inv.nrows()).map(|k| inv[(k, k)].re).collect();
    if diag.iter().all(|d| d.is_finite() && *d > 0.0) {
        Ok(diag)
    } else {
        Err(Error::SingularGram)
    }
}

/// Per-user zero-forcing SNR `ψ_k = ρ_r / [(GᴴG)⁻¹]_kk` at linear power `rho_r`.
pub fn zf_snr(channel: &ChannelMatrix, rho_r: f64) -> Result<Vec<f64>> {
    Ok(zf_inverse_diag(channel)?
        .into_iter()
        .map(|d| rho_r / d)
        .collect())
}

/// Large-M approximation of the ZF SNR of a user: `ρ_r Σ_m β_m`.
pub fn asymptotic_snr(user: Point2, placement: &Placement, params: &ChannelParams, rho_r: f64) -> f64 {
    rho_r
        * placement
            .aps()
            .iter()
            .map(|&q| params.beta_from_dist_sq(user.dist_sq(q)))
            .sum::<f64>()
}
