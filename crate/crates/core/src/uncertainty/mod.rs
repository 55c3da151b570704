//! Ellipsoidal confidence regions for data-driven predictions.
//!
//! Given `(g, delta)` from any predictor, the prediction error is Gaussian
//! with mean `G delta` and covariance
//! `Sigma = [-G I] Sigma_g [-G I]^T + G Sigma_yini G^T`, where `G` is the
//! free-response map. The region is `{ y0 : |y - G delta - y0|^2_{Sigma^-1} <= mu_p }`.

pub mod chi2;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

pub use chi2::{chi2_cdf, chi2_quantile};

use crate::error::{Error, Result};
use crate::linalg;
use crate::predictors::{NoiseModel, PredictionResult};

/// Relative jitter for the single positive-definiteness repair of `Sigma`.
pub const SIGMA_JITTER: f64 = 1e-10;

/// Degrees of freedom for the chi-squared radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofPolicy {
    /// `n_y Lp`, the dimension of the error vector.
    #[default]
    OutputDimension,
    /// `Lp` alone; coincides with the default for single-output systems.
    Horizon { n_y: usize },
}

impl DofPolicy {
    pub fn dof(self, output_dim: usize) -> Result<u32> {
        let d = match self {
            Self::OutputDimension => output_dim,
            Self::Horizon { n_y } => {
                if n_y == 0 || !output_dim.is_multiple_of(n_y) {
                    return Err(Error::DimensionMismatch(format!(
                        "output dimension {output_dim} is not a multiple of n_y = {n_y}"
                    )));
                }
                output_dim / n_y
            }
        };
        u32::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("invalid degrees of freedom {d}")))
    }
}

/// Ellipsoid `{ y : (y - center)^T Sigma^-1 (y - center) <= mu_p }`.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    center: DVector<f64>,
    sigma: DMatrix<f64>,
    mu_p: f64,
    p: f64,
    dof: u32,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for ConfidenceRegion {
    fn eq(&self, other: &Self) -> bool {
        self.center == other.center
            && self.sigma == other.sigma
            && self.mu_p == other.mu_p
            && self.p == other.p
            && self.dof == other.dof
    }
}

impl ConfidenceRegion {
    /// Builds a region with radius `chi2_quantile(p, dof)`.
    pub fn new(center: DVector<f64>, sigma: DMatrix<f64>, p: f64, dof: u32) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("confidence level {p} must lie in (0, 1)")));
        }
        if dof == 0 {
            return Err(Error::InvalidArgument("dof must be positive".into()));
        }
        Self::with_radius(center, sigma, chi2_quantile(p, dof), p, dof)
    }

    /// Builds a region with an explicit radius, as read back from a file.
    pub fn with_radius(center: DVector<f64>, sigma: DMatrix<f64>, mu_p: f64, p: f64, dof: u32) -> Result<Self> {
        let n = center.len();
        if sigma.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "Sigma is {}x{}, center has {n} entries",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if !(mu_p > 0.0) || !mu_p.is_finite() {
            return Err(Error::InvalidArgument(format!("radius {mu_p} must be positive")));
        }
        if linalg::max_asymmetry(&sigma) > 1e-10 * sigma.norm().max(1.0) {
            return Err(Error::InvalidCovariance("Sigma is not symmetric".into()));
        }
        let chol = linalg::cholesky_with_jitter(&sigma, SIGMA_JITTER).ok_or(Error::SingularSigma)?;
        Ok(Self { center, sigma, mu_p, p, dof, chol })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn mu_p(&self) -> f64 {
        self.mu_p
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn dof(&self) -> u32 {
        self.dof
    }
    pub fn dim(&self) -> usize {
        self.center.len()
    }
    /// Lower Cholesky factor of `Sigma` (after any jitter).
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `(y - center)^T Sigma^-1 (y - center)` through a triangular solve.
    pub fn quadratic_form(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("point has {} entries, region {}", y.len(), self.dim())));
        }
        let r = y - &self.center;
        let w = self.chol.l_dirty().solve_lower_triangular(&r).ok_or(Error::SingularSigma)?;
        Ok(w.norm_squared())
    }

    /// Closed-set membership test.
    pub fn contains(&self, y: &DVector<f64>) -> Result<bool> {
        Ok(self.quadratic_form(y)? <= self.mu_p)
    }

    /// `n_points` boundary samples `center + sqrt(mu_p) L (cos t, sin t)`,
    /// `t` uniform on `[0, 2 pi)`.
    pub fn ellipse_boundary(&self, n_points: usize) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return Err(Error::NotTwoDimensional(self.dim()));
        }
        let l = self.chol.l();
        let r = self.mu_p.sqrt();
        Ok((0..n_points)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n_points as f64;
                let (s, c) = t.sin_cos();
                let x = l[(0, 0)] * c;
                let y = l[(1, 0)] * c + l[(1, 1)] * s;
                [self.center[0] + r * x, self.center[1] + r * y]
            })
            .collect())
    }
}

pub fn contains(region: &ConfidenceRegion, y_true: &DVector<f64>) -> Result<bool> {
    region.contains(y_true)
}

pub fn ellipse_boundary(region: &ConfidenceRegion, n_points: usize) -> Result<Vec<[f64; 2]>> {
    region.ellipse_boundary(n_points)
}

/// Error covariance `[-G I] Sigma_g [-G I]^T + G Sigma_yini G^T`.
///
/// For i.i.d. noise `Sigma_g = s2 |g|^2 I`, giving
/// `s2 |g|^2 (G G^T + I) + s2 G G^T`.
pub fn assemble_sigma(gamma: &DMatrix<f64>, g: &DVector<f64>, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let (ny_lp, ny_l0) = gamma.shape();
    let ggt = gamma * gamma.transpose();
    let mut sigma = match noise {
        NoiseModel::Iid { sigma2 } => {
            let g2 = g.norm_squared();
            let mut s = &ggt * (sigma2 * g2 + sigma2);
            for i in 0..ny_lp {
                s[(i, i)] += sigma2 * g2;
            }
            s
        }
        NoiseModel::General { sigma_y, sigma_yini } => {
            let block = ny_l0 + ny_lp;
            let m = g.len();
            if sigma_y.shape() != (block * m, block * m) {
                return Err(Error::DimensionMismatch(format!(
                    "Sigma_Y is {}x{}, expected {1}x{1}",
                    sigma_y.nrows(),
                    block * m
                )));
            }
            if sigma_yini.shape() != (ny_l0, ny_l0) {
                return Err(Error::DimensionMismatch(format!(
                    "Sigma_yini is {}x{}, expected {ny_l0}x{ny_l0}",
                    sigma_yini.nrows(),
                    sigma_yini.ncols()
                )));
            }
            // Sigma_g = sum_jk g_j g_k Sigma_Y^(j,k)
            let mut sigma_g = DMatrix::zeros(block, block);
            for j in 0..m {
                for k in 0..m {
                    let w = g[j] * g[k];
                    if w != 0.0 {
                        sigma_g += sigma_y.view((j * block, k * block), (block, block)) * w;
                    }
                }
            }
            let mut t = DMatrix::zeros(ny_lp, block);
            t.view_mut((0, 0), (ny_lp, ny_l0)).copy_from(&(-gamma));
            t.view_mut((0, ny_l0), (ny_lp, ny_lp)).fill_with_identity();
            &t * sigma_g * t.transpose() + gamma * sigma_yini * gamma.transpose()
        }
    };
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// Confidence region around `y - G delta` at level `p`.
pub fn confidence_region(
    result: &PredictionResult,
    gamma: &DMatrix<f64>,
    noise: &NoiseModel,
    p: f64,
    dof_policy: DofPolicy,
) -> Result<ConfidenceRegion> {
    if gamma.nrows() != result.y.len() || gamma.ncols() != result.delta.len() {
        return Err(Error::DimensionMismatch(format!(
            "gamma is {}x{}, prediction has {} outputs and {} slack entries",
            gamma.nrows(),
            gamma.ncols(),
            result.y.len(),
            result.delta.len()
        )));
    }
    let center = &result.y - gamma * &result.delta;
    let sigma = assemble_sigma(gamma, &result.g, noise)?;
    let dof = dof_policy.dof(result.y.len())?;
    ConfidenceRegion::new(center, sigma, p, dof)
}

/// Predicted mean-squared error `tr(Sigma) + delta^T G^T G delta`.
pub fn estimated_mse(gamma: &DMatrix<f64>, result: &PredictionResult, noise: &NoiseModel) -> Result<f64> {
    let sigma = assemble_sigma(gamma, &result.g, noise)?;
    let bias = gamma * &result.delta;
    Ok(sigma.trace() + bias.norm_squared())
}
