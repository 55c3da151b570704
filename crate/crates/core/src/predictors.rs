//! Data-driven output predictors.
//!
//! Every predictor returns `y = Y_f g` for some `g` satisfying
//! `col(U_p, U_f) g = col(u_ini, u)` and `Y_p g = y_ini + delta`. They differ
//! in how `g` and the slack `delta` are traded off:
//!
//! | kind    | objective                                   |
//! |---------|---------------------------------------------|
//! | Pinv/Sub| minimum-norm `g` with `delta = 0`           |
//! | SMM     | `|delta|^2 + n_y (Lp s2/|g_pinv|^2 + L s2) |g|^2` |
//! | WD      | `|delta|^2 + n_y L0 s2 |g|^2`                |
//! | MinMSE  | `|delta|_Q^2 + s2 (n_y Lp + tr Q) |g|^2`, `Q = G^T G` |

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, StateSpaceModel};
use crate::signal::{GammaKey, Partition, SignalMatrix};

/// Relative jitter for the single Cholesky retry on `F` and `U F^-1 U^T`.
pub const SOLVER_JITTER: f64 = 1e-12;

/// Relative residual accepted on the input constraint after a solve.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Gaussian output-noise description.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// `w_t ~ N(0, sigma2 I)` with a Page (or independent-experiment) matrix.
    Iid { sigma2: f64 },
    /// `sigma_y` is the covariance of `vec(col(Y_p, Y_f))`, size `(n_y L M)^2`;
    /// `sigma_yini` the covariance of `y_ini`, size `(n_y L0)^2`.
    General { sigma_y: DMatrix<f64>, sigma_yini: DMatrix<f64> },
}

impl NoiseModel {
    pub fn iid(sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance {sigma2} must be finite and >= 0")));
        }
        Ok(Self::Iid { sigma2 })
    }

    pub fn general(sigma_y: DMatrix<f64>, sigma_yini: DMatrix<f64>) -> Result<Self> {
        validate_covariance("Sigma_Y", &sigma_y)?;
        validate_covariance("Sigma_yini", &sigma_yini)?;
        Ok(Self::General { sigma_y, sigma_yini })
    }

    /// `sigma2` for the i.i.d. model.
    pub fn sigma2(&self) -> Result<f64> {
        match self {
            Self::Iid { sigma2 } => Ok(*sigma2),
            Self::General { .. } => Err(Error::GeneralNoiseUnsupported),
        }
    }

    /// Mean per-sample variance; equals `sigma2` for the i.i.d. model.
    pub fn mean_variance(&self) -> f64 {
        match self {
            Self::Iid { sigma2 } => *sigma2,
            Self::General { sigma_y, .. } => {
                if sigma_y.nrows() == 0 {
                    0.0
                } else {
                    sigma_y.trace() / sigma_y.nrows() as f64
                }
            }
        }
    }

    pub fn is_noise_free(&self) -> bool {
        match self {
            Self::Iid { sigma2 } => *sigma2 == 0.0,
            Self::General { sigma_y, sigma_yini } => {
                sigma_y.iter().all(|&v| v == 0.0) && sigma_yini.iter().all(|&v| v == 0.0)
            }
        }
    }
}

fn validate_covariance(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidCovariance(format!("{name} is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance(format!("{name} has non-finite entries")));
    }
    if linalg::max_asymmetry(m) > 1e-12 {
        return Err(Error::InvalidCovariance(format!("{name} is not symmetric")));
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if linalg::min_symmetric_eigenvalue(m) < -1e-10 * scale {
        return Err(Error::InvalidCovariance(format!("{name} has a negative eigenvalue")));
    }
    Ok(())
}

/// Initial condition and future input for one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionProblem {
    pub u_ini: DVector<f64>,
    pub y_ini: DVector<f64>,
    pub u: DVector<f64>,
}

impl PredictionProblem {
    pub fn new(u_ini: DVector<f64>, y_ini: DVector<f64>, u: DVector<f64>) -> Self {
        Self { u_ini, y_ini, u }
    }

    pub fn zeros(sm: &SignalMatrix) -> Self {
        Self {
            u_ini: DVector::zeros(sm.n_u() * sm.l0()),
            y_ini: DVector::zeros(sm.n_y() * sm.l0()),
            u: DVector::zeros(sm.n_u() * sm.lp()),
        }
    }

    pub fn validate(&self, sm: &SignalMatrix) -> Result<()> {
        let want = [
            ("u_ini", self.u_ini.len(), sm.n_u() * sm.l0()),
            ("y_ini", self.y_ini.len(), sm.n_y() * sm.l0()),
            ("u", self.u.len(), sm.n_u() * sm.lp()),
        ];
        for (name, got, expected) in want {
            if got != expected {
                return Err(Error::DimensionMismatch(format!("{name} has {got} entries, expected {expected}")));
            }
        }
        Ok(())
    }

    /// `col(u_ini, u)`.
    pub fn input_target(&self) -> DVector<f64> {
        linalg::vstack_vec(&[&self.u_ini, &self.u])
    }

    /// `col(u_ini, u, y_ini)`.
    pub fn stacked(&self) -> DVector<f64> {
        linalg::vstack_vec(&[&self.u_ini, &self.u, &self.y_ini])
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { u_ini: &self.u_ini * a, y_ini: &self.y_ini * a, u: &self.u * a }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// Predicted outputs `Y_f g`.
    pub y: DVector<f64>,
    pub g: DVector<f64>,
    /// `Y_p g - y_ini`.
    pub delta: DVector<f64>,
    /// Ridge weight on `|g|^2`.
    pub lambda: f64,
    /// Slack weight, absent for the unweighted `|delta|^2`.
    pub q: Option<DMatrix<f64>>,
}

/// Regularizer choice used when estimating the free-response map from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum GammaChoice {
    Sub,
    #[serde(rename = "SMM")]
    Smm,
    #[serde(rename = "WD")]
    Wd,
}

impl GammaChoice {
    pub const ALL: [GammaChoice; 3] = [GammaChoice::Sub, GammaChoice::Smm, GammaChoice::Wd];

    /// `0`, `n_y L s2`, or `n_y L0 s2`.
    pub fn lambda(self, sm: &SignalMatrix, sigma2: f64) -> f64 {
        let n_y = sm.n_y() as f64;
        match self {
            Self::Sub => 0.0,
            Self::Smm => n_y * sm.l() as f64 * sigma2,
            Self::Wd => n_y * sm.l0() as f64 * sigma2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Sub => "Sub",
            Self::Smm => "SMM",
            Self::Wd => "WD",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Self::Sub => 0,
            Self::Smm => 1,
            Self::Wd => 2,
        }
    }
}

/// Where the free-response map comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaSource {
    ModelBased(StateSpaceModel),
    DataDriven(GammaChoice),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PredictorKind {
    Pinv,
    Sub,
    #[serde(rename = "SMM")]
    Smm,
    #[serde(rename = "WD")]
    Wd,
    MinMse,
}

/// Noise-free pseudo-inverse predictor.
pub fn predict_pinv(sm: &SignalMatrix, prob: &PredictionProblem) -> Result<PredictionResult> {
    prob.validate(sm)?;
    let part = sm.partition();
    let g = linalg::pinv(&part.conditioning()) * prob.stacked();
    Ok(finish(&part, prob, g, 0.0, None))
}

fn finish(
    part: &Partition,
    prob: &PredictionProblem,
    g: DVector<f64>,
    lambda: f64,
    q: Option<DMatrix<f64>>,
) -> PredictionResult {
    let y = &part.y_f * &g;
    let delta = &part.y_p * &g - &prob.y_ini;
    PredictionResult { y, g, delta, lambda, q }
}

/// Ridge term on `g`: scalar `lambda I` or a full weight matrix.
enum Ridge<'a> {
    Scalar(f64),
    Matrix(&'a DMatrix<f64>),
}

/// Solves `min |Y_p g - y_ini|_Q^2 + g^T R g` s.t. `U g = b` by eliminating
/// `g`: with `F = R + Y_p^T Q Y_p`,
/// `nu = (U F^-1 U^T)^-1 (U F^-1 h - b)` and `g = F^-1 (h - U^T nu)`,
/// where `h = Y_p^T Q y_ini`.
fn solve_constrained(
    part: &Partition,
    prob: &PredictionProblem,
    ridge: Ridge<'_>,
    q: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    let m = part.y_p.ncols();
    let qy_p = match q {
        Some(q) => q * &part.y_p,
        None => part.y_p.clone(),
    };
    let mut f = part.y_p.transpose() * &qy_p;
    match ridge {
        Ridge::Scalar(lambda) => {
            for i in 0..m {
                f[(i, i)] += lambda;
            }
        }
        Ridge::Matrix(w) => f += w,
    }
    linalg::symmetrize(&mut f);
    let f_chol = linalg::cholesky_with_jitter(&f, SOLVER_JITTER).ok_or(match ridge {
        Ridge::Scalar(_) => Error::InfeasibleConstraint,
        Ridge::Matrix(_) => Error::NonPositiveW,
    })?;
    let h = qy_p.transpose() * &prob.y_ini;
    let u = part.inputs();
    let b = prob.input_target();
    let f_inv_h = f_chol.solve(&h);
    let f_inv_ut = f_chol.solve(&u.transpose());
    let mut s = &u * &f_inv_ut;
    linalg::symmetrize(&mut s);
    let s_chol = linalg::cholesky_with_jitter(&s, SOLVER_JITTER).ok_or(Error::InfeasibleConstraint)?;
    let nu = s_chol.solve(&(&u * &f_inv_h - &b));
    let g = f_inv_h - f_inv_ut * nu;
    let resid = (&u * &g - &b).norm();
    let scale = b.norm().max(u.norm() * g.norm()).max(1.0);
    if !(resid <= FEASIBILITY_TOL * scale) {
        return Err(Error::InfeasibleConstraint);
    }
    Ok(g)
}

/// Unified regularized predictor `min |delta|_Q^2 + lambda |g|^2`.
///
/// `q` defaults to the identity.
pub fn solve_unified(
    sm: &SignalMatrix,
    prob: &PredictionProblem,
    lambda: f64,
    q: Option<&DMatrix<f64>>,
) -> Result<PredictionResult> {
    prob.validate(sm)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive and finite, got {lambda}")));
    }
    let ny_l0 = sm.n_y() * sm.l0();
    if let Some(q) = q {
        if q.shape() != (ny_l0, ny_l0) {
            return Err(Error::DimensionMismatch(format!(
                "Q is {}x{}, expected {ny_l0}x{ny_l0}",
                q.nrows(),
                q.ncols()
            )));
        }
    }
    let part = sm.partition();
    let g = solve_constrained(&part, prob, Ridge::Scalar(lambda), q)?;
    Ok(finish(&part, prob, g, lambda, q.cloned()))
}

/// Regularization weight for each predictor under i.i.d. noise.
pub fn lambda_for(
    sm: &SignalMatrix,
    prob: &PredictionProblem,
    kind: PredictorKind,
    noise: &NoiseModel,
    q: Option<&DMatrix<f64>>,
) -> Result<f64> {
    let sigma2 = noise.sigma2()?;
    let n_y = sm.n_y() as f64;
    match kind {
        PredictorKind::Pinv | PredictorKind::Sub => Ok(0.0),
        PredictorKind::Smm => {
            let g2 = predict_pinv(sm, prob)?.g.norm_squared();
            // A zero pinv solution means the zero problem; every lambda gives g = 0.
            let weight = if g2 > 0.0 { sm.lp() as f64 * sigma2 / g2 } else { 0.0 };
            Ok(n_y * (weight + sm.l() as f64 * sigma2))
        }
        PredictorKind::Wd => Ok(n_y * sm.l0() as f64 * sigma2),
        PredictorKind::MinMse => {
            let q = q.ok_or(Error::MissingQ)?;
            Ok(sigma2 * n_y * sm.lp() as f64 + sigma2 * q.trace())
        }
    }
}

/// Data-driven free-response map.
///
/// For `lambda > 0`: `Y_f (F^-1 - F^-1 U^T (U F^-1 U^T)^-1 U F^-1) Y_p^T`
/// with `F = lambda I + Y_p^T Y_p`. For `lambda = 0`: `Y_f P`, `P` the last
/// `n_y L0` columns of `pinv(col(U_p, U_f, Y_p))`.
pub fn estimate_gamma(sm: &SignalMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let part = sm.partition();
    let ny_l0 = sm.n_y() * sm.l0();
    if lambda == 0.0 {
        let p = linalg::pinv(&part.conditioning());
        let ncols = p.ncols();
        let last = p.columns(ncols - ny_l0, ny_l0);
        return Ok(&part.y_f * last);
    }
    let m = sm.m();
    let mut f = part.y_p.transpose() * &part.y_p;
    for i in 0..m {
        f[(i, i)] += lambda;
    }
    linalg::symmetrize(&mut f);
    let f_chol = linalg::cholesky_with_jitter(&f, SOLVER_JITTER).ok_or(Error::SingularProjection)?;
    let u = part.inputs();
    let f_inv_ypt = f_chol.solve(&part.y_p.transpose());
    let f_inv_ut = f_chol.solve(&u.transpose());
    let mut s = &u * &f_inv_ut;
    linalg::symmetrize(&mut s);
    let s_chol = linalg::cholesky_with_jitter(&s, SOLVER_JITTER).ok_or(Error::SingularProjection)?;
    let correction = &f_inv_ut * s_chol.solve(&(&u * &f_inv_ypt));
    Ok(&part.y_f * (f_inv_ypt - correction))
}

/// Resolves a gamma source for this signal matrix. Data-driven estimates are
/// computed once per `(matrix, choice, lambda)` and cached on the matrix.
pub fn resolve_gamma(sm: &SignalMatrix, source: &GammaSource, noise: &NoiseModel) -> Result<Arc<DMatrix<f64>>> {
    match source {
        GammaSource::ModelBased(model) => {
            if model.n_y() != sm.n_y() || model.n_u() != sm.n_u() {
                return Err(Error::DimensionMismatch("model channels differ from the signal matrix".into()));
            }
            Ok(Arc::new(lti::gamma_model_based(model, sm.l0(), sm.lp())?))
        }
        GammaSource::DataDriven(choice) => {
            let lambda = choice.lambda(sm, noise.mean_variance());
            let key: GammaKey = (choice.tag(), lambda.to_bits());
            if let Some(g) = sm.cached_gamma(key) {
                return Ok(g);
            }
            let g = estimate_gamma(sm, lambda)?;
            Ok(sm.store_gamma(key, g))
        }
    }
}

/// Runs one predictor end to end.
///
/// Zero noise collapses every regularized predictor to [`predict_pinv`].
pub fn predict(
    sm: &SignalMatrix,
    prob: &PredictionProblem,
    kind: PredictorKind,
    noise: &NoiseModel,
    gamma_source: Option<&GammaSource>,
) -> Result<PredictionResult> {
    prob.validate(sm)?;
    if kind == PredictorKind::MinMse && gamma_source.is_none() {
        return Err(Error::MissingGammaSource);
    }
    match kind {
        PredictorKind::Pinv | PredictorKind::Sub => return predict_pinv(sm, prob),
        _ => {}
    }
    let sigma2 = noise.sigma2()?;
    if sigma2 == 0.0 {
        return predict_pinv(sm, prob);
    }
    sm.ensure_noise_model_valid()?;
    match kind {
        PredictorKind::Smm | PredictorKind::Wd => {
            let lambda = lambda_for(sm, prob, kind, noise, None)?;
            solve_unified(sm, prob, lambda, None)
        }
        PredictorKind::MinMse => {
            let gamma = resolve_gamma(sm, gamma_source.ok_or(Error::MissingGammaSource)?, noise)?;
            let q = gamma.transpose() * gamma.as_ref();
            let lambda = lambda_for(sm, prob, kind, noise, Some(&q))?;
            solve_unified(sm, prob, lambda, Some(&q))
        }
        PredictorKind::Pinv | PredictorKind::Sub => unreachable!(),
    }
}

/// Ridge matrix `W_jk = tr([-G I] Sigma_Y^(j,k) [-G I]^T)` of the general
/// minimum-MSE objective.
pub fn general_ridge(sm: &SignalMatrix, sigma_y: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (ny, l, m) = (sm.n_y(), sm.l(), sm.m());
    let block = ny * l;
    if sigma_y.shape() != (block * m, block * m) {
        return Err(Error::DimensionMismatch(format!(
            "Sigma_Y is {}x{}, expected {2}x{2}",
            sigma_y.nrows(),
            sigma_y.ncols(),
            block * m
        )));
    }
    let t = selector(gamma, sm)?;
    // tr(T S T^T) = <T^T T, S>_F
    let k = t.transpose() * &t;
    let mut w = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..=j {
            let s = sigma_y.view((i * block, j * block), (block, block));
            let v = k.component_mul(&s.into_owned()).sum();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

/// `[-G I]`, shape `(n_y Lp) x (n_y L)`.
pub(crate) fn selector(gamma: &DMatrix<f64>, sm: &SignalMatrix) -> Result<DMatrix<f64>> {
    let (ny_l0, ny_lp) = (sm.n_y() * sm.l0(), sm.n_y() * sm.lp());
    if gamma.shape() != (ny_lp, ny_l0) {
        return Err(Error::DimensionMismatch(format!(
            "gamma is {}x{}, expected {ny_lp}x{ny_l0}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    let mut t = DMatrix::zeros(ny_lp, ny_l0 + ny_lp);
    t.view_mut((0, 0), (ny_lp, ny_l0)).copy_from(&(-gamma));
    t.view_mut((0, ny_l0), (ny_lp, ny_lp)).fill_with_identity();
    Ok(t)
}

/// Minimum-MSE predictor for a general output-noise covariance:
/// `min delta^T G^T G delta + g^T W g` under the predictor constraints.
pub fn predict_minmse_general(
    sm: &SignalMatrix,
    prob: &PredictionProblem,
    noise: &NoiseModel,
    gamma: &DMatrix<f64>,
) -> Result<PredictionResult> {
    prob.validate(sm)?;
    let NoiseModel::General { sigma_y, .. } = noise else {
        return Err(Error::InvalidArgument("predict_minmse_general needs a general noise model".into()));
    };
    let w = general_ridge(sm, sigma_y, gamma)?;
    let scale = w.norm().max(f64::MIN_POSITIVE);
    if linalg::min_symmetric_eigenvalue(&w) <= 1e-12 * scale {
        return Err(Error::NonPositiveW);
    }
    let q = gamma.transpose() * gamma;
    let part = sm.partition();
    let g = solve_constrained(&part, prob, Ridge::Matrix(&w), Some(&q))?;
    let lambda = w.trace() / sm.m() as f64;
    Ok(finish(&part, prob, g, lambda, Some(q)))
}
