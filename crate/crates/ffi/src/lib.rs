//! C ABI for `ddpredict`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns a [`DdpStatus`];
//! on failure [`ddp_last_error`] describes the problem for the calling
//! thread. Matrices cross the boundary as row-major `double` arrays and
//! signals as time-major arrays (`len * width`).

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ddpredict::lti::{self, StateRange};
use ddpredict::montecarlo::{PredictorId, RegionGamma};
use ddpredict::nalgebra::{DMatrix, DVector};
use ddpredict::predictors::{predict, resolve_gamma, NoiseModel, PredictionProblem, PredictionResult};
use ddpredict::uncertainty::{confidence_region, ConfidenceRegion, DofPolicy};
use ddpredict::{Error, SignalMatrix, StateSpaceModel, Trajectory};
use rand_chacha::rand_core::SeedableRng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numeric = 3,
    Format = 4,
    Panic = 5,
}

pub const DDP_PREDICTOR_PINV: u32 = 0;
pub const DDP_PREDICTOR_SUB: u32 = 1;
pub const DDP_PREDICTOR_SMM: u32 = 2;
pub const DDP_PREDICTOR_WD: u32 = 3;
pub const DDP_PREDICTOR_MSE_MB: u32 = 4;
pub const DDP_PREDICTOR_MSE_SUB: u32 = 5;
pub const DDP_PREDICTOR_MSE_SMM: u32 = 6;
pub const DDP_PREDICTOR_MSE_WD: u32 = 7;

pub const DDP_REGION_MB: u32 = 0;
pub const DDP_REGION_SUB: u32 = 1;
pub const DDP_REGION_SMM: u32 = 2;
pub const DDP_REGION_WD: u32 = 3;

/// Opaque state-space model.
pub struct DdpModel {
    inner: StateSpaceModel,
}

/// Opaque signal matrix.
pub struct DdpSignalMatrix {
    inner: SignalMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ddp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

struct Failure(DdpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch(_)
            | Error::NonFinite(_)
            | Error::LengthMismatch { .. }
            | Error::TrajectoryTooShort { .. }
            | Error::MissingGammaSource
            | Error::NotTwoDimensional(_) => DdpStatus::InvalidArgument,
            _ => DdpStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(DdpStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DdpStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DdpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DdpStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(p: *mut f64, values: &[f64], name: &str) -> Result<(), Failure> {
    if values.is_empty() {
        return Ok(());
    }
    if p.is_null() {
        return Err(null(name));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), p, values.len());
    Ok(())
}

unsafe fn set<T>(p: *mut T, v: T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(v);
    Ok(())
}

unsafe fn model_ref<'a>(m: *const DdpModel) -> Result<&'a StateSpaceModel, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

fn split(values: &[f64], width: usize) -> Vec<DVector<f64>> {
    values.chunks(width).map(DVector::from_column_slice).collect()
}

fn boxed_model(m: StateSpaceModel) -> *mut DdpModel {
    Box::into_raw(Box::new(DdpModel { inner: m }))
}

/// Builds a model from row-major `A (n_x*n_x)`, `B (n_x*n_u)`,
/// `C (n_y*n_x)`, `D (n_y*n_u)`.
#[no_mangle]
pub unsafe extern "C" fn ddp_model_new(
    n_x: usize,
    n_u: usize,
    n_y: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    d: *const f64,
    out: *mut *mut DdpModel,
) -> DdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mat = |p, r, k, name| -> Result<DMatrix<f64>, Failure> {
            Ok(DMatrix::from_row_slice(r, k, slice(p, r * k, name)?))
        };
        let model = StateSpaceModel::new(
            mat(a, n_x, n_x, "A")?,
            mat(b, n_x, n_u, "B")?,
            mat(c, n_y, n_x, "C")?,
            mat(d, n_y, n_u, "D")?,
        )?;
        out.write(boxed_model(model));
        Ok(())
    })
}

/// Parses a model JSON document (the format the command-line tool writes).
#[no_mangle]
pub unsafe extern "C" fn ddp_model_from_json(json: *const c_char, out: *mut *mut DdpModel) -> DdpStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| Failure(DdpStatus::Format, e.to_string()))?;
        let model = ddpredict::io::model_from_json(std::path::Path::new("<json>"), text).map_err(|e| match e {
            ddpredict::io::IoError::Numeric(err) => Failure::from(err),
            other => Failure(DdpStatus::Format, other.to_string()),
        })?;
        out.write(boxed_model(model));
        Ok(())
    })
}

/// Random stable, observable model with unit H2 norm, `n_x` drawn from
/// `[nx_min, nx_max]`. Deterministic in `seed`.
#[no_mangle]
pub unsafe extern "C" fn ddp_model_random(
    nx_min: usize,
    nx_max: usize,
    n_u: usize,
    n_y: usize,
    seed: u64,
    out: *mut *mut DdpModel,
) -> DdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let range = StateRange::new(nx_min, nx_max)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let model = lti::random_system(range, n_u, n_y, &mut rng)?;
        out.write(boxed_model(model));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ddp_model_free(model: *mut DdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ddp_model_dims(
    model: *const DdpModel,
    n_x: *mut usize,
    n_u: *mut usize,
    n_y: *mut usize,
) -> DdpStatus {
    guard(|| {
        let m = model_ref(model)?;
        set(n_x, m.n_x(), "n_x")?;
        set(n_u, m.n_u(), "n_u")?;
        set(n_y, m.n_y(), "n_y")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ddp_model_h2_norm(model: *const DdpModel, out: *mut f64) -> DdpStatus {
    guard(|| {
        let h2 = lti::h2_norm(model_ref(model)?)?;
        set(out, h2, "out")
    })
}

/// Simulates `len` steps. `x0` may be null (zero state) and `noise`
/// (`len*n_y`) may be null (noise-free). Writes `len*n_y` outputs.
#[no_mangle]
pub unsafe extern "C" fn ddp_simulate(
    model: *const DdpModel,
    x0: *const f64,
    u: *const f64,
    noise: *const f64,
    len: usize,
    y_out: *mut f64,
) -> DdpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x =
            if x0.is_null() { DVector::zeros(m.n_x()) } else { DVector::from_column_slice(slice(x0, m.n_x(), "x0")?) };
        let inputs = split(slice(u, len * m.n_u(), "u")?, m.n_u());
        let noise = if noise.is_null() { None } else { Some(split(slice(noise, len * m.n_y(), "noise")?, m.n_y())) };
        let traj = lti::simulate(m, &x, &inputs, noise.as_deref())?;
        let flat: Vec<f64> = traj.outputs().iter().flat_map(|y| y.iter().copied()).collect();
        write_out(y_out, &flat, "y_out")
    })
}

/// Page signal matrix from one recorded trajectory (`u`: `len*n_u`,
/// `y`: `len*n_y`).
#[no_mangle]
pub unsafe extern "C" fn ddp_signal_matrix_page(
    u: *const f64,
    y: *const f64,
    len: usize,
    n_u: usize,
    n_y: usize,
    l: usize,
    l0: usize,
    out: *mut *mut DdpSignalMatrix,
) -> DdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n_u == 0 || n_y == 0 {
            return Err(invalid("n_u and n_y must be positive"));
        }
        let traj = Trajectory::new(split(slice(u, len * n_u, "u")?, n_u), split(slice(y, len * n_y, "y")?, n_y))?;
        let sm = SignalMatrix::build_page(&traj, l, l0)?;
        out.write(Box::into_raw(Box::new(DdpSignalMatrix { inner: sm })));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ddp_signal_matrix_free(sm: *mut DdpSignalMatrix) {
    if !sm.is_null() {
        drop(Box::from_raw(sm));
    }
}

/// Rows and columns of `Z`.
#[no_mangle]
pub unsafe extern "C" fn ddp_signal_matrix_dims(
    sm: *const DdpSignalMatrix,
    rows: *mut usize,
    cols: *mut usize,
) -> DdpStatus {
    guard(|| {
        let sm = &sm.as_ref().ok_or_else(|| null("sm"))?.inner;
        set(rows, sm.z().nrows(), "rows")?;
        set(cols, sm.m(), "cols")
    })
}

fn predictor_id(code: u32) -> Result<PredictorId, Failure> {
    Ok(match code {
        DDP_PREDICTOR_PINV => PredictorId::Pinv,
        DDP_PREDICTOR_SUB => PredictorId::Sub,
        DDP_PREDICTOR_SMM => PredictorId::Smm,
        DDP_PREDICTOR_WD => PredictorId::Wd,
        DDP_PREDICTOR_MSE_MB => PredictorId::MseMb,
        DDP_PREDICTOR_MSE_SUB => PredictorId::MseSub,
        DDP_PREDICTOR_MSE_SMM => PredictorId::MseSmm,
        DDP_PREDICTOR_MSE_WD => PredictorId::MseWd,
        other => return Err(invalid(format!("unknown predictor code {other}"))),
    })
}

fn region_gamma(code: u32) -> Result<RegionGamma, Failure> {
    Ok(match code {
        DDP_REGION_MB => RegionGamma::ModelBased,
        DDP_REGION_SUB => RegionGamma::Sub,
        DDP_REGION_SMM => RegionGamma::Smm,
        DDP_REGION_WD => RegionGamma::Wd,
        other => return Err(invalid(format!("unknown region source code {other}"))),
    })
}

struct Request<'a> {
    sm: &'a SignalMatrix,
    model: Option<&'a StateSpaceModel>,
    noise: NoiseModel,
    prob: PredictionProblem,
}

#[allow(clippy::too_many_arguments)]
unsafe fn request<'a>(
    sm: *const DdpSignalMatrix,
    model: *const DdpModel,
    sigma2: f64,
    u_ini: *const f64,
    y_ini: *const f64,
    u: *const f64,
) -> Result<Request<'a>, Failure> {
    let sm = &sm.as_ref().ok_or_else(|| null("sm"))?.inner;
    let (nu, ny) = (sm.n_u(), sm.n_y());
    let prob = PredictionProblem::new(
        DVector::from_column_slice(slice(u_ini, nu * sm.l0(), "u_ini")?),
        DVector::from_column_slice(slice(y_ini, ny * sm.l0(), "y_ini")?),
        DVector::from_column_slice(slice(u, nu * sm.lp(), "u")?),
    );
    Ok(Request { sm, model: model.as_ref().map(|m| &m.inner), noise: NoiseModel::iid(sigma2)?, prob })
}

fn run_predict(req: &Request<'_>, predictor: u32) -> Result<PredictionResult, Failure> {
    let id = predictor_id(predictor)?;
    let source = id.gamma_source(req.model)?;
    Ok(predict(req.sm, &req.prob, id.kind(), &req.noise, source.as_ref())?)
}

/// Predicts `n_y*Lp` future outputs into `y_out`. `u_ini`, `y_ini` and `u`
/// hold `n_u*L0`, `n_y*L0` and `n_u*Lp` values. `model` may be null unless
/// `predictor` is `DDP_PREDICTOR_MSE_MB`.
#[no_mangle]
pub unsafe extern "C" fn ddp_predict(
    sm: *const DdpSignalMatrix,
    predictor: u32,
    model: *const DdpModel,
    sigma2: f64,
    u_ini: *const f64,
    y_ini: *const f64,
    u: *const f64,
    y_out: *mut f64,
) -> DdpStatus {
    guard(|| {
        let req = request(sm, model, sigma2, u_ini, y_ini, u)?;
        let res = run_predict(&req, predictor)?;
        write_out(y_out, res.y.as_slice(), "y_out")
    })
}

/// Prediction plus its confidence region at level `p`. Writes the
/// prediction (`d = n_y*Lp` values), the region center (`d`), the row-major
/// covariance (`d*d`) and the radius.
#[no_mangle]
pub unsafe extern "C" fn ddp_predict_region(
    sm: *const DdpSignalMatrix,
    predictor: u32,
    region_source: u32,
    model: *const DdpModel,
    sigma2: f64,
    u_ini: *const f64,
    y_ini: *const f64,
    u: *const f64,
    p: f64,
    y_out: *mut f64,
    center_out: *mut f64,
    sigma_out: *mut f64,
    mu_p_out: *mut f64,
) -> DdpStatus {
    guard(|| {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(format!("p = {p} outside (0, 1)")));
        }
        let req = request(sm, model, sigma2, u_ini, y_ini, u)?;
        let res = run_predict(&req, predictor)?;
        let src = region_gamma(region_source)?.source(req.model)?;
        let gamma = resolve_gamma(req.sm, &src, &req.noise)?;
        let region = confidence_region(&res, &gamma, &req.noise, p, DofPolicy::OutputDimension)?;
        let sigma_rows: Vec<f64> = region.sigma().transpose().as_slice().to_vec();
        write_out(y_out, res.y.as_slice(), "y_out")?;
        write_out(center_out, region.center().as_slice(), "center_out")?;
        write_out(sigma_out, &sigma_rows, "sigma_out")?;
        set(mu_p_out, region.mu_p(), "mu_p_out")
    })
}

/// Sets `*inside` to 1 when `point` lies in the ellipsoid
/// `(x - center)^T sigma^{-1} (x - center) <= mu_p`, else 0.
#[no_mangle]
pub unsafe extern "C" fn ddp_region_contains(
    center: *const f64,
    sigma: *const f64,
    dim: usize,
    mu_p: f64,
    point: *const f64,
    inside: *mut i32,
) -> DdpStatus {
    guard(|| {
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let c = DVector::from_column_slice(slice(center, dim, "center")?);
        let s = DMatrix::from_row_slice(dim, dim, slice(sigma, dim * dim, "sigma")?);
        let x = DVector::from_column_slice(slice(point, dim, "point")?);
        // p and dof are only informative here; the radius is given.
        let region = ConfidenceRegion::with_radius(c, s, mu_p, 0.5, dim as u32)?;
        set(inside, i32::from(region.contains(&x)?), "inside")
    })
}

/// Chi-squared CDF; NaN when `dof` is zero.
#[no_mangle]
pub extern "C" fn ddp_chi2_cdf(x: f64, dof: u32) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    ddpredict::uncertainty::chi2::chi2_cdf(x, dof)
}

/// Chi-squared quantile; NaN unless `0 < p < 1` and `dof > 0`.
#[no_mangle]
pub extern "C" fn ddp_chi2_quantile(p: f64, dof: u32) -> f64 {
    if dof == 0 || !(p > 0.0 && p < 1.0) {
        return f64::NAN;
    }
    ddpredict::uncertainty::chi2::chi2_quantile(p, dof)
}
