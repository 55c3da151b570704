//! Discrete-time LTI state-space models.
//!
//! The model here is the ground truth: it drives simulation, supplies the
//! model-based free-response map, and is the oracle every data-driven
//! predictor is checked against.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg;

/// Spectral radius must stay below `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-6;

/// Resampling cap for [`random_system`].
pub const MAX_GENERATION_ATTEMPTS: usize = 100;

/// Discrete-time system `x+ = A x + B u`, `y = C x + D u + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n_x = a.nrows();
        let n_u = b.ncols();
        let n_y = c.nrows();
        if n_x == 0 || n_u == 0 || n_y == 0 {
            return Err(Error::DimensionMismatch(format!("empty dimension (n_x={n_x}, n_u={n_u}, n_y={n_y})")));
        }
        if a.ncols() != n_x {
            return Err(Error::DimensionMismatch(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n_x {
            return Err(Error::DimensionMismatch(format!("B has {} rows, expected {n_x}", b.nrows())));
        }
        if c.ncols() != n_x {
            return Err(Error::DimensionMismatch(format!("C has {} cols, expected {n_x}", c.ncols())));
        }
        if d.shape() != (n_y, n_u) {
            return Err(Error::DimensionMismatch(format!("D is {}x{}, expected {n_y}x{n_u}", d.nrows(), d.ncols())));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Scalar model `x+ = a x + b u`, `y = c x + d u`.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    /// Returns the model with output map `(s C, s D)`.
    pub fn scale_output(&self, s: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), &self.c * s, &self.d * s)
    }

    /// Controllable canonical realization of a SISO transfer function
    /// `num(z) / den(z)` with coefficients in descending powers of `z`.
    ///
    /// `den` must be monic-normalizable and `num` no longer than `den`.
    pub fn from_transfer_function(num: &[f64], den: &[f64]) -> Result<Self> {
        if den.len() < 2 || den[0] == 0.0 {
            return Err(Error::InvalidArgument("denominator must have degree >= 1".into()));
        }
        if num.len() > den.len() {
            return Err(Error::InvalidArgument("improper transfer function".into()));
        }
        let n = den.len() - 1;
        let a0 = den[0];
        let den: Vec<f64> = den.iter().map(|v| v / a0).collect();
        let mut b = vec![0.0; n + 1];
        b[n + 1 - num.len()..].copy_from_slice(num);
        let b: Vec<f64> = b.iter().map(|v| v / a0).collect();
        let d = b[0];
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -den[j + 1];
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut bm = DMatrix::zeros(n, 1);
        bm[(0, 0)] = 1.0;
        let mut c = DMatrix::zeros(1, n);
        for j in 0..n {
            c[(0, j)] = b[j + 1] - d * den[j + 1];
        }
        Self::new(a, bm, c, DMatrix::from_element(1, 1, d))
    }

    /// The fourth-order SISO example system
    /// `0.1059 (0.1 z^4 + z^3 + 0.5 z^2) / (z^4 - 2.2 z^3 + 2.42 z^2 - 1.87 z + 0.7225)`.
    pub fn example_g1() -> Self {
        let k = 0.1059;
        Self::from_transfer_function(&[k * 0.1, k, k * 0.5, 0.0, 0.0], &[1.0, -2.2, 2.42, -1.87, 0.7225])
            .expect("valid transfer function")
    }
}

/// Input/output sequences of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    inputs: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(inputs: Vec<DVector<f64>>, outputs: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory needs equal nonzero lengths (inputs {}, outputs {})",
                inputs.len(),
                outputs.len()
            )));
        }
        let n_u = inputs[0].len();
        let n_y = outputs[0].len();
        if n_u == 0 || n_y == 0 {
            return Err(Error::DimensionMismatch("empty channel".into()));
        }
        if inputs.iter().any(|u| u.len() != n_u) || outputs.iter().any(|y| y.len() != n_y) {
            return Err(Error::DimensionMismatch("ragged samples".into()));
        }
        Ok(Self { inputs, outputs })
    }

    /// Builds a SISO trajectory from scalar slices.
    pub fn siso(u: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            u.iter().map(|&v| DVector::from_element(1, v)).collect(),
            y.iter().map(|&v| DVector::from_element(1, v)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
    pub fn n_u(&self) -> usize {
        self.inputs[0].len()
    }
    pub fn n_y(&self) -> usize {
        self.outputs[0].len()
    }
    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }
    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }

    /// Samples `start..start+len` as a new trajectory.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::TrajectoryTooShort { len: self.len(), needed: start + len });
        }
        Self::new(self.inputs[start..start + len].to_vec(), self.outputs[start..start + len].to_vec())
    }

    /// Time-stacked inputs `col(u_0, ..., u_{T-1})`.
    pub fn stacked_inputs(&self) -> DVector<f64> {
        stack(&self.inputs)
    }

    /// Time-stacked outputs `col(y_0, ..., y_{T-1})`.
    pub fn stacked_outputs(&self) -> DVector<f64> {
        stack(&self.outputs)
    }
}

fn stack(v: &[DVector<f64>]) -> DVector<f64> {
    let refs: Vec<&DVector<f64>> = v.iter().collect();
    linalg::vstack_vec(&refs)
}

/// Splits a time-stacked vector into per-sample vectors of width `w`.
pub fn unstack(v: &DVector<f64>, w: usize) -> Vec<DVector<f64>> {
    assert!(w > 0 && v.len().is_multiple_of(w));
    (0..v.len() / w).map(|t| v.rows(t * w, w).into_owned()).collect()
}

/// Simulates the model from `x0`; `noise`, when given, is added to the outputs.
pub fn simulate(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    noise: Option<&[DVector<f64>]>,
) -> Result<Trajectory> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("simulate needs at least one input sample".into()));
    }
    if x0.len() != model.n_x() {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, expected {}", x0.len(), model.n_x())));
    }
    if let Some(i) = inputs.iter().position(|u| u.len() != model.n_u()) {
        return Err(Error::DimensionMismatch(format!("input sample {i} has wrong width")));
    }
    if let Some(w) = noise {
        if w.len() != inputs.len() {
            return Err(Error::DimensionMismatch(format!("noise length {} != input length {}", w.len(), inputs.len())));
        }
        if let Some(i) = w.iter().position(|v| v.len() != model.n_y()) {
            return Err(Error::DimensionMismatch(format!("noise sample {i} has wrong width")));
        }
    }
    let mut x = x0.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    for (t, u) in inputs.iter().enumerate() {
        let mut y = &model.c * &x + &model.d * u;
        if let Some(w) = noise {
            y += &w[t];
        }
        outputs.push(y);
        x = &model.a * &x + &model.b * u;
    }
    Trajectory::new(inputs.to_vec(), outputs)
}

/// Stacks `C, CA, ..., CA^{k-1}`.
pub fn extended_observability(model: &StateSpaceModel, k: usize) -> DMatrix<f64> {
    observability_rows(model, 0, k)
}

/// Stacks `CA^start, ..., CA^{start+k-1}`.
fn observability_rows(model: &StateSpaceModel, start: usize, k: usize) -> DMatrix<f64> {
    let (n_x, n_y) = (model.n_x(), model.n_y());
    let mut out = DMatrix::zeros(n_y * k, n_x);
    let mut block = model.c.clone();
    for _ in 0..start {
        block = &block * &model.a;
    }
    for j in 0..k {
        out.view_mut((j * n_y, 0), (n_y, n_x)).copy_from(&block);
        block = &block * &model.a;
    }
    out
}

/// Smallest `l` with `rank col(C, ..., CA^{l-1}) = n_x`.
pub fn observability_index(model: &StateSpaceModel) -> Result<usize> {
    let n_x = model.n_x();
    let full = extended_observability(model, n_x);
    let rank = linalg::numerical_rank(&full);
    if rank < n_x {
        return Err(Error::UnobservableSystem { rank, n_x });
    }
    for l in 1..=n_x {
        if model.n_y() * l < n_x {
            continue;
        }
        let obs = full.rows(0, model.n_y() * l).into_owned();
        if linalg::numerical_rank(&obs) == n_x {
            return Ok(l);
        }
    }
    Ok(n_x)
}

/// Model-based free-response map `col(CA^L0, ..., CA^{L-1}) col(C, ..., CA^{L0-1})^+`.
pub fn gamma_model_based(model: &StateSpaceModel, l0: usize, lp: usize) -> Result<DMatrix<f64>> {
    if l0 == 0 || lp == 0 {
        return Err(Error::InvalidArgument("L0 and Lp must be positive".into()));
    }
    let index = observability_index(model)?;
    if l0 < index {
        return Err(Error::LagTooShort { l0, index });
    }
    let past = extended_observability(model, l0);
    let future = observability_rows(model, l0, lp);
    Ok(future * linalg::pinv(&past))
}

/// Controllability Gramian from `(I - A⊗A) vec(W) = vec(BB^T)`.
pub fn controllability_gramian(model: &StateSpaceModel) -> Result<DMatrix<f64>> {
    let rho = model.spectral_radius();
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(Error::UnstableSystem(rho));
    }
    let n = model.n_x();
    let bbt = &model.b * model.b.transpose();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - linalg::kron(&model.a, &model.a);
    // Column-major storage makes `as_slice` exactly vec(.).
    let rhs = DVector::from_column_slice(bbt.as_slice());
    let sol = lhs.lu().solve(&rhs).ok_or(Error::UnstableSystem(rho))?;
    let mut w = DMatrix::from_column_slice(n, n, sol.as_slice());
    linalg::symmetrize(&mut w);
    Ok(w)
}

/// `sqrt(tr(C W_c C^T) + tr(D D^T))`.
pub fn h2_norm(model: &StateSpaceModel) -> Result<f64> {
    let w = controllability_gramian(model)?;
    let val = (&model.c * w * model.c.transpose()).trace() + (&model.d * model.d.transpose()).trace();
    Ok(val.max(0.0).sqrt())
}

/// Inclusive range of state dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StateRange {
    pub min: usize,
    pub max: usize,
}

impl StateRange {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if min == 0 || min > max || max > 12 {
            return Err(Error::InvalidArgument(format!("state range {min}..{max} must lie within [1, 12]")));
        }
        Ok(Self { min, max })
    }
}

impl std::str::FromStr for StateRange {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad state range '{s}', expected N or A..B"));
        match s.split_once("..") {
            Some((a, b)) => {
                let b = b.strip_prefix('=').unwrap_or(b);
                Self::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
            }
            None => {
                let n = s.trim().parse().map_err(|_| bad())?;
                Self::new(n, n)
            }
        }
    }
}

impl std::fmt::Display for StateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.min, self.max)
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix, sign-fixed
/// so the distribution is Haar.
fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Block-diagonal matrix with eigenvalue magnitudes in `[0.1, 0.95]`; real
/// eigenvalues carry a random sign, complex pairs appear as scaled rotations.
fn random_stable_core<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mag = Uniform::new_inclusive(0.1, 0.95).expect("valid range");
    let angle = Uniform::new(0.0, std::f64::consts::PI).expect("valid range");
    let mut a = DMatrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        let r: f64 = mag.sample(rng);
        if i + 1 < n && rng.random_bool(0.5) {
            let th: f64 = angle.sample(rng);
            let (s, c) = th.sin_cos();
            a[(i, i)] = r * c;
            a[(i, i + 1)] = -r * s;
            a[(i + 1, i)] = r * s;
            a[(i + 1, i + 1)] = r * c;
            i += 2;
        } else {
            a[(i, i)] = if rng.random_bool(0.5) { r } else { -r };
            i += 1;
        }
    }
    a
}

/// Draws an observable, Schur-stable model with unit H2 norm.
pub fn random_system<R: Rng + ?Sized>(
    n_x_range: StateRange,
    n_u: usize,
    n_y: usize,
    rng: &mut R,
) -> Result<StateSpaceModel> {
    if n_u == 0 || n_y == 0 {
        return Err(Error::InvalidArgument("n_u and n_y must be positive".into()));
    }
    let n_x_range = StateRange::new(n_x_range.min, n_x_range.max)?;
    let nx_dist = Uniform::new_inclusive(n_x_range.min, n_x_range.max).expect("valid range");
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let n_x = nx_dist.sample(rng);
        let q = random_orthogonal(rng, n_x);
        let core = random_stable_core(rng, n_x);
        let a = &q * core * q.transpose();
        let b = gaussian_matrix(rng, n_x, n_u);
        let c = gaussian_matrix(rng, n_y, n_x);
        let d = if rng.random_bool(0.5) { gaussian_matrix(rng, n_y, n_u) } else { DMatrix::zeros(n_y, n_u) };
        let model = StateSpaceModel::new(a, b, c, d)?;
        if model.spectral_radius() >= 1.0 - STABILITY_MARGIN {
            continue;
        }
        if observability_index(&model).is_err() {
            continue;
        }
        let h2 = match h2_norm(&model) {
            Ok(v) if v > 0.0 && v.is_finite() => v,
            _ => continue,
        };
        return model.scale_output(1.0 / h2);
    }
    Err(Error::GenerationFailed(MAX_GENERATION_ATTEMPTS))
}
