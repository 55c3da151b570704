//! Signal matrices: column-stacked trajectory windows used as the
//! data-driven model.
//!
//! Rows are `col(u-block, y-block)`; each block is time-major with the
//! channels of one sample contiguous. The past/future split `L0` is fixed at
//! construction.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Disjoint windows, `t_{i+1} = t_i + L`.
    Page,
    /// Unit-shifted overlapping windows.
    Hankel,
    /// One column per independent experiment.
    Independent,
}

impl std::str::FromStr for Construction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "page" => Ok(Self::Page),
            "hankel" => Ok(Self::Hankel),
            "independent" => Ok(Self::Independent),
            _ => Err(Error::InvalidArgument(format!("unknown construction '{s}'"))),
        }
    }
}

/// Key for cached free-response estimates: `(choice tag, lambda bits)`.
pub(crate) type GammaKey = (u8, u64);

/// Column-stacked trajectory data with its partition dimensions.
#[derive(Debug)]
pub struct SignalMatrix {
    z: DMatrix<f64>,
    l: usize,
    l0: usize,
    n_u: usize,
    n_y: usize,
    construction: Construction,
    hankel_override: bool,
    gamma_cache: RwLock<HashMap<GammaKey, Arc<DMatrix<f64>>>>,
}

impl Clone for SignalMatrix {
    fn clone(&self) -> Self {
        Self {
            z: self.z.clone(),
            l: self.l,
            l0: self.l0,
            n_u: self.n_u,
            n_y: self.n_y,
            construction: self.construction,
            hankel_override: self.hankel_override,
            gamma_cache: RwLock::default(),
        }
    }
}

impl PartialEq for SignalMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.z == other.z
            && self.l == other.l
            && self.l0 == other.l0
            && self.n_u == other.n_u
            && self.n_y == other.n_y
            && self.construction == other.construction
    }
}

/// The four row blocks of a signal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
}

impl Partition {
    /// `col(U_p, U_f, Y_p, Y_f)`, which is exactly the row order of `Z`.
    pub fn restack(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.u_p, &self.u_f, &self.y_p, &self.y_f])
    }

    /// `col(U_p, U_f)`.
    pub fn inputs(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.u_p, &self.u_f])
    }

    /// `col(U_p, U_f, Y_p)`.
    pub fn conditioning(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.u_p, &self.u_f, &self.y_p])
    }
}

impl SignalMatrix {
    /// Wraps an already stacked matrix.
    pub fn from_matrix(
        z: DMatrix<f64>,
        l: usize,
        l0: usize,
        n_u: usize,
        n_y: usize,
        construction: Construction,
    ) -> Result<Self> {
        if l0 == 0 || l0 >= l {
            return Err(Error::InvalidArgument(format!("need 1 <= L0 < L (L0={l0}, L={l})")));
        }
        if n_u == 0 || n_y == 0 {
            return Err(Error::InvalidArgument("n_u and n_y must be positive".into()));
        }
        if z.nrows() != l * (n_u + n_y) {
            return Err(Error::DimensionMismatch(format!(
                "Z has {} rows, expected L(n_u+n_y) = {}",
                z.nrows(),
                l * (n_u + n_y)
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::InvalidArgument("signal matrix needs at least one column".into()));
        }
        Ok(Self { z, l, l0, n_u, n_y, construction, hankel_override: false, gamma_cache: RwLock::default() })
    }

    fn from_windows(
        traj: &Trajectory,
        starts: &[usize],
        l: usize,
        l0: usize,
        construction: Construction,
    ) -> Result<Self> {
        let (n_u, n_y) = (traj.n_u(), traj.n_y());
        let mut z = DMatrix::zeros(l * (n_u + n_y), starts.len());
        for (col, &s) in starts.iter().enumerate() {
            fill_column(&mut z, col, traj, s, l);
        }
        Self::from_matrix(z, l, l0, n_u, n_y, construction)
    }

    /// Page matrix of disjoint windows; trailing samples beyond `M L` are dropped.
    pub fn build_page(traj: &Trajectory, l: usize, l0: usize) -> Result<Self> {
        check_window(traj.len(), l)?;
        let m = traj.len() / l;
        let dropped = traj.len() - m * l;
        if dropped > 0 {
            log::debug!("page matrix: discarding {dropped} trailing samples");
        }
        let starts: Vec<usize> = (0..m).map(|i| i * l).collect();
        Self::from_windows(traj, &starts, l, l0, Construction::Page)
    }

    /// Mosaic Hankel matrix of unit-shifted windows.
    pub fn build_hankel(traj: &Trajectory, l: usize, l0: usize) -> Result<Self> {
        check_window(traj.len(), l)?;
        let starts: Vec<usize> = (0..=traj.len() - l).collect();
        Self::from_windows(traj, &starts, l, l0, Construction::Hankel)
    }

    /// One column per independent experiment of length exactly `l`.
    pub fn from_trajectories(trajs: &[Trajectory], l: usize, l0: usize) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| Error::InvalidArgument("no trajectories given".into()))?;
        let (n_u, n_y) = (first.n_u(), first.n_y());
        let mut z = DMatrix::zeros(l * (n_u + n_y), trajs.len());
        for (i, t) in trajs.iter().enumerate() {
            if t.len() != l {
                return Err(Error::LengthMismatch { index: i, len: t.len(), expected: l });
            }
            if t.n_u() != n_u || t.n_y() != n_y {
                return Err(Error::DimensionMismatch(format!("trajectory {i} has different channel counts")));
            }
            fill_column(&mut z, i, t, 0, l);
        }
        Self::from_matrix(z, l, l0, n_u, n_y, Construction::Independent)
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn l0(&self) -> usize {
        self.l0
    }
    pub fn lp(&self) -> usize {
        self.l - self.l0
    }
    pub fn n_u(&self) -> usize {
        self.n_u
    }
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn m(&self) -> usize {
        self.z.ncols()
    }
    pub fn construction(&self) -> Construction {
        self.construction
    }

    /// Permits noisy-data predictors and confidence regions on a Hankel
    /// matrix. Overlapping windows share noise samples, so regions built
    /// from such a matrix are not statistically valid.
    pub fn with_hankel_override(mut self) -> Self {
        self.hankel_override = true;
        self
    }

    /// Whether the independent-column noise model may be applied.
    pub fn ensure_noise_model_valid(&self) -> Result<()> {
        if self.construction == Construction::Hankel && !self.hankel_override {
            return Err(Error::HankelNotAllowed);
        }
        Ok(())
    }

    pub fn partition(&self) -> Partition {
        let (nu, ny, l, l0, lp) = (self.n_u, self.n_y, self.l, self.l0, self.lp());
        let m = self.m();
        let rows = |start: usize, n: usize| self.z.view((start, 0), (n, m)).into_owned();
        Partition {
            u_p: rows(0, nu * l0),
            u_f: rows(nu * l0, nu * lp),
            y_p: rows(nu * l, ny * l0),
            y_f: rows(nu * l + ny * l0, ny * lp),
        }
    }

    /// Rank condition `rank(Z) = n_u L + n_x` for exact noise-free prediction.
    pub fn check_rank(&self, n_x: usize) -> bool {
        linalg::numerical_rank(&self.z) == self.n_u * self.l + n_x
    }

    pub(crate) fn cached_gamma(&self, key: GammaKey) -> Option<Arc<DMatrix<f64>>> {
        self.gamma_cache.read().ok()?.get(&key).cloned()
    }

    pub(crate) fn store_gamma(&self, key: GammaKey, gamma: DMatrix<f64>) -> Arc<DMatrix<f64>> {
        let mut guard = match self.gamma_cache.write() {
            Ok(g) => g,
            Err(poisoned) => poisoned.into_inner(),
        };
        guard.entry(key).or_insert_with(|| Arc::new(gamma)).clone()
    }
}

fn check_window(len: usize, l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if len < l {
        return Err(Error::TrajectoryTooShort { len, needed: l });
    }
    Ok(())
}

fn fill_column(z: &mut DMatrix<f64>, col: usize, traj: &Trajectory, start: usize, l: usize) {
    let (n_u, n_y) = (traj.n_u(), traj.n_y());
    for k in 0..l {
        let u = &traj.inputs()[start + k];
        let y = &traj.outputs()[start + k];
        for c in 0..n_u {
            z[(k * n_u + c, col)] = u[c];
        }
        for c in 0..n_y {
            z[(n_u * l + k * n_y + c, col)] = y[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
    }

    #[test]
    fn page_stacking() {
        let t = Trajectory::siso(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]).unwrap();
        let sm = SignalMatrix::build_page(&t, 2, 1).unwrap();
        assert_eq!(rows(sm.z()), vec![vec![1.0, 3.0], vec![2.0, 4.0], vec![5.0, 7.0], vec![6.0, 8.0]]);
        let t5 = Trajectory::siso(&[1.0, 2.0, 3.0, 4.0, 9.0], &[5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        assert_eq!(SignalMatrix::build_page(&t5, 2, 1).unwrap().m(), 2);
    }

    #[test]
    fn hankel_stacking() {
        let t = Trajectory::siso(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        let sm = SignalMatrix::build_hankel(&t, 2, 1).unwrap();
        assert_eq!(rows(sm.z()), vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![4.0, 5.0], vec![5.0, 6.0]]);
        let u: Vec<f64> = (0..10).map(f64::from).collect();
        let t10 = Trajectory::siso(&u, &u).unwrap();
        assert_eq!(SignalMatrix::build_hankel(&t10, 4, 2).unwrap().m(), 7);
    }

    #[test]
    fn single_window_constructions_agree() {
        let t = Trajectory::siso(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        let p = SignalMatrix::build_page(&t, 3, 1).unwrap();
        let h = SignalMatrix::build_hankel(&t, 3, 1).unwrap();
        let i = SignalMatrix::from_trajectories(std::slice::from_ref(&t), 3, 1).unwrap();
        assert_eq!(p.m(), 1);
        assert_eq!(p.z(), h.z());
        assert_eq!(p.z(), i.z());
    }

    #[test]
    fn independent_trajectories() {
        let a = Trajectory::siso(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        let b = Trajectory::siso(&[5.0, 6.0], &[7.0, 8.0]).unwrap();
        let sm = SignalMatrix::from_trajectories(&[a.clone(), b], 2, 1).unwrap();
        assert_eq!(sm.z().shape(), (4, 2));
        let c = Trajectory::siso(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            SignalMatrix::from_trajectories(&[a, c], 2, 1),
            Err(Error::LengthMismatch { index: 1, len: 3, expected: 2 })
        );
    }

    #[test]
    fn too_short() {
        let t = Trajectory::siso(&[1.0], &[1.0]).unwrap();
        assert_eq!(SignalMatrix::build_page(&t, 2, 1), Err(Error::TrajectoryTooShort { len: 1, needed: 2 }));
        assert!(SignalMatrix::build_hankel(&t, 2, 1).is_err());
    }

    #[test]
    fn mimo_row_layout() {
        // n_u = 2, n_y = 1, L = 2: rows are u_0(2), u_1(2), y_0, y_1.
        let u = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])];
        let y = vec![DVector::from_vec(vec![5.0]), DVector::from_vec(vec![6.0])];
        let t = Trajectory::new(u, y).unwrap();
        let sm = SignalMatrix::build_page(&t, 2, 1).unwrap();
        assert_eq!(sm.z().as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = sm.partition();
        assert_eq!(p.u_p.as_slice(), &[1.0, 2.0]);
        assert_eq!(p.u_f.as_slice(), &[3.0, 4.0]);
        assert_eq!(p.y_p.as_slice(), &[5.0]);
        assert_eq!(p.y_f.as_slice(), &[6.0]);
    }

    #[test]
    fn rank_edge_cases() {
        let z = DMatrix::zeros(4, 3);
        let sm = SignalMatrix::from_matrix(z, 2, 1, 1, 1, Construction::Page).unwrap();
        assert!(!sm.check_rank(1));
        let t = Trajectory::siso(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]).unwrap();
        // Two columns cannot reach n_u L + n_x = 3.
        assert!(!SignalMatrix::build_page(&t, 2, 1).unwrap().check_rank(1));
    }

    #[test]
    fn invalid_split() {
        let z = DMatrix::zeros(4, 1);
        assert!(SignalMatrix::from_matrix(z.clone(), 2, 2, 1, 1, Construction::Page).is_err());
        assert!(SignalMatrix::from_matrix(z, 2, 0, 1, 1, Construction::Page).is_err());
    }
}
