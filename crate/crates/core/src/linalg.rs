//! Small SVD-based helpers shared by the geometry and density modules.

use nalgebra::{DMatrix, DVector, SVD};

/// Default relative rank tolerance (relative to the largest singular value).
pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Thin SVD with singular values sorted in nonincreasing order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let svd = SVD::new(a.clone(), true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let sv = svd.singular_values;

        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));

        let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
        let singular_values = order.iter().map(|&i| sv[i]).collect();
        SortedSvd {
            u,
            singular_values,
            v_t,
        }
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        rank_from_singular_values(&self.singular_values, rel_tol)
    }

    /// Least-squares solution of `a x = rhs` restricted to the leading `rank`
    /// singular triplets.
    pub fn solve(&self, rhs: &DVector<f64>, rank: usize) -> DVector<f64> {
        let n = self.v_t.ncols();
        let mut x = DVector::zeros(n);
        for k in 0..rank {
            let coeff = self.u.column(k).dot(rhs) / self.singular_values[k];
            x.axpy(coeff, &self.v_t.row(k).transpose(), 1.0);
        }
        x
    }

    /// Orthonormal basis of the column space (first `rank` left singular vectors).
    pub fn range_basis(&self, rank: usize) -> DMatrix<f64> {
        self.u.columns(0, rank).into_owned()
    }

    /// Moore-Penrose pseudoinverse using the leading `rank` triplets.
    pub fn pseudoinverse(&self, rank: usize) -> DMatrix<f64> {
        let (m, n) = (self.u.nrows(), self.v_t.ncols());
        let mut pinv = DMatrix::zeros(n, m);
        for k in 0..rank {
            let v = self.v_t.row(k).transpose();
            let u = self.u.column(k);
            pinv.ger(1.0 / self.singular_values[k], &v, &u, 1.0);
        }
        pinv
    }
}

/// Singular values in nonincreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Number of singular values strictly above `rel_tol * sigma_max`; zero when
/// `sigma_max` is zero.
pub fn rank_from_singular_values(sv: &[f64], rel_tol: f64) -> usize {
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    rank_from_singular_values(&singular_values(a), rel_tol)
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}
