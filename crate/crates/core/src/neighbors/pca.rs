use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, Tensor, Vector};
use crate::{Error, Result};

/// Linear projection onto the top principal axes of a set of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// `d x D`; row `k` is the `k`-th principal axis.
    axes: Matrix,
    mean: Vector,
    /// Eigenvalues of the kept axes, nonincreasing.
    variances: Vec<f64>,
    total_variance: f64,
}

impl PcaProjection {
    pub fn from_parts(
        axes: Matrix,
        mean: Vector,
        variances: Vec<f64>,
        total_variance: f64,
    ) -> Result<Self> {
        if axes.cols() != mean.len() || axes.rows() != variances.len() {
            return Err(Error::Integrity(format!(
                "pca axes {} vs mean [{}] and {} variances",
                axes.shape(),
                mean.len(),
                variances.len()
            )));
        }
        Ok(PcaProjection {
            axes,
            mean,
            variances,
            total_variance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.axes.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.axes.rows()
    }

    pub fn axes(&self) -> &Matrix {
        &self.axes
    }

    /// The `D x d` projection matrix (axes as columns).
    pub fn projection_matrix(&self) -> Matrix {
        self.axes.transpose()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.variances.len()];
        }
        self.variances
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// `Pᵀ (v - mean)`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::shape("pca_apply", self.input_dim(), v.len()));
        }
        let centered: Vec<f64> = v.iter().zip(self.mean.iter()).map(|(a, m)| a - m).collect();
        Ok(self
            .axes
            .row_iter()
            .map(|axis| crate::numerics::dot(axis, &centered))
            .collect())
    }
}

/// Fits principal axes of the mean-centered `rows`, keeping `d` of them.
///
/// Axes are ordered by descending covariance eigenvalue, and each is signed so
/// that its largest-magnitude component is positive.
pub fn pca_fit(rows: &Matrix, d: usize) -> Result<PcaProjection> {
    let (n, dim) = (rows.rows(), rows.cols());
    if n < 2 {
        return Err(Error::Config(format!("PCA needs at least 2 rows, got {n}")));
    }
    if d == 0 || d > n.min(dim) {
        return Err(Error::Config(format!(
            "cannot keep {d} components from a {n}x{dim} matrix"
        )));
    }
    let mut mean = vec![0.0; dim];
    for r in rows.row_iter() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(dim, dim);
    for r in rows.row_iter() {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..dim {
            for j in i..dim {
                let v = cov.get(i, j) + c[i] * c[j];
                cov.set(i, j, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));

    let mut axes = Matrix::zeros(d, dim);
    for (k, &j) in order.iter().take(d).enumerate() {
        let mut axis: Vec<f64> = (0..dim).map(|i| vectors.get(i, j)).collect();
        let lead =
            axis.iter().enumerate().fold(
                0,
                |best, (i, v)| if v.abs() > axis[best].abs() { i } else { best },
            );
        if axis[lead] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.row_mut(k).copy_from_slice(&axis);
    }
    let variances = order
        .iter()
        .take(d)
        .map(|&j| eigenvalues[j].max(0.0))
        .collect();
    let total_variance = (0..dim).map(|i| cov.get(i, i)).sum();
    PcaProjection::from_parts(axes, Vector::new(mean)?, variances, total_variance)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and a matrix whose columns are the matching unit eigenvectors.
fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    let mut a = sym.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a.get(p, q).powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    ((0..n).map(|i| a.get(i, i)).collect(), v)
}
