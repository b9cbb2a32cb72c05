use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

/// Mean-centering plus projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `d_in x d_out`, orthonormal columns in descending-variance order.
    pub components: Matrix,
    /// Sample variance along each kept component.
    pub variances: Vec<f64>,
    /// Set when the data had no spread at all; the components are then an
    /// arbitrary orthonormal basis.
    pub zero_variance: bool,
}

impl PcaTransform {
    pub fn d_in(&self) -> usize {
        self.components.rows()
    }

    pub fn d_out(&self) -> usize {
        self.components.cols()
    }

    /// Maps projected coordinates back into the input space.
    pub fn reconstruct(&self, z: &Matrix) -> Result<Matrix> {
        let mut x = z.matmul_nt(&self.components)?;
        for r in 0..x.rows() {
            for (v, m) in x.row_mut(r).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(x)
    }
}

/// Sample covariance (divisor `n - 1`) of the rows of `x`.
pub(crate) fn covariance(x: &Matrix, mean: &[f64]) -> Matrix {
    let d = x.cols();
    let mut cov = Matrix::zeros(d, d);
    for r in x.iter_rows() {
        for i in 0..d {
            let di = r[i] - mean[i];
            if di == 0.0 {
                continue;
            }
            for j in i..d {
                let v = cov.get(i, j) + di * (r[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = (x.rows() - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}

/// Fits PCA by eigendecomposition of the sample covariance.
///
/// Each component is signed so that its largest-magnitude entry is positive
/// (the first such entry on ties).
pub fn fit_pca(x: &Matrix, d_out: usize) -> Result<PcaTransform> {
    let (n, d_in) = x.shape();
    if n < 2 {
        return Err(Error::contract(format!("fit_pca needs at least 2 rows, got {n}")));
    }
    if d_out == 0 || d_out > d_in.min(n - 1) {
        return Err(Error::contract(format!(
            "fit_pca: d_out={d_out} outside 1..={}",
            d_in.min(n - 1)
        )));
    }
    let mean = x.column_means();
    let cov = covariance(x, &mean);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d_in, d_in, cov.data()));

    let mut order: Vec<usize> = (0..d_in).collect();
    // Stable sort keeps the solver's order among exactly equal eigenvalues.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Matrix::zeros(d_in, d_out);
    let mut variances = Vec::with_capacity(d_out);
    for (c, &k) in order.iter().take(d_out).enumerate() {
        let col = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for i in 1..d_in {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d_in {
            components.set(i, c, sign * col[i]);
        }
        variances.push(eig.eigenvalues[k].max(0.0));
    }
    let zero_variance = cov.data().iter().all(|&v| v == 0.0);
    Ok(PcaTransform {
        mean,
        components,
        variances,
        zero_variance,
    })
}

/// Projects `x` with a fitted transform: `(x - mean) · components`.
pub fn apply_pca(t: &PcaTransform, x: &Matrix) -> Result<Matrix> {
    if x.cols() != t.d_in() {
        return Err(Error::shape("apply_pca", format!("{} columns", t.d_in()), x.cols()));
    }
    let mut centered = x.clone();
    for r in 0..centered.rows() {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&t.mean) {
            *v -= m;
        }
    }
    super::matmul(&centered, &t.components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    /// Cyclic Jacobi eigenvalue iteration; independent of nalgebra.
    fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut m = a.clone();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| m.get(i, j).powi(2))
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m.get(k, p);
                        let mkq = m.get(k, q);
                        m.set(k, p, c * mkp - s * mkq);
                        m.set(k, q, s * mkp + c * mkq);
                    }
                    for k in 0..n {
                        let mpk = m.get(p, k);
                        let mqk = m.get(q, k);
                        m.set(p, k, c * mpk - s * mqk);
                        m.set(q, k, s * mpk + c * mqk);
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn column_variance(z: &Matrix, c: usize) -> f64 {
        let n = z.rows() as f64;
        let mean = (0..z.rows()).map(|i| z.get(i, c)).sum::<f64>() / n;
        (0..z.rows()).map(|i| (z.get(i, c) - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    fn assert_orthonormal(t: &PcaTransform) {
        let gram = t.components.matmul_tn(&t.components).unwrap();
        for i in 0..gram.rows() {
            for j in 0..gram.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn axis_aligned() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [4.0, 0.0], [-3.0, 0.0]]).unwrap();
        let t = fit_pca(&x, 1).unwrap();
        assert!((t.components.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(t.components.get(1, 0).abs() < 1e-12);
        let z = apply_pca(&t, &x).unwrap();
        assert!((column_variance(&z, 0) - column_variance(&x, 0)).abs() < 1e-12);
    }

    #[test]
    fn rank_one_reconstructs() {
        let dir = [0.3, -0.5, 0.8];
        let x = Matrix::from_fn(20, 3, |i, j| 1.0 + (i as f64 - 7.0) * 0.37 * dir[j]);
        let t = fit_pca(&x, 1).unwrap();
        let back = t.reconstruct(&apply_pca(&t, &x).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projected_variance_matches_eigen_oracle() {
        let mut rng = Rng::new(11);
        let scales = [3.0, 2.5, 2.0, 1.2, 1.0, 0.8, 0.5, 0.4, 0.2, 0.1];
        let x = Matrix::from_fn(50, 10, |_, j| scales[j] * rng.normal());
        let t = fit_pca(&x, 3).unwrap();
        assert_orthonormal(&t);
        let z = apply_pca(&t, &x).unwrap();
        let projected: f64 = (0..3).map(|c| column_variance(&z, c)).sum();
        let ev = jacobi_eigenvalues(&covariance(&x, &x.column_means()));
        let top3: f64 = ev[..3].iter().sum();
        assert!((projected - top3).abs() < 1e-8, "{projected} vs {top3}");
        assert!(t.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn round_trip_of_low_rank_data() {
        let mut rng = Rng::new(2);
        let basis = Matrix::from_fn(2, 5, |_, _| rng.normal());
        let coeff = Matrix::from_fn(30, 2, |_, _| rng.normal());
        let x = crate::numkit::matmul(&coeff, &basis).unwrap();
        let t = fit_pca(&x, 2).unwrap();
        let back = t.reconstruct(&apply_pca(&t, &x).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn sign_convention() {
        let mut rng = Rng::new(8);
        let x = Matrix::from_fn(40, 4, |_, j| (j + 1) as f64 * rng.normal());
        let t = fit_pca(&x, 4).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = (0..4).map(|i| t.components.get(i, c)).collect();
            let big = col.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn centering_and_identity() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.0, 5.0]]).unwrap();
        let t = fit_pca(&x, 2).unwrap();
        let repeated = Matrix::from_fn(4, 2, |_, j| t.mean[j]);
        assert!(apply_pca(&t, &repeated).unwrap().data().iter().all(|v| v.abs() < 1e-12));

        let ident = PcaTransform {
            mean: vec![0.0, 0.0],
            components: Matrix::identity(2),
            variances: vec![1.0, 1.0],
            zero_variance: false,
        };
        assert_eq!(apply_pca(&ident, &x).unwrap(), x);
    }

    #[test]
    fn degenerate_input_is_flagged() {
        let x = Matrix::from_fn(5, 3, |_, j| j as f64);
        let t = fit_pca(&x, 2).unwrap();
        assert!(t.zero_variance);
        assert_orthonormal(&t);
    }

    #[test]
    fn bad_arguments() {
        let x = Matrix::zeros(3, 4);
        assert!(fit_pca(&x, 3).is_err());
        assert!(fit_pca(&x, 0).is_err());
        assert!(fit_pca(&Matrix::zeros(1, 4), 1).is_err());
        let t = fit_pca(&Matrix::from_fn(5, 4, |i, j| (i * j) as f64), 2).unwrap();
        assert!(apply_pca(&t, &Matrix::zeros(2, 3)).is_err());
    }
}
