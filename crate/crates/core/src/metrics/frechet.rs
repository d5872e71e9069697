use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_square, sqrt_psd, symmetric_eigen};
use crate::tensor::Tensor;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// Mean and covariance of a set of embeddings. `cov` is row-major `dim × dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub dim: usize,
}

impl GaussianMoments {
    /// Checks symmetry and positive semidefiniteness of `cov`.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        if cov.len() != dim * dim {
            return Err(Error::dim(
                "gaussian_moments",
                format!("mean has {dim} entries, covariance has {}", cov.len()),
            ));
        }
        let m = GaussianMoments { mean, cov, dim };
        m.check_symmetric()?;
        let scale = m.cov.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        let lowest = symmetric_eigen(&m.cov, dim).values.into_iter().fold(f64::INFINITY, f64::min);
        if dim > 0 && lowest < -PSD_TOL * scale {
            return Err(Error::contract(format!(
                "covariance is not positive semidefinite (eigenvalue {lowest:e})"
            )));
        }
        Ok(m)
    }

    fn check_symmetric(&self) -> Result<()> {
        let n = self.dim;
        let scale = self.cov.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        for i in 0..n {
            for j in i + 1..n {
                let gap = (self.cov[i * n + j] - self.cov[j * n + i]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::contract(format!(
                        "covariance is not symmetric at ({i}, {j}): gap {gap:e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sample mean and unbiased sample covariance of `embeddings: [K, d]`.
pub fn fit_moments(embeddings: &Tensor) -> Result<GaussianMoments> {
    if embeddings.rank() != 2 {
        return Err(Error::dim(
            "fit_moments",
            format!("expected [K, d], got {:?}", embeddings.shape()),
        ));
    }
    let (k, d) = (embeddings.shape()[0], embeddings.shape()[1]);
    if k < 2 {
        return Err(Error::contract(format!("covariance needs at least 2 rows, got {k}")));
    }
    let rows: Vec<&[f64]> = embeddings.data().chunks(d).collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let mut cov = vec![0.0; d * d];
    for r in &rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (k - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianMoments { mean, cov, dim: d })
}

/// Squared Fréchet distance between two Gaussians:
/// `‖μa − μb‖² + tr(Σa + Σb − 2·(Σa·Σb)^½)`.
///
/// The trace of the product root is taken from the symmetric form
/// `√Σa·Σb·√Σa`, which has the same eigenvalues.
pub fn frechet_distance(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::dim(
            "frechet_distance",
            format!("dimensions {} and {} differ", a.dim, b.dim),
        ));
    }
    a.check_symmetric()?;
    b.check_symmetric()?;
    let n = a.dim;
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let trace = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let root_a = sqrt_psd(&a.cov, n);
    let mut inner = matmul_square(&matmul_square(&root_a, &b.cov, n), &root_a, n);
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (inner[i * n + j] + inner[j * n + i]);
            inner[i * n + j] = s;
            inner[j * n + i] = s;
        }
    }
    let cross: f64 = symmetric_eigen(&inner, n).values.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn one_d(mu: f64, var: f64) -> GaussianMoments {
        GaussianMoments::new(vec![mu], vec![var]).unwrap()
    }

    fn diag(mean: Vec<f64>, var: &[f64]) -> GaussianMoments {
        let n = var.len();
        let mut cov = vec![0.0; n * n];
        for (i, v) in var.iter().enumerate() {
            cov[i * n + i] = *v;
        }
        GaussianMoments::new(mean, cov).unwrap()
    }

    #[test]
    fn fit_hand_covariance() {
        let m = fit_moments(&Tensor::new(&[2, 2], vec![0.0, 0.0, 2.0, 0.0]).unwrap()).unwrap();
        assert_eq!(m.mean, vec![1.0, 0.0]);
        assert_eq!(m.cov, vec![2.0, 0.0, 0.0, 0.0]);
        let same = fit_moments(&Tensor::full(&[5, 3], 0.7)).unwrap();
        assert!(same.cov.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(fit_moments(&Tensor::zeros(&[1, 3])), Err(Error::Contract(_))));
    }

    #[test]
    fn one_dimensional_closed_form() {
        assert!((frechet_distance(&one_d(0.0, 1.0), &one_d(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-10);
        assert!((frechet_distance(&one_d(0.0, 1.0), &one_d(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-10);
        let a = one_d(0.3, 2.5);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn non_symmetric_covariance_is_rejected() {
        assert!(GaussianMoments::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.0, 1.0]).is_err());
        let bad = GaussianMoments {
            mean: vec![0.0, 0.0],
            cov: vec![1.0, 0.5, 0.0, 1.0],
            dim: 2,
        };
        let good = diag(vec![0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(frechet_distance(&bad, &good), Err(Error::Contract(_))));
        assert!(matches!(frechet_distance(&good, &one_d(0.0, 1.0)), Err(Error::Dimension { .. })));
    }

    fn random_moments(d: usize) -> impl Strategy<Value = GaussianMoments> {
        (
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(-1.0..1.0f64, d * (d + 2)),
        )
            .prop_map(move |(mean, raw)| {
                // Σ = A·Aᵀ / rows, rows = d + 2.
                let rows = d + 2;
                let mut cov = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        cov[i * d + j] = (0..rows).map(|r| raw[i * rows + r] * raw[j * rows + r]).sum::<f64>() / rows as f64;
                    }
                }
                GaussianMoments { mean, cov, dim: d }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn identity_symmetry_nonnegativity(a in random_moments(5), b in random_moments(5)) {
            prop_assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab.abs()));
            prop_assert!(ab >= -1e-8);
        }

        #[test]
        fn equal_covariance_gives_squared_mean_gap(a in random_moments(4), shift in prop::collection::vec(-3.0..3.0f64, 4)) {
            let mut b = a.clone();
            for (m, s) in b.mean.iter_mut().zip(&shift) {
                *m += s;
            }
            let want: f64 = shift.iter().map(|s| s * s).sum();
            prop_assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-10 * (1.0 + want));
        }

        #[test]
        fn commuting_diagonal_closed_form(
            va in prop::collection::vec(0.0..4.0f64, 6),
            vb in prop::collection::vec(0.0..4.0f64, 6),
            ma in prop::collection::vec(-1.0..1.0f64, 6),
            mb in prop::collection::vec(-1.0..1.0f64, 6),
        ) {
            let want: f64 = va.iter().zip(&vb).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>()
                + ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            let got = frechet_distance(&diag(ma, &va), &diag(mb, &vb)).unwrap();
            prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
        }

        #[test]
        fn fitted_covariance_is_symmetric(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 2..30)) {
            let k = rows.len();
            let m = fit_moments(&Tensor::new(&[k, 4], rows.concat()).unwrap()).unwrap();
            prop_assert!(GaussianMoments::new(m.mean.clone(), m.cov.clone()).is_ok());
        }
    }
}
