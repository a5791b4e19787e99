use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub alpha_grid: Vec<f64>,
    pub standardize: bool,
    pub inner_folds: usize,
    pub fit_intercept: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            alpha_grid: (0..=6).map(|e| 10f64.powi(e)).collect(),
            standardize: true,
            inner_folds: 3,
            fit_intercept: true,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::Config("alpha_grid is empty".into()));
        }
        if self.alpha_grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Config("alphas must be positive and finite".into()));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "alpha_grid must be strictly ascending".into(),
            ));
        }
        if self.inner_folds < 2 {
            return Err(Error::Config("inner_folds must be at least 2".into()));
        }
        Ok(())
    }
}

/// A fitted ridge model in the original feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| x * w)
                .sum::<f64>()
    }
}

/// Solves `(ZᵀZ + αI) w = Zᵀ y` where `Z` is `X` centered (with an
/// intercept) and divided by training standard deviations (with
/// `standardize`). The intercept is not penalized.
pub fn ridge_fit(
    x: &[&[f64]],
    y: &[f64],
    alpha: f64,
    standardize: bool,
    fit_intercept: bool,
) -> Result<RidgeFit> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!(
            "ridge alpha must be positive, got {alpha}"
        )));
    }
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("{n} rows but {} targets", y.len())));
    }
    if n < 2 {
        return Err(Error::Data("ridge needs at least two rows".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged feature rows".into()));
    }
    if x.iter()
        .flat_map(|r| r.iter())
        .chain(y)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Data("non-finite feature or target".into()));
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| {
            if fit_intercept {
                x.iter().map(|r| r[j]).sum::<f64>() / nf
            } else {
                0.0
            }
        })
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            if !standardize {
                return 1.0;
            }
            let m = x.iter().map(|r| r[j]).sum::<f64>() / nf;
            let sd = (x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / nf).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let y_mean = if fit_intercept {
        y.iter().sum::<f64>() / nf
    } else {
        0.0
    };
    let z = DMatrix::from_fn(n, d, |i, j| (x[i][j] - mean[j]) / scale[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = z.tr_mul(&z);
    for j in 0..d {
        gram[(j, j)] += alpha;
    }
    let rhs = z.tr_mul(&yc);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
    let wz = chol.solve(&rhs);
    let weights: Vec<f64> = (0..d).map(|j| wz[j] / scale[j]).collect();
    let intercept = y_mean - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    if weights.iter().any(|w| !w.is_finite()) || !intercept.is_finite() {
        return Err(Error::Numeric("ridge solution is not finite".into()));
    }
    Ok(RidgeFit {
        weights,
        intercept,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rows(x: &[Vec<f64>]) -> Vec<&[f64]> {
        x.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn identity_design_by_hand() {
        // (I + I)⁻¹ y
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let f = ridge_fit(&rows(&x), &[2.0, 4.0], 1.0, false, false).unwrap();
        assert!((f.weights[0] - 1.0).abs() < 1e-12 && (f.weights[1] - 2.0).abs() < 1e-12);
        assert_eq!(f.intercept, 0.0);
    }

    #[test]
    fn constant_target_gives_zero_weights() {
        let x = vec![vec![1.0, 5.0], vec![2.0, -1.0], vec![0.5, 3.0]];
        let f = ridge_fit(&rows(&x), &[3.5; 3], 1.0, true, true).unwrap();
        assert!(f.weights.iter().all(|w| *w == 0.0));
        assert_eq!(f.intercept, 3.5);
    }

    #[test]
    fn huge_alpha_shrinks_weights() {
        let x = vec![
            vec![1.0, 2.0],
            vec![3.0, -1.0],
            vec![0.0, 4.0],
            vec![2.0, 2.0],
        ];
        let y = [1.0, -2.0, 0.5, 3.0];
        let f = ridge_fit(&rows(&x), &y, 1e12, false, false).unwrap();
        let xty: f64 = (0..2)
            .map(|j| x.iter().zip(&y).map(|(r, v)| r[j] * v).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = f.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-6 * xty);
    }

    #[test]
    fn invalid_inputs() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            ridge_fit(&rows(&x), &[1.0, 2.0], 0.0, true, true),
            Err(Error::Config(_))
        ));
        assert!(ridge_fit(&rows(&x[..1]), &[1.0], 1.0, true, true).is_err());
        assert!(ridge_fit(&rows(&x), &[1.0, f64::NAN], 1.0, true, true).is_err());
        let ragged = vec![vec![1.0], vec![2.0, 3.0]];
        assert!(ridge_fit(&rows(&ragged), &[1.0, 2.0], 1.0, true, true).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RidgeConfig::default().validate().is_ok());
        assert_eq!(
            RidgeConfig::default().alpha_grid,
            [1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6]
        );
        for bad in [vec![], vec![1.0, 1.0], vec![10.0, 1.0], vec![-1.0]] {
            assert!(RidgeConfig {
                alpha_grid: bad,
                ..Default::default()
            }
            .validate()
            .is_err());
        }
        assert!(RidgeConfig {
            inner_folds: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn feature_scaling_is_absorbed_by_standardization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().map(|v| v * 37.0).collect())
            .collect();
        let a = ridge_fit(&rows(&x), &y, 10.0, true, true).unwrap();
        let b = ridge_fit(&rows(&scaled), &y, 10.0, true, true).unwrap();
        for (r, s) in x.iter().zip(&scaled) {
            assert!((a.predict(r) - b.predict(s)).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_columns_match_original_at_double_alpha() {
        // [X X] with penalty 2α splits each weight in half: same predictions
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r[0] - 0.5 * r[2] + rng.random_range(-0.1..0.1))
            .collect();
        let dup: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().chain(r).copied().collect())
            .collect();
        let a = ridge_fit(&rows(&x), &y, 5.0, true, true).unwrap();
        let b = ridge_fit(&rows(&dup), &y, 10.0, true, true).unwrap();
        for (r, s) in x.iter().zip(&dup) {
            assert!((a.predict(r) - b.predict(s)).abs() < 1e-8);
        }
    }
}
