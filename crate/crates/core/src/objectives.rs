//! Exact objective functions.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::dataset::Dataset;
use crate::error::{CboError, Result};

/// Rastrigin function with the constant chosen so that the global minimum
/// at the origin is 0 in every dimension.
pub fn rastrigin(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v - 10.0 * (2.0 * PI * v).cos() + 10.0).sum()
}

pub fn rotation(angle: f64, x: &[f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// `rastrigin(W x)` with `W` the planar rotation by `angle`.
pub fn rotated_rastrigin(x: &[f64], angle: f64) -> Result<f64> {
    let x: &[f64; 2] = x
        .try_into()
        .map_err(|_| CboError::Shape(format!("rotated Rastrigin is two-dimensional, got d = {}", x.len())))?;
    Ok(rastrigin(&rotation(angle, x)))
}

/// Logistic function evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Component loss `(b - sigmoid(x.a))^2`. For `b = 1` the residual is
/// `sigmoid(-x.a)`, which keeps full relative precision as `x.a` grows.
#[inline]
pub fn component_loss(x: &[f64], a: impl IntoIterator<Item = f64>, label: u8) -> f64 {
    let z: f64 = a.into_iter().zip(x).map(|(a, w)| a * w).sum();
    let residual = if label == 1 { sigmoid(-z) } else { sigmoid(z) };
    residual * residual
}

/// Mean component loss over `subset`, or over the whole dataset when absent.
pub fn finite_sum_loss(x: &[f64], dataset: &Dataset, subset: Option<&[usize]>) -> Result<f64> {
    if x.len() != dataset.dim() {
        return Err(CboError::Shape(format!("parameter length {} vs feature dim {}", x.len(), dataset.dim())));
    }
    let m = dataset.len();
    let labels = dataset.labels();
    match subset {
        None => {
            let sum: f64 = (0..m)
                .map(|j| component_loss(x, dataset.feature_row(j).iter().copied(), labels[j]))
                .sum();
            Ok(sum / m as f64)
        }
        Some([]) => Err(CboError::Empty("finite-sum subset is empty".into())),
        Some(idx) => {
            let mut sum = 0.0;
            for &j in idx {
                if j >= m {
                    return Err(CboError::Shape(format!("subset index {j} outside dataset of size {m}")));
                }
                sum += component_loss(x, dataset.feature_row(j).iter().copied(), labels[j]);
            }
            Ok(sum / idx.len() as f64)
        }
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    Rastrigin,
    RotatedRastrigin { angle: f64 },
    FiniteSum(Arc<Dataset>),
}

impl Objective {
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            Objective::Rastrigin => Ok(rastrigin(x)),
            Objective::RotatedRastrigin { angle } => rotated_rastrigin(x, *angle),
            Objective::FiniteSum(ds) => finite_sum_loss(x, ds, None),
        }
    }

    /// Known global minimizer, when there is one.
    pub fn minimizer(&self, dim: usize) -> Option<Vec<f64>> {
        match self {
            Objective::Rastrigin | Objective::RotatedRastrigin { .. } => Some(vec![0.0; dim]),
            Objective::FiniteSum(_) => None,
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let expected = match self {
            Objective::Rastrigin => return Ok(()),
            Objective::RotatedRastrigin { .. } => 2,
            Objective::FiniteSum(ds) => ds.dim(),
        };
        if dim != expected {
            return Err(CboError::Shape(format!("objective needs dimension {expected}, configured {dim}")));
        }
        Ok(())
    }

    pub fn dataset(&self) -> Option<&Arc<Dataset>> {
        match self {
            Objective::FiniteSum(ds) => Some(ds),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn rastrigin_examples() {
        assert_eq!(rastrigin(&[0.0]), 0.0);
        assert_eq!(rastrigin(&[0.0; 5]), 0.0);
        assert!((rastrigin(&[1.0]) - 1.0).abs() < 1e-12);
        assert!((rastrigin(&[0.5]) - 20.25).abs() < 1e-12);
    }

    #[test]
    fn rastrigin_grid_minimum_is_unique_at_origin() {
        let n = 401;
        let grid: Vec<f64> = (0..n).map(|i| -5.12 + 10.24 * i as f64 / (n - 1) as f64).collect();
        for &a in &grid {
            let v = rastrigin(&[a]);
            assert!(v >= 0.0);
            if a.abs() > 1e-9 {
                assert!(v > 0.0);
            }
            for &b in grid.iter().step_by(4) {
                let v2 = rastrigin(&[a, b]);
                assert!(v2 >= 0.0);
                if a.abs() > 1e-9 || b.abs() > 1e-9 {
                    assert!(v2 > 0.0, "({a}, {b})");
                }
            }
        }
    }

    #[test]
    fn rotated_examples() {
        assert_eq!(rotated_rastrigin(&[0.0, 0.0], 1.3).unwrap(), 0.0);
        let theta = PI / 3.0;
        // W^{-1} (1, 0) is the rotation by -theta
        let x = rotation(-theta, &[1.0, 0.0]);
        assert!((rotated_rastrigin(&x, theta).unwrap() - 1.0).abs() < 1e-12);
        assert!(rotated_rastrigin(&[1.0], theta).is_err());
    }

    proptest! {
        #[test]
        fn identity_rotation_matches_plain(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let diff = (rotated_rastrigin(&[a, b], 0.0).unwrap() - rastrigin(&[a, b])).abs();
            prop_assert!(diff <= 1e-12);
        }

        #[test]
        fn rotated_matches_matrix_product(a in -5.0f64..5.0, b in -5.0f64..5.0, t in -3.2f64..3.2) {
            let w = [[t.cos(), -t.sin()], [t.sin(), t.cos()]];
            let wx = [w[0][0] * a + w[0][1] * b, w[1][0] * a + w[1][1] * b];
            prop_assert_eq!(rotated_rastrigin(&[a, b], t).unwrap(), rastrigin(&wx));
        }

        #[test]
        fn rastrigin_nonnegative(x in proptest::collection::vec(-50.0f64..50.0, 1..6)) {
            prop_assert!(rastrigin(&x) >= 0.0);
        }
    }

    fn toy() -> Dataset {
        Dataset::new(array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]], vec![1, 0, 1], "toy").unwrap()
    }

    #[test]
    fn sigmoid_loss_examples() {
        let f = component_loss(&[40.0], [1.0], 1);
        assert!((0.0..1e-17).contains(&f), "{f}");
        assert_eq!(component_loss(&[0.0], [3.0], 0), 0.25);
        let ds = Dataset::new(array![[1.0], [2.0]], vec![0, 1], "pair").unwrap();
        assert_eq!(finite_sum_loss(&[0.0], &ds, None).unwrap(), 0.25);
    }

    #[test]
    fn sigmoid_does_not_overflow() {
        assert_eq!(sigmoid(-1e6), 0.0);
        assert_eq!(sigmoid(1e6), 1.0);
        assert!((sigmoid(0.3) - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-16);
        let f = component_loss(&[1e3, -1e3], [700.0, 700.0], 0);
        assert!(f.is_finite());
    }

    #[test]
    fn full_subset_equals_mean_of_components() {
        let ds = toy();
        let x = [0.4, -0.9];
        let parts: Vec<f64> = (0..3)
            .map(|j| finite_sum_loss(&x, &ds, Some(&[j])).unwrap())
            .collect();
        let mean = parts.iter().sum::<f64>() / 3.0;
        let full = finite_sum_loss(&x, &ds, None).unwrap();
        let all = finite_sum_loss(&x, &ds, Some(&[0, 1, 2])).unwrap();
        assert!((full - mean).abs() <= 1e-15 * mean);
        assert_eq!(full, all);
        assert!((0.0..=1.0).contains(&full));
    }

    #[test]
    fn subset_errors() {
        let ds = toy();
        assert!(matches!(finite_sum_loss(&[0.0, 0.0], &ds, Some(&[])), Err(CboError::Empty(_))));
        assert!(finite_sum_loss(&[0.0, 0.0], &ds, Some(&[3])).is_err());
        assert!(finite_sum_loss(&[0.0], &ds, None).is_err());
    }
}
