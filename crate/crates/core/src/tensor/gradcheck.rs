//! Central-difference gradient checking at 64-bit precision.

use super::Matrix;

/// Outcome of comparing an analytic gradient with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates where the two step sizes disagree, i.e. the probe
    /// straddles a kink (ReLU at 0, softmax ties). Not counted in the error.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

const STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;
const KINK_TOL: f64 = 1e-5;

/// Compares the analytic gradient of a scalar function against Richardson-
/// extrapolated central differences.
///
/// `f` maps a point to `(value, analytic gradient)`; it is evaluated at the
/// probe point once for the gradient and at perturbed copies for values.
pub fn finite_diff_check<F>(mut f: F, point: &Matrix<f64>, tolerance: f64) -> GradReport
where
    F: FnMut(&Matrix<f64>) -> (f64, Matrix<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.shape(), point.shape(), "gradient shape must match the point");
    let mut x = point.clone();
    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tolerance,
    };
    let mut central = |x: &mut Matrix<f64>, i: usize, h: f64| {
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + h;
        let plus = f(x).0;
        x.as_mut_slice()[i] = orig - h;
        let minus = f(x).0;
        x.as_mut_slice()[i] = orig;
        (plus - minus) / (2.0 * h)
    };
    for i in 0..point.len() {
        let h = STEP * point.as_slice()[i].abs().max(1.0);
        let coarse = central(&mut x, i, h);
        let fine = central(&mut x, i, h / 2.0);
        if (coarse - fine).abs() > KINK_TOL * coarse.abs().max(1.0) {
            report.skipped += 1;
            continue;
        }
        let numeric = (4.0 * fine - coarse) / 3.0;
        let a = analytic.as_slice()[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((i / point.cols().max(1), i % point.cols().max(1)));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels;

    #[test]
    fn linear_function_is_exact() {
        let c = Matrix::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        let report = finite_diff_check(
            |x| {
                (
                    x.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum(),
                    c.clone(),
                )
            },
            &Matrix::from_rows(&[vec![0.3, 0.1, -4.0]]).unwrap(),
            1e-4,
        );
        assert!(report.passed());
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let report = finite_diff_check(
            |x| (x.get(0, 0).powi(2), x.map(|v| 3.0 * v)),
            &Matrix::from_rows(&[vec![1.0]]).unwrap(),
            1e-4,
        );
        assert!(!report.passed());
    }

    #[test]
    fn relu_away_from_zero() {
        let proj = Matrix::from_rows(&[vec![0.7, -1.3, 2.1, 0.4]]).unwrap();
        let point = Matrix::from_rows(&[vec![-0.8, 0.5, 1.7, -0.2]]).unwrap();
        let report = finite_diff_check(
            |x| {
                let y = kernels::activation(x, kernels::Activation::Relu);
                let v = y.as_slice().iter().zip(proj.as_slice()).map(|(a, b)| a * b).sum();
                (v, kernels::activation_backward(x, &proj, kernels::Activation::Relu))
            },
            &point,
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn kink_probe_is_skipped() {
        let report = finite_diff_check(
            |x| {
                let v = x.get(0, 0);
                (
                    v.max(0.0),
                    Matrix::from_rows(&[vec![if v > 0.0 { 1.0 } else { 0.0 }]]).unwrap(),
                )
            },
            &Matrix::from_rows(&[vec![1e-7]]).unwrap(),
            1e-4,
        );
        assert_eq!(report.skipped, 1);
        assert!(!report.passed());
    }
}
