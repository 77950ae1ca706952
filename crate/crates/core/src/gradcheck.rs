//! Central finite differences, used to check analytic gradients.

use crate::matrix::Matrix;

/// Numerical gradient of `f` at `point`, one entry at a time.
pub fn central_difference(mut f: impl FnMut(Matrix) -> f64, point: &Matrix, step: f64) -> Matrix {
    let mut grad = Matrix::zeros(point.rows(), point.cols());
    let mut probe = point.clone();
    for i in 0..point.rows() {
        for j in 0..point.cols() {
            let orig = point.get(i, j);
            probe.set(i, j, orig + step);
            let plus = f(probe.clone());
            probe.set(i, j, orig - step);
            let minus = f(probe.clone());
            probe.set(i, j, orig);
            grad.set(i, j, (plus - minus) / (2.0 * step));
        }
    }
    grad
}

/// Entries below this magnitude are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Worst entrywise `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}
