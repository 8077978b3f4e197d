//! Deterministic dense kernels at desk scale.
//!
//! Everything here is plain `f64` with fixed left-to-right accumulation — no
//! SIMD intrinsics, no reassociation, no parallel reduction — so a
//! computation repeated with the same inputs reproduces bit-identical
//! results. Non-finite values propagate untouched: a NaN or infinity in the
//! input shows up in the output (possibly as NaN, e.g. `inf - inf` inside
//! [`softmax`]) and is never clamped or dropped. That propagation is load-
//! bearing: the stability controller treats a non-finite probe loss as an
//! infinite innovation, so sanitizing here would mask exactly the failures
//! it exists to catch.

use crate::error::{Error, Result};

/// `a * x + y`, elementwise. `x` and `y` must have equal lengths.
pub fn axpy(a: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "axpy: x has {} elements, y has {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(xi, yi)| a * xi + yi).collect())
}

/// Euclidean norm, accumulated left to right. Empty input yields 0.
pub fn l2_norm(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
    }
    acc.sqrt()
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a `rows x cols` matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Matrix–vector product; each row dot product accumulates left to right.
pub fn matvec(m: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.cols {
        return Err(Error::Dimension(format!(
            "matvec: matrix has {} columns, vector has {} elements",
            m.cols,
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(m.rows);
    for r in 0..m.rows {
        let row = m.row(r);
        let mut acc = 0.0;
        for c in 0..m.cols {
            acc += row[c] * x[c];
        }
        out.push(acc);
    }
    Ok(out)
}

/// Largest finite-comparable element, ignoring NaN (NaN inputs still poison
/// the downstream arithmetic, which is the intended propagation).
fn max_element(z: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v > m {
            m = v;
        }
    }
    m
}

/// Numerically stable softmax: shifts by the maximum before exponentiating,
/// so widely spread finite logits neither overflow nor underflow to a
/// degenerate distribution. Empty input yields an empty vector; non-finite
/// inputs yield NaN entries.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    let m = max_element(z);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let mut sum = 0.0;
    for e in &exps {
        sum += e;
    }
    exps.iter().map(|e| e / sum).collect()
}

/// `log(sum_i exp(z_i))` with the same max-shift as [`softmax`].
///
/// This is the stable building block for cross-entropy: the per-example loss
/// is `log_sum_exp(logits) - logits[label]`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    if z.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = max_element(z);
    let mut sum = 0.0;
    for &v in z {
        sum += (v - m).exp();
    }
    m + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axpy_small_example() {
        // 2 * [1, -3] + [4, 4] = [6, -2]
        let r = axpy(2.0, &[1.0, -3.0], &[4.0, 4.0]).unwrap();
        assert_eq!(r, vec![6.0, -2.0]);
    }

    #[test]
    fn axpy_empty_inputs_give_empty_output() {
        assert!(axpy(3.0, &[], &[]).unwrap().is_empty());
    }

    #[test]
    fn axpy_rejects_mismatched_lengths() {
        assert!(matches!(
            axpy(1.0, &[1.0], &[1.0, 2.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn l2_norm_of_three_four_is_five() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn l2_norm_of_empty_is_zero() {
        assert_eq!(l2_norm(&[]), 0.0);
    }

    #[test]
    fn l2_norm_propagates_nan() {
        assert!(l2_norm(&[1.0, f64::NAN]).is_nan());
    }

    #[test]
    fn matrix_shape_is_validated() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn matvec_identity() {
        let eye = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = matvec(&eye, &[5.0, -7.0]).unwrap();
        assert_eq!(r, vec![5.0, -7.0]);
    }

    #[test]
    fn matvec_rejects_mismatched_vector() {
        let m = Matrix::from_vec(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(matvec(&m, &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn matvec_single_row_is_dot_product() {
        let m = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let r = matvec(&m, &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r, vec![1.0 * 4.0 + 2.0 * 5.0 + 3.0 * 6.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_exactly_uniform() {
        // After the max shift every exponent is exp(0) = 1, so each entry is
        // exactly 1/n regardless of the logit value.
        for c in [-1e9, 0.0, 3.5, 1e9] {
            let p = softmax(&[c, c, c]);
            assert!(p.iter().all(|v| v.to_bits() == (1.0f64 / 3.0).to_bits()));
        }
    }

    #[test]
    fn softmax_handles_widely_spread_logits() {
        let p = softmax(&[1000.0, 0.0, -1000.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_of_empty_is_empty() {
        assert!(softmax(&[]).is_empty());
    }

    #[test]
    fn softmax_propagates_nan() {
        let p = softmax(&[f64::NAN, 0.0]);
        assert!(p.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn log_sum_exp_matches_direct_formula_on_small_logits() {
        let z = [0.3f64, -0.7, 1.1];
        let direct = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&z) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_of_zeros_is_ln_n() {
        let z = [0.0; 4];
        assert!((log_sum_exp(&z) - 4.0f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn l2_norm_scales_with_absolute_factor(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..32),
            a in -100.0f64..100.0,
        ) {
            let scaled: Vec<f64> = xs.iter().map(|x| a * x).collect();
            let lhs = l2_norm(&scaled);
            let rhs = a.abs() * l2_norm(&xs);
            let tol = 1e-12 * rhs.max(1.0);
            prop_assert!((lhs - rhs).abs() <= tol);
        }

        #[test]
        fn softmax_sums_to_one_and_shift_invariant(
            zs in proptest::collection::vec(-30.0f64..30.0, 1..16),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax(&zs);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v > 0.0 && *v <= 1.0));

            let shifted: Vec<f64> = zs.iter().map(|z| z + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn axpy_is_deterministic(
            xs in proptest::collection::vec(-1e6f64..1e6, 0..32),
            a in -1e3f64..1e3,
        ) {
            let ys: Vec<f64> = xs.iter().map(|x| x * 0.5 + 1.0).collect();
            let r1 = axpy(a, &xs, &ys).unwrap();
            let r2 = axpy(a, &xs, &ys).unwrap();
            prop_assert!(r1.iter().zip(&r2).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
