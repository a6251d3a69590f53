//! Small dense helpers for projection matrices.

use crate::scalar::Scalar;

/// Orthonormal basis of the span of `rows` (each of length `dim`).
///
/// One-sided Jacobi SVD on the transposed matrix: columns are rotated
/// pairwise until mutually orthogonal, after which their norms are the
/// singular values and the normalised columns the left singular vectors.
/// Directions with singular value below `rel_tol * sigma_max` are dropped.
pub fn row_space_basis<F: Scalar>(rows: &[Vec<F>], dim: usize, rel_tol: F) -> Vec<Vec<F>> {
    let mut cols: Vec<Vec<F>> = rows.to_vec();
    let k = cols.len();
    let eps = F::epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..k {
            for j in i + 1..k {
                let (alpha, beta, gamma) = cols[i].iter().zip(&cols[j]).fold(
                    (F::zero(), F::zero(), F::zero()),
                    |(a, b, g), (&x, &y)| (a + x * x, b + y * y, g + x * y),
                );
                if gamma == F::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (F::one() + zeta * zeta).sqrt());
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(j);
                for (x, y) in left[i].iter_mut().zip(right[0].iter_mut()) {
                    let (xi, yj) = (*x, *y);
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<F> = cols.iter().map(|c| c.iter().map(|&v| v * v).sum::<F>().sqrt()).collect();
    let sigma_max = norms.iter().copied().fold(F::zero(), F::max);
    if sigma_max == F::zero() {
        return Vec::new();
    }
    cols.into_iter()
        .zip(norms)
        .filter(|(_, n)| *n > rel_tol * sigma_max)
        .map(|(c, n)| {
            debug_assert_eq!(c.len(), dim);
            c.into_iter().map(|v| v / n).collect()
        })
        .collect()
}

/// `a (r x n) * b (n x c)`, row-major.
pub fn matmul<F: Scalar>(a: &[F], b: &[F], r: usize, n: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); r * c];
    for i in 0..r {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == F::zero() {
                continue;
            }
            for j in 0..c {
                out[i * c + j] += aik * b[k * c + j];
            }
        }
    }
    out
}

pub fn max_abs<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
}
