//! Nonnegative least squares by the Lawson-Hanson active-set method.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::Complex64;

/// Optimality tolerance on the gradient of the squared residual.
pub const KKT_TOL: f64 = 1e-10;

/// `argmin_{x >= 0} ||a x - b||` for a real matrix.
pub fn nnls_real(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(a.nrows(), b.len())?;
    let n = a.ncols();
    if n == 0 {
        return Err(Error::invalid("nnls needs at least one column"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("nnls input"));
    }
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut excluded = vec![false; n];
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let w = a.tr_mul(&(b - a * &x));
        let candidate =
            (0..n)
                .filter(|&j| !passive[j] && !excluded[j])
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if w[b] >= w[j] => Some(b),
                    _ => Some(j),
                });
        let Some(j) = candidate else { break };
        if w[j] <= KKT_TOL {
            break;
        }
        passive[j] = true;
        let mut first = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z_p = least_squares(a, b, &cols)?;
            let mut z = DVector::zeros(n);
            for (&c, &v) in cols.iter().zip(z_p.iter()) {
                z[c] = v;
            }
            if first && z[j] <= 0.0 {
                // Numerically useless column: drop it instead of cycling.
                passive[j] = false;
                excluded[j] = true;
                break;
            }
            first = false;
            if cols.iter().all(|&c| z[c] > 0.0) {
                x = z;
                break;
            }
            let alpha = cols
                .iter()
                .filter(|&&c| z[c] <= 0.0)
                .map(|&c| x[c] / (x[c] - z[c]))
                .fold(f64::INFINITY, f64::min);
            for &c in &cols {
                x[c] += alpha * (z[c] - x[c]);
                if x[c] <= 1e-300 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
        if !excluded[j] {
            excluded.iter_mut().for_each(|e| *e = false);
        }
    }
    Ok(x)
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> Result<DVector<f64>> {
    let sub = a.select_columns(cols);
    sub.svd(true, true)
        .solve(b, 1e-14)
        .map_err(|e| Error::Numerical(format!("least squares solve failed: {e}")))
}

/// Stacks complex columns as `[re; im]` real columns.
pub fn stack_complex(columns: &[&[Complex64]]) -> DMatrix<f64> {
    let m = columns.first().map_or(0, |c| c.len());
    DMatrix::from_fn(2 * m, columns.len(), |i, k| {
        let z = columns[k][i % m];
        if i < m {
            z.re
        } else {
            z.im
        }
    })
}

pub fn stack_vector(v: &[Complex64]) -> DVector<f64> {
    let m = v.len();
    DVector::from_fn(2 * m, |i, _| if i < m { v[i].re } else { v[i - m].im })
}

/// Nonnegative coefficients minimizing `||target - sum_k beta_k atoms_k||` over complex vectors.
pub fn nnls(atoms: &[&[Complex64]], target: &[Complex64]) -> Result<Vec<f64>> {
    if atoms.is_empty() {
        return Err(Error::invalid("nnls needs at least one atom"));
    }
    for a in atoms {
        check_dim(target.len(), a.len())?;
    }
    let x = nnls_real(&stack_complex(atoms), &stack_vector(target))?;
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use rand::Rng;

    fn residual(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
        (b - a * x).norm()
    }

    /// Best feasible unconstrained solve over every subset of columns.
    fn enumerate(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = a.ncols();
        let mut best = DVector::zeros(n);
        let mut best_res = b.norm();
        for mask in 1u32..(1 << n) {
            let cols: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let z = a
                .select_columns(&cols)
                .svd(true, true)
                .solve(b, 1e-14)
                .unwrap();
            if z.iter().all(|&v| v >= 0.0) {
                let mut x = DVector::zeros(n);
                for (&c, &v) in cols.iter().zip(z.iter()) {
                    x[c] = v;
                }
                let r = residual(a, b, &x);
                if r < best_res {
                    best_res = r;
                    best = x;
                }
            }
        }
        best
    }

    fn assert_kkt(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) {
        let grad = -2.0 * a.tr_mul(&(b - a * x));
        for (g, v) in grad.iter().zip(x.iter()) {
            assert!(*v >= 0.0);
            if *v > 0.0 {
                assert!(g.abs() <= 1e-8, "free gradient {g}");
            } else {
                assert!(*g >= -1e-8, "bound gradient {g}");
            }
        }
    }

    #[test]
    fn sign_truncation() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(nnls_real(&a, &b).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn scalar_projection() {
        let atom = [Complex64::new(0.3, -0.2), Complex64::new(1.0, 0.5)];
        let target: Vec<Complex64> = atom.iter().map(|z| z * 2.0).collect();
        let beta = nnls(&[&atom], &target).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn matches_enumeration_and_kkt() {
        let mut rng = SeedStream::new(17).rng();
        for _ in 0..200 {
            let a = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let x = nnls_real(&a, &b).unwrap();
            let oracle = enumerate(&a, &b);
            assert!((&x - &oracle).norm() < 1e-9, "{x} vs {oracle}");
            assert_kkt(&a, &b, &x);
        }
    }

    #[test]
    fn duplicate_columns_terminate() {
        let col = [1.0, 2.0, -1.0];
        let a = DMatrix::from_fn(3, 3, |i, _| col[i]);
        let b = DVector::from_vec(vec![2.0, 4.0, -2.0]);
        let x = nnls_real(&a, &b).unwrap();
        assert!((x.sum() - 2.0).abs() < 1e-12);
        assert_kkt(&a, &b, &x);
    }

    #[test]
    fn rejects_bad_shapes() {
        let a = [Complex64::new(1.0, 0.0)];
        assert!(nnls(&[], &a).is_err());
        assert!(nnls(&[&a], &[Complex64::new(1.0, 0.0); 2]).is_err());
    }
}
