//! Spectral and Frobenius norms against an independent SVD oracle: a Jacobi
//! eigenvalue iteration on `MᵀM`, sharing no code with the power-iteration
//! path it checks.

use gcx_core::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix. Returns the
/// eigenvalues (diagonal after convergence).
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-30 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Squared singular values of `m` via the oracle.
fn singular_values_sq(m: &Matrix) -> Vec<f64> {
    let n = m.cols();
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for r in 0..m.rows() {
                acc += m.get(r, i) * m.get(r, j);
            }
            gram[i][j] = acc;
        }
    }
    let mut eigs = jacobi_eigenvalues(gram);
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eigs
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

#[test]
fn frobenius_norm_sq_equals_sum_of_squared_singular_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 4, 5);
        let svs = singular_values_sq(&m);
        let total: f64 = svs.iter().sum();
        let fro = m.frobenius_norm_sq();
        assert!(
            (fro - total).abs() < 1e-10 * fro.max(1.0),
            "fro {fro} vs oracle sum {total}"
        );
    }
}

#[test]
fn spectral_norm_matches_oracle_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let r = rng.random_range(1..7);
        let c = rng.random_range(1..7);
        let m = random_matrix(&mut rng, r, c);
        let oracle = singular_values_sq(&m)[0].max(0.0).sqrt();
        let power = m.spectral_norm_default().unwrap();
        assert!(
            (power - oracle).abs() < 1e-8 * oracle.max(1.0),
            "{r}x{c}: power {power} vs oracle {oracle}"
        );
    }
}

#[test]
fn spectral_norm_matches_oracle_on_tall_thin_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let m = random_matrix(&mut rng, 3, 2);
    let oracle = singular_values_sq(&m)[0].sqrt();
    let power = m.spectral_norm_default().unwrap();
    assert!((power - oracle).abs() < 1e-8);
}
