//! Dense real matrix/vector arithmetic, norms, and spectral-norm estimation.
//!
//! Everything is double precision and row-major. Shape mismatches in the
//! low-level operations are programmer errors and panic; the only fallible
//! operation is [`Matrix::spectral_norm`], which reports non-convergence of
//! the power iteration together with its last estimate.

use thiserror::Error;

/// Default convergence tolerance for spectral-norm power iteration.
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Default iteration cap for spectral-norm power iteration.
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

/// Power iteration failed to converge within the iteration budget.
#[derive(Debug, Clone, Error)]
#[error("spectral norm power iteration did not converge after {max_iters} iterations (last estimate {last_estimate})")]
pub struct SpectralNonConvergence {
    pub last_estimate: f64,
    pub max_iters: usize,
}

/// A dense column vector of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector { data: vec![0.0; len] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Vector { data: data.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, other: &Vector, c: f64) {
        assert_eq!(self.len(), other.len(), "add_scaled: length mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        Vector { data: iter.into_iter().collect() }
    }
}

/// A dense row-major matrix of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from a flat row-major buffer. Panics if the length is not `rows*cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "from_vec: buffer length mismatch");
        Matrix { rows, cols, data }
    }

    /// Builds from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "from_rows: ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `M v`
    pub fn matvec(&self, v: &Vector) -> Vector {
        assert_eq!(self.cols, v.len(), "matvec: dimension mismatch");
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v.as_slice()) {
                acc += a * b;
            }
            out.push(acc);
        }
        Vector::from_vec(out)
    }

    /// `Mᵀ v` without materializing the transpose.
    pub fn matvec_transpose(&self, v: &Vector) -> Vector {
        assert_eq!(self.rows, v.len(), "matvec_transpose: dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        Vector::from_vec(out)
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul: dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    /// Rank-one product `u vᵀ`.
    pub fn outer(u: &Vector, v: &Vector) -> Matrix {
        let mut out = Matrix::zeros(u.len(), v.len());
        for i in 0..u.len() {
            let ui = u[i];
            for (o, b) in out.row_mut(i).iter_mut().zip(v.as_slice()) {
                *o = ui * b;
            }
        }
        out
    }

    /// Sum of squared entries, `Σ mᵢⱼ² = Σ σᵢ²`.
    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Largest singular value via power iteration on `MᵀM`.
    ///
    /// The start vector is the normalized all-ones vector so results are
    /// reproducible; if the Rayleigh quotient stalls at zero (start vector in
    /// the null space) the iteration restarts from a deterministically
    /// perturbed vector. The estimate is the Rayleigh quotient `‖Mv‖` for unit
    /// `v`, which increases monotonically toward `σmax`; convergence is
    /// declared when successive estimates differ by less than `tol`.
    ///
    /// A zero matrix short-circuits to `0.0`.
    pub fn spectral_norm(&self, tol: f64, max_iters: usize) -> Result<f64, SpectralNonConvergence> {
        self.power_iterate(tol, max_iters, None, false, false).map(|(s, _, _)| s)
    }

    pub fn spectral_norm_default(&self) -> Result<f64, SpectralNonConvergence> {
        self.spectral_norm(SPECTRAL_TOL, SPECTRAL_MAX_ITERS)
    }

    /// Best-effort spectral norm: when the iteration budget runs out the
    /// plateaued Rayleigh quotient is returned instead of an error. The
    /// quotient is a lower bound within the unresolved top gap of the true
    /// value, which is what training-time metrics want when a penalty has
    /// driven the top singular values together.
    pub fn spectral_norm_lenient(&self, tol: f64, max_iters: usize) -> f64 {
        self.power_iterate(tol, max_iters, None, false, true)
            .map(|(s, _, _)| s)
            .unwrap_or(0.0)
    }

    /// Like [`Matrix::spectral_norm`] but also returns the top singular pair
    /// `(σ, v, u)` with `v` the right and `u` the left singular vector
    /// (`Mv = σu`). `warm_start` seeds the iteration, which is how penalty
    /// callers amortize the cost across training steps.
    ///
    /// The iteration additionally tries to settle the vector itself (it
    /// converges at the square root of the value rate). When the top singular
    /// value is nearly degenerate the vector may never settle; the value is
    /// still accurate, so the best-effort pair is returned rather than an
    /// error; the gradient direction then lies in the top singular subspace.
    pub fn top_singular_pair(
        &self,
        tol: f64,
        max_iters: usize,
        warm_start: Option<&Vector>,
    ) -> Result<(f64, Vector, Vector), SpectralNonConvergence> {
        self.power_iterate(tol, max_iters, warm_start, true, false)
    }

    /// Best-effort top singular pair; never fails once any estimate exists.
    /// Penalty callers use this with persistent warm vectors so accuracy
    /// accumulates across training steps even in the degenerate regime.
    pub fn top_singular_pair_lenient(
        &self,
        tol: f64,
        max_iters: usize,
        warm_start: Option<&Vector>,
    ) -> (f64, Vector, Vector) {
        self.power_iterate(tol, max_iters, warm_start, true, true)
            .unwrap_or_else(|_| (0.0, Vector::zeros(self.cols), Vector::zeros(self.rows)))
    }

    fn power_iterate(
        &self,
        tol: f64,
        max_iters: usize,
        warm_start: Option<&Vector>,
        want_vector: bool,
        lenient: bool,
    ) -> Result<(f64, Vector, Vector), SpectralNonConvergence> {
        assert!(tol > 0.0, "spectral norm: tol must be positive");
        if self.frobenius_norm_sq() == 0.0 {
            return Ok((0.0, Vector::zeros(self.cols), Vector::zeros(self.rows)));
        }

        let mut v = match warm_start {
            Some(w) if w.len() == self.cols && w.norm_sq() > 0.0 => w.clone(),
            _ => Vector::from_vec(vec![1.0; self.cols]),
        };
        normalize(&mut v);

        let finish = |v: Vector| {
            let mv = self.matvec(&v);
            let s = mv.norm();
            let mut u = mv;
            if s > 0.0 {
                u.scale(1.0 / s);
            }
            (s, v, u)
        };

        // Once the value has settled, a near-degenerate top pair may keep the
        // vector wandering inside the top subspace forever; a bounded extra
        // budget keeps the degenerate case from burning the whole iteration
        // allowance on every call.
        const VECTOR_EXTRA_ITERS: usize = 200;
        let mut sigma = 0.0_f64;
        let mut restarts = 0;
        let mut settled_for = None::<usize>;
        for iter in 0..max_iters {
            let mv = self.matvec(&v);
            let estimate = mv.norm();
            if estimate == 0.0 {
                // v is in the null space; perturb deterministically and retry.
                if restarts >= 4 {
                    return Err(SpectralNonConvergence { last_estimate: 0.0, max_iters });
                }
                for i in 0..v.len() {
                    v[i] += ((i + 1) as f64) / (v.len() as f64) * (restarts + 1) as f64;
                }
                normalize(&mut v);
                restarts += 1;
                continue;
            }
            let mut next = self.matvec_transpose(&mv);
            normalize(&mut next);
            let value_delta = (estimate - sigma).abs();
            let vector_delta = next
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            sigma = estimate;
            v = next;
            if value_delta < tol && settled_for.is_none() {
                settled_for = Some(iter);
            }
            if let Some(since) = settled_for {
                if !want_vector || vector_delta < tol || iter - since >= VECTOR_EXTRA_ITERS {
                    return Ok(finish(v));
                }
            }
        }
        if settled_for.is_some() || (lenient && sigma > 0.0) {
            return Ok(finish(v));
        }
        Err(SpectralNonConvergence { last_estimate: sigma, max_iters })
    }
}

fn normalize(v: &mut Vector) {
    let n = v.norm();
    if n > 0.0 {
        v.scale(1.0 / n);
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn frobenius_norm_sq_small_fixture() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(m.frobenius_norm_sq(), 30.0);
    }

    #[test]
    fn frobenius_norm_sq_zero_matrix() {
        assert_eq!(Matrix::zeros(3, 3).frobenius_norm_sq(), 0.0);
    }

    #[test]
    fn frobenius_additive_over_block_diagonal() {
        let a = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let b = Matrix::from_rows(&[vec![4.0], vec![-1.5], vec![0.25]]);
        let mut block = Matrix::zeros(a.rows() + b.rows(), a.cols() + b.cols());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                block[(i, j)] = a[(i, j)];
            }
        }
        for i in 0..b.rows() {
            for j in 0..b.cols() {
                block[(a.rows() + i, a.cols() + j)] = b[(i, j)];
            }
        }
        assert_eq!(block.frobenius_norm_sq(), a.frobenius_norm_sq() + b.frobenius_norm_sq());
    }

    #[test]
    fn spectral_norm_diagonal() {
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -4.0]]);
        let s = m.spectral_norm_default().unwrap();
        assert_abs_diff_eq!(s, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn spectral_norm_identity() {
        let s = Matrix::identity(5).spectral_norm_default().unwrap();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn spectral_norm_restarts_when_start_vector_is_null() {
        // Ones vector lies in the null space of [[1, -1]].
        let m = Matrix::from_rows(&[vec![1.0, -1.0]]);
        let s = m.spectral_norm_default().unwrap();
        assert_abs_diff_eq!(s, std::f64::consts::SQRT_2, epsilon = 1e-9);
    }

    #[test]
    fn spectral_norm_zero_matrix_is_zero() {
        assert_eq!(Matrix::zeros(2, 3).spectral_norm_default().unwrap(), 0.0);
    }

    #[test]
    fn top_singular_pair_diagonal_signs() {
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -4.0]]);
        let (s, v, u) = m.top_singular_pair(1e-12, 10_000, None).unwrap();
        assert_abs_diff_eq!(s, 4.0, epsilon = 1e-9);
        // Mv = σu must hold for the returned pair.
        let mv = m.matvec(&v);
        for i in 0..2 {
            assert_abs_diff_eq!(mv[i], s * u[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn identity_matvec_is_identity() {
        let v = Vector::from_vec(vec![1.0, -2.0, 3.5]);
        let out = Matrix::identity(3).matvec(&v);
        assert_eq!(out, v);
    }

    #[test]
    fn spectral_vs_frobenius_sandwich_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let r = rng.random_range(1..6);
            let c = rng.random_range(1..6);
            let m = random_matrix(&mut rng, r, c);
            let fro = m.frobenius_norm();
            let spec = m.spectral_norm_default().unwrap();
            let k = r.min(c) as f64;
            assert!(spec <= fro + 1e-9, "spec {spec} > fro {fro}");
            assert!(fro <= k.sqrt() * spec + 1e-9, "fro {fro} > sqrt({k})*spec {spec}");
        }
    }

    #[test]
    fn spectral_norm_absolute_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let m = random_matrix(&mut rng, 3, 4);
            let c: f64 = rng.random_range(-3.0..3.0);
            let mut cm = m.clone();
            cm.scale(c);
            let lhs = cm.spectral_norm_default().unwrap();
            let rhs = c.abs() * m.spectral_norm_default().unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn transpose_of_product_is_reversed_product(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 2, 3);
            let b = random_matrix(&mut rng, 3, 4);
            let lhs = a.matmul(&b).transpose();
            let rhs = b.transpose().matmul(&a.transpose());
            for i in 0..lhs.rows() {
                for j in 0..lhs.cols() {
                    prop_assert!((lhs[(i, j)] - rhs[(i, j)]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn matvec_associates_with_matmul(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 3, 2);
            let b = random_matrix(&mut rng, 2, 4);
            let x = Vector::from_vec((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
            let lhs = a.matvec(&b.matvec(&x));
            let rhs = a.matmul(&b).matvec(&x);
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - rhs[i]).abs() < 1e-12);
            }
        }
    }
}
