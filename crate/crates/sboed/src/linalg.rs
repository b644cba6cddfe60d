//! Small linear-algebra kernels for structured-grid FEM operators.
//!
//! Row-major grid ordering makes every assembled operator a symmetric
//! band matrix of half-bandwidth `nx + 1`, so a banded Cholesky gives
//! exact direct solves in `O(n b^2)` — cheap enough to factorize the
//! linearized operator at every time step.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Symmetric band matrix, lower bands stored.
///
/// `bands[d]` holds the d-th subdiagonal: `bands[d][j] = A[j + d, j]`
/// for `j = 0..n - d`.
#[derive(Debug, Clone)]
pub struct SymBandMatrix {
    n: usize,
    hbw: usize,
    bands: Vec<Vec<f64>>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, hbw: usize) -> Self {
        let bands = (0..=hbw).map(|d| vec![0.0; n - d.min(n)]).collect();
        SymBandMatrix { n, hbw, bands }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hbw
    }

    /// Adds `v` to entry `(i, j)`; only the lower triangle is stored, so
    /// callers must pass each symmetric pair once (or use `i >= j`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        debug_assert!(d <= self.hbw, "entry outside band");
        self.bands[d][lo] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.hbw {
            0.0
        } else {
            self.bands[d][lo]
        }
    }

    pub fn diag(&self) -> &[f64] {
        &self.bands[0]
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for j in 0..self.n {
            y[j] += self.bands[0][j] * x[j];
        }
        for d in 1..=self.hbw {
            let band = &self.bands[d];
            for j in 0..self.n - d {
                let v = band[j];
                if v != 0.0 {
                    y[j + d] += v * x[j];
                    y[j] += v * x[j + d];
                }
            }
        }
        y
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(x))
    }

    /// `self + alpha * diag(d)` on the diagonal.
    pub fn add_diag(&mut self, d: &DVector<f64>, alpha: f64) {
        for j in 0..self.n {
            self.bands[0][j] += alpha * d[j];
        }
    }

    /// Linear combination `a*self + b*other` (bandwidths must agree).
    pub fn linear_comb(&self, a: f64, other: &SymBandMatrix, b: f64) -> SymBandMatrix {
        assert_eq!(self.n, other.n);
        assert_eq!(self.hbw, other.hbw);
        let mut out = self.clone();
        for d in 0..=self.hbw {
            for j in 0..out.bands[d].len() {
                out.bands[d][j] = a * self.bands[d][j] + b * other.bands[d][j];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for d in 0..=self.hbw {
            for j in 0..self.n - d {
                m[(j + d, j)] = self.bands[d][j];
                m[(j, j + d)] = self.bands[d][j];
            }
        }
        m
    }

    /// Banded Cholesky factorization `A = L L^T`.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let hbw = self.hbw;
        // l[d][j] = L[j + d, j]
        let mut l = self.bands.clone();
        for j in 0..n {
            // diagonal
            let mut s = l[0][j];
            let kmin = j.saturating_sub(hbw);
            for k in kmin..j {
                let d = j - k;
                s -= l[d][k] * l[d][k];
            }
            if s <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let ljj = s.sqrt();
            l[0][j] = ljj;
            // column below the diagonal
            let dmax = hbw.min(n - 1 - j);
            for d in 1..=dmax {
                let i = j + d;
                let mut s = l[d][j];
                let kmin = i.saturating_sub(hbw).max(j.saturating_sub(hbw));
                for k in kmin..j {
                    s -= l[i - k][k] * l[j - k][k];
                }
                l[d][j] = s / ljj;
            }
        }
        Ok(BandCholesky { n, hbw, l })
    }
}

/// Banded Cholesky factor; solves reuse the band structure.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    hbw: usize,
    l: Vec<Vec<f64>>,
}

impl BandCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut DVector<f64>) {
        let n = self.n;
        let hbw = self.hbw;
        // forward: L y = b
        for i in 0..n {
            let kmin = i.saturating_sub(hbw);
            let mut s = b[i];
            for k in kmin..i {
                s -= self.l[i - k][k] * b[k];
            }
            b[i] = s / self.l[0][i];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let kmax = (i + hbw).min(n - 1);
            let mut s = b[i];
            for k in i + 1..=kmax {
                s -= self.l[k - i][i] * b[k];
            }
            b[i] = s / self.l[0][i];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }
}

/// Preconditioned conjugate gradients for an SPD operator given as a
/// closure. Returns the iterate and iteration count.
pub fn conjugate_gradient<F, P>(
    apply: F,
    precond: P,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut r = b - apply(&x);
    let b_norm = b.norm().max(f64::MIN_POSITIVE);
    if r.norm() <= rel_tol * b_norm {
        return Ok((x, 0));
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            // Direction of non-positive curvature: the operator is not SPD
            // up to roundoff; return the current iterate.
            return Ok((x, it));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if r.norm() <= rel_tol * b_norm {
            return Ok((x, it));
        }
        z = precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + beta * &p;
    }
    Err(Error::CgNoConvergence {
        iterations: max_iter,
        residual: r.norm() / b_norm,
    })
}

/// Orthonormalizes the columns of `y` by repeated modified Gram-Schmidt.
pub fn orthonormalize(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = y.clone();
    let (n, k) = (q.nrows(), q.ncols());
    for _pass in 0..2 {
        for j in 0..k {
            let mut col = q.column(j).clone_owned();
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&col);
                col.axpy(-proj, &qi.clone_owned(), 1.0);
            }
            let norm = col.norm();
            if norm > 1e-14 * (n as f64).sqrt() {
                col /= norm;
            }
            q.set_column(j, &col);
        }
    }
    q
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = DVector::from_fn(n, |i, _| eig.eigenvalues[idx[i]]);
    let mut vecs = DMatrix::zeros(eig.eigenvectors.nrows(), n);
    for (new, &old) in idx.iter().enumerate() {
        vecs.set_column(new, &eig.eigenvectors.column(old));
    }
    (vals, vecs)
}

/// Double-pass randomized eigensolver for a symmetric PSD operator
/// given matrix-free: sketch `Y = H Omega`, orthonormalize, project
/// `T = Q^T H Q`, solve the small dense problem, map back. Exact when
/// the sketch width reaches the operator rank.
pub fn randomized_symmetric_eigen<F>(
    apply: F,
    n: usize,
    rank: usize,
    oversample: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let l = (rank + oversample).min(n);
    if rank > n {
        return Err(Error::InvalidInput(
            "requested rank exceeds dimension".into(),
        ));
    }
    let omega = crate::rng::normal_matrix(rng, n, l);
    let mut y = DMatrix::zeros(n, l);
    for j in 0..l {
        y.set_column(j, &apply(&omega.column(j).clone_owned())?);
    }
    let q = orthonormalize(&y);
    let mut hq = DMatrix::zeros(n, l);
    for j in 0..l {
        hq.set_column(j, &apply(&q.column(j).clone_owned())?);
    }
    let t = q.transpose() * &hq;
    let (vals, vecs) = symmetric_eigen_desc(&t);
    let r = rank.min(l);
    let mut eigenvalues = Vec::with_capacity(r);
    for j in 0..r {
        let lambda = vals[j];
        if lambda < -1e-8 {
            return Err(Error::IndefiniteEigenvalue {
                index: j,
                value: lambda,
            });
        }
        eigenvalues.push(lambda.max(0.0));
    }
    let mut out_vecs = DMatrix::zeros(n, r);
    for j in 0..r {
        out_vecs.set_column(j, &(&q * vecs.column(j).clone_owned()));
    }
    Ok((eigenvalues, out_vecs))
}

/// `log det` of an SPD matrix via Cholesky.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
    Ok(chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn random_spd_band(n: usize, hbw: usize, seed: u64) -> SymBandMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = SymBandMatrix::zeros(n, hbw);
        for d in 1..=hbw {
            for j in 0..n - d {
                a.add(j + d, j, rng.gen_range(-1.0..1.0));
            }
        }
        for j in 0..n {
            a.add(j, j, 2.0 * hbw as f64 + 1.0 + rng.gen_range(0.0..1.0));
        }
        a
    }

    #[test]
    fn band_cholesky_solves() {
        let a = random_spd_band(40, 5, 1);
        let chol = a.cholesky().unwrap();
        let x_true = DVector::from_fn(40, |i, _| (i as f64 * 0.37).sin());
        let b = a.mul_vec(&x_true);
        let x = chol.solve(&b);
        assert!((x - &x_true).norm() < 1e-10 * x_true.norm());
    }

    #[test]
    fn band_matches_dense() {
        let a = random_spd_band(25, 4, 2);
        let d = a.to_dense();
        let x = DVector::from_fn(25, |i, _| 1.0 / (1.0 + i as f64));
        assert!((a.mul_vec(&x) - &d * &x).norm() < 1e-12);
    }

    #[test]
    fn cg_matches_direct() {
        let a = random_spd_band(30, 3, 3);
        let b = DVector::from_fn(30, |i, _| (i as f64).cos());
        let chol = a.cholesky().unwrap();
        let direct = chol.solve(&b);
        let diag: Vec<f64> = a.diag().to_vec();
        let (x, _) = conjugate_gradient(
            |v| a.mul_vec(v),
            |r| DVector::from_fn(30, |i, _| r[i] / diag[i]),
            &b,
            None,
            1e-12,
            200,
        )
        .unwrap();
        assert!((x - direct).norm() < 1e-9 * b.norm());
    }

    #[test]
    fn orthonormalize_produces_orthonormal_columns() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y = DMatrix::from_fn(20, 6, |_, _| rng.gen_range(-1.0..1.0));
        let q = orthonormalize(&y);
        let g = q.transpose() * &q;
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }
}
