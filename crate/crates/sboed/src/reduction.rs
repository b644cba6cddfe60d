//! Derivative-informed input subspace (DIS), PCA output basis,
//! encode/decode maps, and reduced-Jacobian training data.
//!
//! The DIS basis solves the generalized eigenvalue problem
//!
//! ```text
//! E_m [ sum_k J_k(m)^T J_k(m) ] psi = lambda Gamma_prior^-1 psi
//! ```
//!
//! with the expectation replaced by a sample average over prior draws
//! and the same double-pass randomized machinery as the posterior
//! eigensolve. Output snapshots (all candidate times, all samples) are
//! mean-centered and truncated by SVD. Reduced Jacobians
//! `beta_J = Psi_F^T J Psi_m` cost `min(r_m, r_F)` linearized solves
//! per sample: the tangent route sweeps `J Psi_m` columns when
//! `r_m <= r_F`, the adjoint route sweeps `J^T Psi_F` columns otherwise.

use crate::adjoint::LinearizationPoint;
use crate::error::{Error, Result};
use crate::forward::{observe, observe_initial, ForwardModel};
use crate::linalg::{randomized_symmetric_eigen, symmetric_eigen_desc};
use crate::prior::GaussianPrior;
use crate::rng::{stream_rng, Stream};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// DIS input basis, PCA output basis, output mean.
#[derive(Debug, Clone)]
pub struct ReducedBases {
    /// `d_m x r_m`, `Gamma_prior^-1`-orthonormal columns.
    pub psi_m: DMatrix<f64>,
    /// Whitened copy (Euclidean-orthonormal); used by the encoder.
    pub psi_m_whitened: DMatrix<f64>,
    pub dis_eigenvalues: Vec<f64>,
    /// `d_y x r_F`, orthonormal columns.
    pub psi_f: DMatrix<f64>,
    /// Nonincreasing singular values of the centered snapshot matrix
    /// (full spectrum, not truncated at `r_F`).
    pub singular_values: Vec<f64>,
    pub f_mean: DVector<f64>,
}

impl ReducedBases {
    pub fn r_m(&self) -> usize {
        self.psi_m.ncols()
    }

    pub fn r_f(&self) -> usize {
        self.psi_f.ncols()
    }

    /// `beta_m = Psi_m^T Gamma_prior^-1 (m - m_prior)`.
    pub fn encode_m(&self, prior: &GaussianPrior, m: &DVector<f64>) -> DVector<f64> {
        let w = prior.whiten(&(m - &prior.m_prior));
        self.psi_m_whitened.transpose() * w
    }

    /// `m = m_prior + Psi_m beta`.
    pub fn decode_m(&self, prior: &GaussianPrior, beta: &DVector<f64>) -> DVector<f64> {
        &prior.m_prior + &self.psi_m * beta
    }

    /// `beta_F = Psi_F^T (f - f_mean)`.
    pub fn encode_f(&self, f: &DVector<f64>) -> DVector<f64> {
        self.psi_f.transpose() * (f - &self.f_mean)
    }

    /// `f = f_mean + Psi_F beta`.
    pub fn decode_f(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.f_mean + &self.psi_f * beta
    }

    /// Squared-error budget of the truncation over the training set:
    /// `sum_{j > r_F} sigma_j^2`.
    pub fn pca_tail_energy(&self) -> f64 {
        self.singular_values
            .iter()
            .skip(self.r_f())
            .map(|s| s * s)
            .sum()
    }
}

/// Computes the DIS basis from `n_samples` prior draws.
#[allow(clippy::too_many_arguments)]
pub fn compute_dis(
    model: &ForwardModel,
    prior: &GaussianPrior,
    n_samples: usize,
    rank: usize,
    oversample: usize,
    prior_seed: u64,
    sketch_seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    if n_samples == 0 {
        return Err(Error::invalid("DIS needs at least one sample"));
    }
    let n = prior.n_nodes();
    let all_times = vec![true; model.config.n_candidates()];

    // Linearization points per prior draw, built once and shared by
    // both randomized passes.
    let lins: Vec<LinearizationPoint> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let m = prior.sample(prior_seed, s as u64);
            LinearizationPoint::new(model, prior, m)
        })
        .collect::<Result<Vec<_>>>()?;

    let apply_whitened = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let mv = prior.unwhiten(v);
        // fixed-order reduction keeps the average deterministic
        let parts: Vec<DVector<f64>> = lins
            .par_iter()
            .map(|lin| lin.gn_hessian_action(&all_times, 1.0, &mv))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = DVector::zeros(n);
        for p in parts {
            acc += p;
        }
        acc /= n_samples as f64;
        Ok(prior.lumped_sqrt_mul(&prior.solve_a(&acc)))
    };

    let mut rng = stream_rng(sketch_seed, Stream::Sketch(0));
    let (eigenvalues, whitened) =
        randomized_symmetric_eigen(apply_whitened, n, rank, oversample, &mut rng)?;
    let r = eigenvalues.len();
    let mut basis = DMatrix::zeros(n, r);
    for j in 0..r {
        basis.set_column(j, &prior.unwhiten(&whitened.column(j).clone_owned()));
    }
    Ok((basis, whitened, eigenvalues))
}

/// Mean-centered truncated SVD of output snapshots. Works on whichever
/// Gram matrix is smaller. Errors if the snapshot rank cannot support
/// the requested truncation (degenerate, e.g. all-identical, snapshots).
pub fn compute_pca(
    snapshots: &[DVector<f64>],
    r_f: usize,
) -> Result<(DMatrix<f64>, Vec<f64>, DVector<f64>)> {
    let n_snap = snapshots.len();
    if n_snap < r_f.max(1) {
        return Err(Error::invalid(format!(
            "need at least {r_f} snapshots, got {n_snap}"
        )));
    }
    let d_y = snapshots[0].len();
    let mut mean = DVector::zeros(d_y);
    for s in snapshots {
        mean += s;
    }
    mean /= n_snap as f64;
    let mut centered = DMatrix::zeros(d_y, n_snap);
    for (j, s) in snapshots.iter().enumerate() {
        centered.set_column(j, &(s - &mean));
    }
    let scale = centered.norm();
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);

    let (mut sigma, basis) = if d_y <= n_snap {
        let gram = &centered * centered.transpose();
        let (vals, vecs) = symmetric_eigen_desc(&gram);
        let sigma: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let rank = sigma.iter().take_while(|&&s| s > tol).count();
        if rank < r_f {
            return Err(Error::invalid(format!(
                "snapshot rank {rank} below requested r_F = {r_f}"
            )));
        }
        (sigma, vecs.columns(0, r_f).clone_owned())
    } else {
        let gram = centered.transpose() * &centered;
        let (vals, vecs) = symmetric_eigen_desc(&gram);
        let sigma: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let rank = sigma.iter().take_while(|&&s| s > tol).count();
        if rank < r_f {
            return Err(Error::invalid(format!(
                "snapshot rank {rank} below requested r_F = {r_f}"
            )));
        }
        let mut u = DMatrix::zeros(d_y, r_f);
        for j in 0..r_f {
            u.set_column(j, &(&centered * vecs.column(j).clone_owned() / sigma[j]));
        }
        (sigma, u)
    };
    // trim numerical noise below the tolerance so tail sums are clean
    for s in sigma.iter_mut() {
        if *s <= tol {
            *s = 0.0;
        }
    }
    Ok((basis, sigma, mean))
}

/// One training record: encoded input, encoded output series (with the
/// k = 0 initial column), reduced Jacobians at candidate times.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub beta_m: DVector<f64>,
    /// `r_F x (K + 1)`; column 0 is the encoded initial observable.
    pub beta_f: DMatrix<f64>,
    /// `K` matrices of shape `r_F x r_m`.
    pub beta_j: Vec<DMatrix<f64>>,
}

/// Builds the reduced bases from scratch: DIS from `n_dis` draws, PCA
/// from the observable snapshots of `n_pca` draws.
#[allow(clippy::too_many_arguments)]
pub fn compute_bases(
    model: &ForwardModel,
    prior: &GaussianPrior,
    n_dis: usize,
    n_pca: usize,
    r_m: usize,
    r_f: usize,
    oversample: usize,
    prior_seed: u64,
    sketch_seed: u64,
) -> Result<ReducedBases> {
    let (psi_m, psi_m_whitened, dis_eigenvalues) = compute_dis(
        model,
        prior,
        n_dis,
        r_m,
        oversample,
        prior_seed,
        sketch_seed,
    )?;
    let snapshots: Vec<Vec<DVector<f64>>> = (0..n_pca)
        .into_par_iter()
        .map(|s| -> Result<Vec<DVector<f64>>> {
            let m = prior.sample(prior_seed, 1_000_000 + s as u64);
            let series = observe(&model.solve(prior, &m)?, &model.config)?;
            Ok(series.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<DVector<f64>> = snapshots.into_iter().flatten().collect();
    let (psi_f, singular_values, f_mean) = compute_pca(&flat, r_f)?;
    Ok(ReducedBases {
        psi_m,
        psi_m_whitened,
        dis_eigenvalues,
        psi_f,
        singular_values,
        f_mean,
    })
}

/// Reduced Jacobians `Psi_F^T J_k Psi_m` at one linearization point.
pub fn reduced_jacobians(
    lin: &LinearizationPoint,
    bases: &ReducedBases,
) -> Result<Vec<DMatrix<f64>>> {
    let k = lin.model.config.n_candidates();
    let (r_m, r_f) = (bases.r_m(), bases.r_f());
    let mut out = vec![DMatrix::zeros(r_f, r_m); k];
    if r_m <= r_f {
        // tangent route: one sweep per DIS column gives all times
        for i in 0..r_m {
            let cols = lin.tangent_action(&bases.psi_m.column(i).clone_owned());
            for (c, col) in cols.into_iter().enumerate() {
                out[c].set_column(i, &(bases.psi_f.transpose() * col));
            }
        }
    } else {
        // adjoint route: one backward sweep per PCA column per time
        for j in 0..r_f {
            let source = bases.psi_f.column(j).clone_owned();
            for c in 0..k {
                let mut design = vec![false; k];
                design[c] = true;
                let mut v = vec![DVector::zeros(source.len()); k];
                v[c] = source.clone();
                let jt = lin.adjoint_action(&v, &design)?;
                // row j of beta_J[c] = (J_c^T psi_f_j)^T Psi_m
                let row = jt.transpose() * &bases.psi_m;
                out[c].row_mut(j).copy_from(&row);
            }
        }
    }
    Ok(out)
}

/// Generates `n_t` training samples; deterministic per seed, parallel
/// across samples.
pub fn generate_training_set(
    model: &ForwardModel,
    prior: &GaussianPrior,
    bases: &ReducedBases,
    n_t: usize,
    prior_seed: u64,
) -> Result<Vec<TrainingSample>> {
    (0..n_t)
        .into_par_iter()
        .map(|s| -> Result<TrainingSample> {
            let m = prior.sample(prior_seed, s as u64);
            let lin = LinearizationPoint::new(model, prior, m.clone())?;
            let series = lin.observables();
            let k = series.len();
            let beta_m = bases.encode_m(prior, &m);
            let mut beta_f = DMatrix::zeros(bases.r_f(), k + 1);
            beta_f.set_column(0, &bases.encode_f(&observe_initial(model)));
            for c in 0..k {
                beta_f.set_column(c + 1, &bases.encode_f(&series.values[c]));
            }
            let beta_j = reduced_jacobians(&lin, bases)?;
            Ok(TrainingSample {
                beta_m,
                beta_f,
                beta_j,
            })
        })
        .collect()
}
