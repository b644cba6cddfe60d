//! Full-space MAP estimation, randomized generalized eigensolver,
//! low-rank Laplace posterior, posterior sampling, and information gain.
//!
//! The MAP objective
//!
//! ```text
//! 1/2 sum_k xi_k |y_k - F_k(m)|^2 / sigma^2 + 1/2 |m - m_prior|^2_{Gamma_prior^-1}
//! ```
//!
//! is minimized by Gauss-Newton-CG in whitened coordinates
//! `z = whiten(m - m_prior)`, where the prior Hessian is the identity
//! and CG is effectively prior-preconditioned. The generalized
//! eigenvalue problem `H_misfit w = lambda Gamma_prior^-1 w` is solved
//! by a double-pass randomized method on the whitened operator
//! `M^{1/2} A^-1 H_misfit A^-1 M^{1/2}`; eigenvectors are returned
//! `Gamma_prior^-1`-orthonormal.

use crate::adjoint::LinearizationPoint;
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::linalg::{conjugate_gradient, randomized_symmetric_eigen};
use crate::prior::GaussianPrior;
use crate::rng::{normal_vector, stream_rng, Stream};
use nalgebra::{DMatrix, DVector};

/// MAP solver controls. Defaults follow the library-wide contract:
/// stop when the gradient norm falls below `1e-6 * initial` or `1e-8`
/// absolute, cap at 100 Gauss-Newton iterations.
#[derive(Debug, Clone)]
pub struct MapConfig {
    pub grad_rtol: f64,
    pub grad_atol: f64,
    pub max_outer: usize,
    pub cg_max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            grad_rtol: 1e-6,
            grad_atol: 1e-8,
            max_outer: 100,
            cg_max_iter: 400,
            max_backtracks: 40,
        }
    }
}

/// Inputs shared by MAP and eigenvalue computations.
pub struct InverseProblem<'a> {
    pub model: &'a ForwardModel,
    pub prior: &'a GaussianPrior,
    pub noise_std: f64,
}

impl<'a> InverseProblem<'a> {
    pub fn new(model: &'a ForwardModel, prior: &'a GaussianPrior, noise_std: f64) -> Self {
        InverseProblem {
            model,
            prior,
            noise_std,
        }
    }

    fn objective(&self, m: &DVector<f64>, y: &[DVector<f64>], design: &[bool]) -> Result<f64> {
        let traj = self.model.solve(self.prior, m)?;
        let obs = crate::forward::observe(&traj, &self.model.config)?;
        let inv_var = 1.0 / (self.noise_std * self.noise_std);
        let mut phi = 0.0;
        for c in 0..design.len() {
            if design[c] {
                phi += 0.5 * inv_var * (&obs.values[c] - &y[c]).norm_squared();
            }
        }
        let dm = m - &self.prior.m_prior;
        Ok(phi + 0.5 * self.prior.prior_quad_norm(&dm)?)
    }

    /// Gauss-Newton-CG with backtracking line search; returns the MAP
    /// point. Iteration-cap overruns carry the best iterate in the error.
    pub fn compute_map(
        &self,
        y: &[DVector<f64>],
        design: &[bool],
        m0: Option<&DVector<f64>>,
        cfg: &MapConfig,
    ) -> Result<DVector<f64>> {
        let prior = self.prior;
        let n = prior.n_nodes();
        if design.len() != self.model.config.n_candidates() {
            return Err(Error::invalid("design length mismatch"));
        }
        // whitened coordinates: m = m_prior + unwhiten(z)
        let mut z = match m0 {
            Some(m0) => prior.whiten(&(m0 - &prior.m_prior)),
            None => DVector::zeros(n),
        };
        let mut m = &prior.m_prior + prior.unwhiten(&z);
        let mut obj = self.objective(&m, y, design)?;
        let mut grad_norm0 = None;
        for outer in 0..cfg.max_outer {
            let lin = LinearizationPoint::new(self.model, prior, m.clone())?;
            let g_m = lin.misfit_gradient(y, design, self.noise_std)?;
            // whitened gradient: unwhiten^T (misfit part) + z. The
            // misfit_gradient already contains the prior term
            // A M^-1 A (m - m_prior); map the whole thing:
            // unwhiten^T grad = M^{1/2} A^-1 grad, and
            // M^{1/2} A^-1 [A M^-1 A (m - m_prior)] = whiten(m - m_prior) = z.
            let g = {
                let t = prior.solve_a(&g_m);
                prior.lumped_sqrt_mul(&t)
            };
            let gnorm = g.norm();
            let g0 = *grad_norm0.get_or_insert(gnorm);
            if gnorm <= cfg.grad_atol || gnorm <= cfg.grad_rtol * g0 {
                return Ok(m);
            }
            // CG on the whitened GN Hessian (identity + whitened misfit GN)
            let eta = 0.5f64.min((gnorm / g0).sqrt());
            let apply = |v: &DVector<f64>| -> DVector<f64> {
                let mv = prior.unwhiten(v);
                let hv = lin
                    .gn_hessian_action(design, self.noise_std, &mv)
                    .expect("design validated");
                let t = prior.solve_a(&hv);
                prior.lumped_sqrt_mul(&t) + v
            };
            let (delta, _iters) = conjugate_gradient(
                apply,
                |r| r.clone(),
                &(-&g),
                None,
                eta.max(1e-10),
                cfg.cg_max_iter,
            )?;
            // backtracking line search on the true objective
            let mut alpha = 1.0;
            let slope = g.dot(&delta);
            let mut accepted = false;
            for _ in 0..cfg.max_backtracks {
                let z_trial = &z + alpha * &delta;
                let m_trial = &prior.m_prior + prior.unwhiten(&z_trial);
                match self.objective(&m_trial, y, design) {
                    Ok(obj_trial) if obj_trial <= obj + 1e-4 * alpha * slope => {
                        z = z_trial;
                        m = m_trial;
                        obj = obj_trial;
                        accepted = true;
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            if !accepted {
                // stagnation: report best iterate with diagnostics
                return Err(Error::MapIterationCap {
                    iterations: outer,
                    grad_norm: gnorm,
                    best: m.as_slice().to_vec(),
                });
            }
        }
        let lin = LinearizationPoint::new(self.model, prior, m.clone())?;
        let g_m = lin.misfit_gradient(y, design, self.noise_std)?;
        let g = prior.lumped_sqrt_mul(&prior.solve_a(&g_m));
        Err(Error::MapIterationCap {
            iterations: cfg.max_outer,
            grad_norm: g.norm(),
            best: m.as_slice().to_vec(),
        })
    }

    /// Double-pass randomized solve of
    /// `H_misfit w = lambda Gamma_prior^-1 w` at the given
    /// linearization point. Returns eigenpairs sorted descending with
    /// `Gamma_prior^-1`-orthonormal eigenvectors (and their whitened
    /// representation).
    pub fn randomized_gevp(
        &self,
        lin: &LinearizationPoint,
        design: &[bool],
        rank: usize,
        oversample: usize,
        sketch_seed: u64,
        sketch_index: u64,
    ) -> Result<GevpResult> {
        let prior = self.prior;
        let n = prior.n_nodes();
        let apply_whitened = |v: &DVector<f64>| -> Result<DVector<f64>> {
            let mv = prior.unwhiten(v);
            let hv = lin.gn_hessian_action(design, self.noise_std, &mv)?;
            Ok(prior.lumped_sqrt_mul(&prior.solve_a(&hv)))
        };
        let mut rng = stream_rng(sketch_seed, Stream::Sketch(sketch_index));
        let (eigenvalues, whitened) =
            randomized_symmetric_eigen(apply_whitened, n, rank, oversample, &mut rng)?;
        let r = eigenvalues.len();
        let mut vectors = DMatrix::zeros(n, r);
        for j in 0..r {
            vectors.set_column(j, &prior.unwhiten(&whitened.column(j).clone_owned()));
        }
        Ok(GevpResult {
            eigenvalues,
            vectors,
            whitened,
        })
    }

    /// MAP + eigenpairs in one call, giving the Laplace posterior.
    #[allow(clippy::too_many_arguments)]
    pub fn laplace_posterior(
        &self,
        y: &[DVector<f64>],
        design: &[bool],
        m0: Option<&DVector<f64>>,
        map_cfg: &MapConfig,
        rank: usize,
        oversample: usize,
        sketch_seed: u64,
        sketch_index: u64,
    ) -> Result<LaplacePosterior> {
        let m_map = self.compute_map(y, design, m0, map_cfg)?;
        let lin = LinearizationPoint::new(self.model, self.prior, m_map.clone())?;
        let gevp = self.randomized_gevp(&lin, design, rank, oversample, sketch_seed, sketch_index)?;
        Ok(LaplacePosterior {
            m_map,
            eigenvalues: gevp.eigenvalues,
            vectors: gevp.vectors,
            whitened: gevp.whitened,
            design: design.to_vec(),
            y: y.to_vec(),
        })
    }
}

/// Result of the randomized generalized eigensolve.
pub struct GevpResult {
    /// Descending, clamped to `>= 0`.
    pub eigenvalues: Vec<f64>,
    /// `Gamma_prior^-1`-orthonormal eigenvectors (columns).
    pub vectors: DMatrix<f64>,
    /// Whitened eigenvectors (Euclidean-orthonormal columns).
    pub whitened: DMatrix<f64>,
}

/// MAP point plus the leading prior-preconditioned eigenpairs; the
/// design and data it conditions on.
pub struct LaplacePosterior {
    pub m_map: DVector<f64>,
    pub eigenvalues: Vec<f64>,
    pub vectors: DMatrix<f64>,
    whitened: DMatrix<f64>,
    pub design: Vec<bool>,
    pub y: Vec<DVector<f64>>,
}

impl LaplacePosterior {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Prior-centered Laplace posterior around the MAP with no data:
    /// zero eigenvalues, sampling reduces to prior fluctuations.
    pub fn from_prior(prior: &GaussianPrior) -> Self {
        LaplacePosterior {
            m_map: prior.m_prior.clone(),
            eigenvalues: Vec::new(),
            vectors: DMatrix::zeros(prior.n_nodes(), 0),
            whitened: DMatrix::zeros(prior.n_nodes(), 0),
            design: Vec::new(),
            y: Vec::new(),
        }
    }

    /// Draws `m_post = m_MAP + (I - W_r S_r W_r^T Gamma_prior^-1) m`
    /// with `m` a zero-mean prior draw and `s_j = 1 - 1/sqrt(lambda_j + 1)`.
    pub fn sample(&self, prior: &GaussianPrior, rng: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
        let eta = normal_vector(rng, prior.n_nodes());
        let fluct = prior.unwhiten(&eta);
        // W_r^T Gamma_prior^-1 m = whitened^T eta
        let coeff = self.whitened.transpose() * &eta;
        let mut out = &self.m_map + fluct;
        for j in 0..self.rank() {
            let s = 1.0 - 1.0 / (self.eigenvalues[j] + 1.0).sqrt();
            out -= s * coeff[j] * self.vectors.column(j).clone_owned();
        }
        out
    }

    pub fn sample_seeded(&self, prior: &GaussianPrior, seed: u64, index: u64) -> DVector<f64> {
        let mut rng = stream_rng(seed, Stream::PosteriorSample(index));
        self.sample(prior, &mut rng)
    }

    /// Information gain (nats):
    /// `1/2 sum_j [log(1+lambda_j) - lambda_j/(1+lambda_j)]
    ///  + 1/2 |m_MAP - m_prior|^2_prec`.
    pub fn information_gain(&self, prior: &GaussianPrior) -> Result<f64> {
        let dm = &self.m_map - &prior.m_prior;
        Ok(spectral_information_gain(&self.eigenvalues) + 0.5 * prior.prior_quad_norm(&dm)?)
    }

    /// Pointwise posterior std estimate from the low-rank update:
    /// `diag(Gamma_post) = diag(Gamma_prior) - sum_j d_j w_j .* w_j`.
    pub fn pointwise_std(&self, prior_diag: &DVector<f64>) -> DVector<f64> {
        let n = prior_diag.len();
        DVector::from_fn(n, |i, _| {
            let mut v = prior_diag[i];
            for j in 0..self.rank() {
                let d = self.eigenvalues[j] / (self.eigenvalues[j] + 1.0);
                let w = self.vectors[(i, j)];
                v -= d * w * w;
            }
            v.max(0.0).sqrt()
        })
    }
}

/// Spectral part of the information gain.
pub fn spectral_information_gain(eigenvalues: &[f64]) -> f64 {
    0.5 * eigenvalues
        .iter()
        .map(|&l| (1.0 + l).ln() - l / (1.0 + l))
        .sum::<f64>()
}
