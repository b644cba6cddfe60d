//! Tangent-linear and adjoint solves for the parameter-to-observable
//! map: Jacobian actions `J_k m̂`, transpose actions `sum_k xi_k J_k^T v_k`,
//! Gauss-Newton Hessian actions, and the MAP-objective gradient.
//!
//! The tangent system is the derivative of the backward-Euler recursion,
//!
//! ```text
//! L_k uhat_k = (M/dt) uhat_{k-1} + S_k mhat,      uhat_0 = 0,
//! L_k = M/dt + A_D - diag(M_L g_u(u_k, m)),  S_k = diag(M_L g_m(u_k, m)),
//! ```
//!
//! and the adjoint sweep is its exact discrete transpose (sources
//! injected at selected observation steps, run backward), so the dot
//! test holds to machine precision. Each `L_k` is factorized once per
//! linearization point and reused by every solve.

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ObservableSeries, StateTrajectory};
use crate::linalg::BandCholesky;
use crate::prior::GaussianPrior;
use nalgebra::{DMatrix, DVector};

/// Forward trajectory at a fixed parameter plus the per-step
/// factorizations of the linearized operator.
pub struct LinearizationPoint<'a> {
    pub model: &'a ForwardModel,
    pub prior: &'a GaussianPrior,
    pub m: DVector<f64>,
    pub trajectory: StateTrajectory,
    /// Cholesky factors of `L_k`, index `k - 1` for steps `1..=n_steps`.
    factors: Vec<BandCholesky>,
    /// `S_k = M_L g_m(u_k, m)` as nodal vectors, same indexing.
    dm_scale: Vec<DVector<f64>>,
}

impl<'a> LinearizationPoint<'a> {
    pub fn new(
        model: &'a ForwardModel,
        prior: &'a GaussianPrior,
        m: DVector<f64>,
    ) -> Result<Self> {
        let trajectory = model.solve(prior, &m)?;
        Self::with_trajectory(model, prior, m, trajectory)
    }

    pub fn with_trajectory(
        model: &'a ForwardModel,
        prior: &'a GaussianPrior,
        m: DVector<f64>,
        trajectory: StateTrajectory,
    ) -> Result<Self> {
        let n_steps = model.config.n_steps();
        debug_assert_eq!(trajectory.n_steps(), n_steps);
        let reaction = model.config.reaction;
        let mut factors = Vec::with_capacity(n_steps);
        let mut dm_scale = Vec::with_capacity(n_steps);
        for k in 1..=n_steps {
            let u = &trajectory.states[k];
            factors.push(model.step_operator(prior, u, &m).cholesky()?);
            dm_scale.push(DVector::from_fn(m.len(), |i, _| {
                prior.lumped_mass[i] * reaction.dm(u[i], m[i])
            }));
        }
        Ok(LinearizationPoint {
            model,
            prior,
            m,
            trajectory,
            factors,
            dm_scale,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.m.len()
    }

    /// Observables `F_k` at all candidate times.
    pub fn observables(&self) -> ObservableSeries {
        crate::forward::observe(&self.trajectory, &self.model.config)
            .expect("trajectory consistent with config")
    }

    fn check_design(&self, design: &[bool]) -> Result<()> {
        let k = self.model.config.n_candidates();
        if design.len() != k {
            return Err(Error::invalid(format!(
                "design has {} entries, expected {}",
                design.len(),
                k
            )));
        }
        Ok(())
    }

    /// Tangent sweep: returns `J_k mhat = B uhat` at every candidate time.
    pub fn tangent_action(&self, mhat: &DVector<f64>) -> Vec<DVector<f64>> {
        let cfg = &self.model.config;
        let n_steps = cfg.n_steps();
        let dt = cfg.dt;
        let mut uhat = DVector::zeros(self.n_nodes());
        let mut out = Vec::with_capacity(cfg.candidate_steps.len());
        let mut next_candidate = 0usize;
        for k in 1..=n_steps {
            let mut rhs = self.prior.apply_mass(&(&uhat / dt));
            let s = &self.dm_scale[k - 1];
            for i in 0..rhs.len() {
                rhs[i] += s[i] * mhat[i];
            }
            self.factors[k - 1].solve_in_place(&mut rhs);
            uhat = rhs;
            if next_candidate < cfg.candidate_steps.len() && cfg.candidate_steps[next_candidate] == k
            {
                out.push(cfg.observation.apply(&uhat));
                next_candidate += 1;
            }
        }
        out
    }

    /// Adjoint sweep: returns `sum_k xi_k J_k^T v_k` for sources `v_k`
    /// given at the candidate times (entries with `xi_k = 0` ignored).
    pub fn adjoint_action(&self, v: &[DVector<f64>], design: &[bool]) -> Result<DVector<f64>> {
        self.check_design(design)?;
        if v.len() != design.len() {
            return Err(Error::invalid(format!(
                "source series has {} entries, design has {}",
                v.len(),
                design.len()
            )));
        }
        let cfg = &self.model.config;
        let dt = cfg.dt;
        let n = self.n_nodes();
        let last_selected_step = cfg
            .candidate_steps
            .iter()
            .zip(design)
            .filter(|(_, &on)| on)
            .map(|(&s, _)| s)
            .max();
        let mut grad = DVector::zeros(n);
        let Some(start) = last_selected_step else {
            return Ok(grad); // empty design
        };
        let mut p = DVector::zeros(n);
        for k in (1..=start).rev() {
            let mut rhs = self.prior.apply_mass(&(&p / dt));
            if let Some(c) = cfg.candidate_steps.iter().position(|&s| s == k) {
                if design[c] {
                    rhs += cfg.observation.apply_transpose(&v[c], n);
                }
            }
            self.factors[k - 1].solve_in_place(&mut rhs);
            p = rhs;
            let s = &self.dm_scale[k - 1];
            for i in 0..n {
                grad[i] += s[i] * p[i];
            }
        }
        Ok(grad)
    }

    /// Gauss-Newton Hessian action
    /// `sum_k xi_k J_k^T Gamma_noise^-1 J_k mhat` (noise `sigma^2 I`).
    pub fn gn_hessian_action(
        &self,
        design: &[bool],
        noise_std: f64,
        mhat: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_design(design)?;
        let tangents = self.tangent_action(mhat);
        let inv_var = 1.0 / (noise_std * noise_std);
        let sources: Vec<DVector<f64>> = tangents.into_iter().map(|t| t * inv_var).collect();
        self.adjoint_action(&sources, design)
    }

    /// Gradient of the MAP objective
    /// `1/2 sum_k xi_k |y_k - F_k(m)|^2 / sigma^2 + 1/2 |m - m_prior|^2_prec`.
    pub fn misfit_gradient(
        &self,
        y: &[DVector<f64>],
        design: &[bool],
        noise_std: f64,
    ) -> Result<DVector<f64>> {
        self.check_design(design)?;
        let obs = self.observables();
        let inv_var = 1.0 / (noise_std * noise_std);
        let mut residuals = Vec::with_capacity(design.len());
        for c in 0..design.len() {
            if design[c] {
                if y[c].len() != obs.values[c].len() {
                    return Err(Error::invalid("data dimension mismatch"));
                }
                residuals.push((&obs.values[c] - &y[c]) * inv_var);
            } else {
                residuals.push(DVector::zeros(obs.values[c].len()));
            }
        }
        let mut grad = self.adjoint_action(&residuals, design)?;
        let dm = &self.m - &self.prior.m_prior;
        let a_dm = self.prior.apply_a(&dm);
        let minv = self.prior.solve_mass(&a_dm)?;
        grad += self.prior.apply_a(&minv);
        Ok(grad)
    }

    /// Dense Jacobians at every candidate time via `d_m` tangent sweeps;
    /// oracle helper for small meshes.
    pub fn dense_jacobians(&self) -> Vec<DMatrix<f64>> {
        let n = self.n_nodes();
        let d_y = self.model.config.observation.dim(n);
        let k = self.model.config.n_candidates();
        let mut jacs = vec![DMatrix::zeros(d_y, n); k];
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            let cols = self.tangent_action(&e);
            for (c, col) in cols.into_iter().enumerate() {
                jacs[c].set_column(i, &col);
            }
        }
        jacs
    }
}
