//! Nonlinear reaction-diffusion time integration, observation operator,
//! parameter-to-observable map, and synthetic data generation.
//!
//! The state solves `du/dt = div(D grad u) + G(1-u)u` with `G = exp(m)`
//! and homogeneous Neumann boundary, discretized by backward Euler:
//!
//! ```text
//! M (u_{k+1} - u_k)/dt + A_D u_{k+1} - M_L g(u_{k+1}, m) = 0
//! ```
//!
//! The reaction is assembled with nodal (lumped-mass) quadrature so its
//! Jacobian is diagonal. A frozen-reaction linear configuration
//! (`Reaction::LinearSource`, parameter as source term) makes the PtO
//! map exactly linear in `m` for oracle tests.

use crate::error::{Error, Result};
use crate::geometry::{MaterialMap, StructuredMesh};
use crate::linalg::SymBandMatrix;
use crate::prior::{assemble_weighted_stiffness, GaussianPrior};
use crate::rng::{normal_vector, stream_rng, Stream};
use nalgebra::DVector;

/// Nodal reaction model `g(u, m)` entering as `- M_L g` in the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reaction {
    /// Logistic tumor growth `g = exp(m) (1 - u) u`.
    #[default]
    LogisticGrowth,
    /// Parameter as linear source `g = m`; PtO map linear in `m`.
    LinearSource,
}

impl Reaction {
    #[inline]
    pub fn value(self, u: f64, m: f64) -> f64 {
        match self {
            Reaction::LogisticGrowth => m.exp() * (1.0 - u) * u,
            Reaction::LinearSource => m,
        }
    }

    /// d g / d u.
    #[inline]
    pub fn du(self, u: f64, m: f64) -> f64 {
        match self {
            Reaction::LogisticGrowth => m.exp() * (1.0 - 2.0 * u),
            Reaction::LinearSource => 0.0,
        }
    }

    /// d g / d m.
    #[inline]
    pub fn dm(self, u: f64, m: f64) -> f64 {
        match self {
            Reaction::LogisticGrowth => m.exp() * (1.0 - u) * u,
            Reaction::LinearSource => 1.0,
        }
    }
}

/// Which components of the state are observed at candidate times.
#[derive(Debug, Clone, Default)]
pub enum Observation {
    /// Full state: `B = I`, `d_y = d_m`.
    #[default]
    Full,
    /// Pointwise subsample at the given node indices.
    Nodes(Vec<usize>),
}

impl Observation {
    pub fn dim(&self, d_m: usize) -> usize {
        match self {
            Observation::Full => d_m,
            Observation::Nodes(idx) => idx.len(),
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Observation::Full => u.clone(),
            Observation::Nodes(idx) => DVector::from_fn(idx.len(), |i, _| u[idx[i]]),
        }
    }

    pub fn apply_transpose(&self, v: &DVector<f64>, d_m: usize) -> DVector<f64> {
        match self {
            Observation::Full => v.clone(),
            Observation::Nodes(idx) => {
                let mut out = DVector::zeros(d_m);
                for (i, &node) in idx.iter().enumerate() {
                    out[node] += v[i];
                }
                out
            }
        }
    }
}

/// Time grid, candidate observation times, noise level, Newton control.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub t_final: f64,
    pub dt: f64,
    /// Candidate observation step indices (into 1..=n_steps), strictly
    /// increasing.
    pub candidate_steps: Vec<usize>,
    pub noise_std: f64,
    pub reaction: Reaction,
    pub observation: Observation,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub newton_max_iter: usize,
}

impl SimulationConfig {
    /// `n_obs` equispaced candidates over `t_final / dt` steps, e.g.
    /// steps 10, 20, ..., 100 for T = 10, dt = 0.1, K = 10.
    pub fn new(t_final: f64, dt: f64, n_obs: usize, noise_std: f64) -> Result<Self> {
        if dt <= 0.0 || t_final <= 0.0 {
            return Err(Error::invalid("time step and horizon must be positive"));
        }
        let steps = t_final / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps {
            return Err(Error::invalid("t_final / dt must be integral"));
        }
        let n_steps = steps.round() as usize;
        if n_obs == 0 || n_steps % n_obs != 0 {
            return Err(Error::invalid(format!(
                "cannot place {n_obs} candidates evenly over {n_steps} steps"
            )));
        }
        if noise_std <= 0.0 {
            return Err(Error::invalid("noise std must be positive"));
        }
        let stride = n_steps / n_obs;
        Ok(SimulationConfig {
            t_final,
            dt,
            candidate_steps: (1..=n_obs).map(|k| k * stride).collect(),
            noise_std,
            reaction: Reaction::default(),
            observation: Observation::default(),
            newton_abs_tol: 1e-10,
            newton_rel_tol: 1e-5,
            newton_max_iter: 100,
        })
    }

    pub fn with_reaction(mut self, reaction: Reaction) -> Self {
        self.reaction = reaction;
        self
    }

    pub fn with_observation(mut self, observation: Observation) -> Self {
        self.observation = observation;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Number of candidate observation times `K`.
    pub fn n_candidates(&self) -> usize {
        self.candidate_steps.len()
    }

    fn validate_candidates(&self) -> Result<()> {
        let n_steps = self.n_steps();
        let increasing = self
            .candidate_steps
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !increasing {
            return Err(Error::invalid("candidate steps must be strictly increasing"));
        }
        if self
            .candidate_steps
            .iter()
            .any(|&s| s == 0 || s > n_steps)
        {
            return Err(Error::invalid("candidate step index out of range"));
        }
        Ok(())
    }
}

/// Forward-model context: diffusion stiffness shared by all solves.
pub struct ForwardModel {
    pub stiffness_d: SymBandMatrix,
    pub u0: DVector<f64>,
    pub config: SimulationConfig,
}

impl ForwardModel {
    /// Default initial condition: Gaussian bump of height 0.5 centered
    /// at the gray-matter centroid with width 0.1 * domain width.
    pub fn gaussian_bump_ic(mesh: &StructuredMesh, material: &MaterialMap) -> DVector<f64> {
        let (cx, cy) = material.gray_centroid(mesh);
        let w = 0.1 * mesh.width();
        DVector::from_fn(mesh.n_nodes(), |idx, _| {
            let (x, y) = mesh.node_coords(idx);
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            0.5 * (-r2 / (2.0 * w * w)).exp()
        })
    }

    pub fn new(
        mesh: &StructuredMesh,
        material: &MaterialMap,
        config: SimulationConfig,
        u0: Option<DVector<f64>>,
    ) -> Result<Self> {
        config.validate_candidates()?;
        let u0 = u0.unwrap_or_else(|| Self::gaussian_bump_ic(mesh, material));
        if u0.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("initial condition must lie in [0, 1]"));
        }
        Ok(ForwardModel {
            stiffness_d: assemble_weighted_stiffness(mesh, |n| material.diffusion[n]),
            u0,
            config,
        })
    }

    /// Linearized time-step operator `M/dt + A_D - diag(M_L du)` at
    /// state `u`.
    pub fn step_operator(
        &self,
        prior: &GaussianPrior,
        u: &DVector<f64>,
        m: &DVector<f64>,
    ) -> SymBandMatrix {
        let mut op = prior.mass.linear_comb(1.0 / self.config.dt, &self.stiffness_d, 1.0);
        let r = self.config.reaction;
        let dg = DVector::from_fn(u.len(), |i, _| {
            prior.lumped_mass[i] * r.du(u[i], m[i])
        });
        op.add_diag(&dg, -1.0);
        op
    }

    fn step_residual(
        &self,
        prior: &GaussianPrior,
        u_next: &DVector<f64>,
        u_prev: &DVector<f64>,
        m: &DVector<f64>,
    ) -> DVector<f64> {
        let r = self.config.reaction;
        let mut res = prior.apply_mass(&((u_next - u_prev) / self.config.dt));
        res += self.stiffness_d.mul_vec(u_next);
        for i in 0..u_next.len() {
            res[i] -= prior.lumped_mass[i] * r.value(u_next[i], m[i]);
        }
        res
    }

    /// Runs the implicit time integration; returns states at steps
    /// 0..=n_steps.
    pub fn solve(&self, prior: &GaussianPrior, m: &DVector<f64>) -> Result<StateTrajectory> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameter field contains non-finite entries"));
        }
        let n_steps = self.config.n_steps();
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(self.u0.clone());
        let mut u = self.u0.clone();
        for step in 1..=n_steps {
            let u_prev = u.clone();
            // Damped Newton on the backward-Euler residual.
            let mut res = self.step_residual(prior, &u, &u_prev, m);
            let res0 = res.norm().max(f64::MIN_POSITIVE);
            let mut converged = false;
            for _it in 0..self.config.newton_max_iter {
                if res.norm() <= self.config.newton_abs_tol
                    || res.norm() <= self.config.newton_rel_tol * res0
                {
                    converged = true;
                    break;
                }
                let op = self.step_operator(prior, &u, m);
                let chol = op.cholesky()?;
                let delta = chol.solve(&res);
                let mut alpha = 1.0;
                loop {
                    let u_trial = &u - alpha * &delta;
                    let res_trial = self.step_residual(prior, &u_trial, &u_prev, m);
                    if res_trial.norm() <= (1.0 - 1e-4 * alpha) * res.norm() || alpha < 1e-3 {
                        u = u_trial;
                        res = res_trial;
                        break;
                    }
                    alpha *= 0.5;
                }
            }
            if !converged
                && res.norm() > self.config.newton_abs_tol
                && res.norm() > self.config.newton_rel_tol * res0
            {
                return Err(Error::NewtonDiverged {
                    step,
                    residual: res.norm(),
                    iterations: self.config.newton_max_iter,
                });
            }
            states.push(u.clone());
        }
        Ok(StateTrajectory { states })
    }
}

/// States `u_k`, k = 0..=n_steps.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Vec<DVector<f64>>,
}

impl StateTrajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }
}

/// Observable vectors `F_k` at the K candidate times.
#[derive(Debug, Clone)]
pub struct ObservableSeries {
    pub values: Vec<DVector<f64>>,
}

impl ObservableSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }
}

/// Applies the observation operator at every candidate time.
pub fn observe(trajectory: &StateTrajectory, config: &SimulationConfig) -> Result<ObservableSeries> {
    let n_steps = trajectory.n_steps();
    let mut values = Vec::with_capacity(config.candidate_steps.len());
    for &step in &config.candidate_steps {
        if step > n_steps {
            return Err(Error::invalid(format!(
                "candidate step {step} beyond trajectory length {n_steps}"
            )));
        }
        values.push(config.observation.apply(&trajectory.states[step]));
    }
    Ok(ObservableSeries { values })
}

/// Observable at step 0 (the encoded initial condition).
pub fn observe_initial(model: &ForwardModel) -> DVector<f64> {
    model.config.observation.apply(&model.u0)
}

/// Adds i.i.d. `N(0, noise_std^2)` noise to every entry; deterministic
/// for a fixed `(seed, index)` pair.
pub fn synthesize_data(
    series: &ObservableSeries,
    noise_std: f64,
    seed: u64,
    index: u64,
) -> ObservableSeries {
    let mut rng = stream_rng(seed, Stream::ObservationNoise(index));
    let values = series
        .values
        .iter()
        .map(|f| f + noise_std * normal_vector(&mut rng, f.len()))
        .collect();
    ObservableSeries { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, RegionParams, RegionSpec, GRAY_DEFAULTS, WHITE_DEFAULTS};
    use crate::prior::MassInverse;

    // Domain size scales with the grid so the reaction front
    // (width ~ sqrt(D/G) ~ 1.2 mm) stays resolved: h ~ 0.65 mm.
    fn setup(nx: usize, size: f64) -> (StructuredMesh, MaterialMap, GaussianPrior) {
        let (mesh, mat) = build_geometry(
            nx,
            nx,
            size,
            size,
            &RegionSpec::default(),
            GRAY_DEFAULTS,
            WHITE_DEFAULTS,
        )
        .unwrap();
        let prior = GaussianPrior::assemble(&mesh, &mat, MassInverse::Lumped).unwrap();
        (mesh, mat, prior)
    }

    fn zero_diffusion(nx: usize) -> (StructuredMesh, MaterialMap, GaussianPrior) {
        let zero_d = RegionParams {
            log_diffusion: -700.0, // exp underflows to 0
            ..GRAY_DEFAULTS
        };
        let (mesh, mat) = build_geometry(nx, nx, 20.0, 20.0, &RegionSpec::HalfSplit, zero_d, zero_d)
            .unwrap();
        let prior = GaussianPrior::assemble(&mesh, &mat, MassInverse::Lumped).unwrap();
        (mesh, mat, prior)
    }

    #[test]
    fn zero_dynamics_keeps_initial_state() {
        let (mesh, mat, prior) = zero_diffusion(6);
        let cfg = SimulationConfig::new(1.0, 0.1, 5, 0.02).unwrap();
        let model = ForwardModel::new(&mesh, &mat, cfg, None).unwrap();
        // m -> G = 0
        let m = DVector::from_element(36, -700.0);
        let traj = model.solve(&prior, &m).unwrap();
        for u in &traj.states {
            assert!((u - &model.u0).norm() < 1e-12);
        }
    }

    #[test]
    fn logistic_recursion_and_first_order_convergence() {
        // D = 0, G constant: each node follows the scalar backward-Euler
        // logistic recursion; refining dt converges to the closed form
        // u(t) = u0 / (u0 + (1 - u0) exp(-G t)) at first order.
        let (mesh, mat, prior) = zero_diffusion(4);
        let g = 0.8f64;
        let m = DVector::from_element(16, g.ln());
        let u0 = DVector::from_element(16, 0.3);
        let t_final = 1.0;

        let solve_dt = |dt: f64| {
            let mut cfg = SimulationConfig::new(t_final, dt, 1, 0.02).unwrap();
            cfg.newton_rel_tol = 1e-13;
            cfg.newton_abs_tol = 1e-13;
            let model = ForwardModel::new(&mesh, &mat, cfg, Some(u0.clone())).unwrap();
            model.solve(&prior, &m).unwrap().terminal().clone()
        };

        // backward-Euler scalar recursion oracle
        let recursion = |dt: f64| {
            let n = (t_final / dt).round() as usize;
            let mut u = 0.3f64;
            for _ in 0..n {
                // solve u' = u + dt g (1-u')u' for u' by Newton
                let mut un = u;
                for _ in 0..50 {
                    let f = un - u - dt * g * (1.0 - un) * un;
                    let fp = 1.0 - dt * g * (1.0 - 2.0 * un);
                    un -= f / fp;
                }
                u = un;
            }
            u
        };

        let exact = 0.3 / (0.3 + 0.7 * (-g * t_final).exp());
        let mut errs = Vec::new();
        for k in 0..4 {
            let dt = 0.25 / (2f64.powi(k));
            let u = solve_dt(dt);
            let rec = recursion(dt);
            // PDE with D=0 and lumped reaction reduces to the nodal recursion
            assert!((u[5] - rec).abs() < 1e-9, "dt={dt}: {} vs {rec}", u[5]);
            errs.push((u[5] - exact).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (1.5..=2.5).contains(&ratio),
                "first-order ratio {ratio} out of range"
            );
        }
    }

    #[test]
    fn states_stay_in_unit_interval_on_default_config() {
        let (mesh, mat, prior) = setup(32, 20.0);
        let cfg = SimulationConfig::new(10.0, 0.1, 10, 0.02).unwrap();
        let model = ForwardModel::new(&mesh, &mat, cfg, None).unwrap();
        for s in 0..2 {
            let m = prior.sample(3, s);
            let traj = model.solve(&prior, &m).unwrap();
            for u in &traj.states {
                assert!(u.min() >= -1e-6, "undershoot {}", u.min());
                assert!(u.max() <= 1.0 + 1e-6, "overshoot {}", u.max());
            }
        }
    }

    #[test]
    fn observe_full_and_subsampled() {
        let (mesh, mat, prior) = setup(6, 4.0);
        let cfg = SimulationConfig::new(1.0, 0.1, 5, 0.02).unwrap();
        let model = ForwardModel::new(&mesh, &mat, cfg.clone(), None).unwrap();
        let m = prior.sample(9, 0);
        let traj = model.solve(&prior, &m).unwrap();
        let series = observe(&traj, &cfg).unwrap();
        assert_eq!(series.len(), 5);
        // identity mode is bit-equal to the stored state
        assert_eq!(series.values[2], traj.states[cfg.candidate_steps[2]]);

        let sub = cfg.clone().with_observation(Observation::Nodes(vec![7]));
        let sub_series = observe(&traj, &sub).unwrap();
        assert_eq!(sub_series.dim(), 1);
        for (k, &step) in sub.candidate_steps.iter().enumerate() {
            assert_eq!(sub_series.values[k][0], traj.states[step][7]);
        }
    }

    #[test]
    fn default_candidate_spacing_matches_paper_counts() {
        let cfg = SimulationConfig::new(10.0, 0.1, 10, 0.02).unwrap();
        assert_eq!(cfg.n_steps(), 100);
        assert_eq!(cfg.candidate_steps, vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
    }

    #[test]
    fn noise_is_deterministic_and_calibrated() {
        let (mesh, mat, prior) = setup(8, 5.0);
        let cfg = SimulationConfig::new(2.0, 0.1, 10, 0.05).unwrap();
        let model = ForwardModel::new(&mesh, &mat, cfg.clone(), None).unwrap();
        let m = prior.sample(4, 0);
        let series = observe(&model.solve(&prior, &m).unwrap(), &cfg).unwrap();
        let y1 = synthesize_data(&series, cfg.noise_std, 5, 0);
        let y2 = synthesize_data(&series, cfg.noise_std, 5, 0);
        for (a, b) in y1.values.iter().zip(&y2.values) {
            assert_eq!(a, b);
        }
        // empirical std over >= 1e5 entries within 1%
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        let mut idx = 0u64;
        while count < 100_000 {
            let y = synthesize_data(&series, cfg.noise_std, 5, idx);
            for (yk, fk) in y.values.iter().zip(&series.values) {
                let d = yk - fk;
                sum_sq += d.norm_squared();
                count += d.len();
            }
            idx += 1;
        }
        let std = (sum_sq / count as f64).sqrt();
        assert!(
            (std - cfg.noise_std).abs() < 0.01 * cfg.noise_std,
            "std {std}"
        );
    }

    #[test]
    fn halving_dt_is_first_order_on_smooth_sample() {
        let (mesh, mat, prior) = setup(8, 5.0);
        let m = prior.sample(12, 0);
        let terminal = |dt: f64| {
            let cfg = SimulationConfig::new(2.0, dt, 1, 0.02).unwrap();
            let model = ForwardModel::new(&mesh, &mat, cfg, None).unwrap();
            model.solve(&prior, &m).unwrap().terminal().clone()
        };
        let mut diffs = Vec::new();
        let mut prev = terminal(0.2);
        for k in 1..=3 {
            let cur = terminal(0.2 / 2f64.powi(k));
            diffs.push((&cur - &prev).norm());
            prev = cur;
        }
        for w in diffs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
        }
    }
}
