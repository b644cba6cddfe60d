//! Matérn-type Gaussian random-field prior and its finite-element
//! operators.
//!
//! The prior is N(m_prior, Gamma_prior) with Gamma_prior = A^-1 M A^-1,
//! where M is the FEM mass matrix and A assembles the SPDE bilinear
//! form `gamma grad . grad + delta I` with nodewise coefficients and a
//! homogeneous natural boundary condition (boundary variance inflation
//! is accepted at this scale). Samples are realized as
//! `m = m_prior + A^-1 M^{1/2} eta` with the lumped-mass square root.

use crate::error::{Error, Result};
use crate::geometry::{MaterialMap, StructuredMesh};
use crate::linalg::{conjugate_gradient, BandCholesky, SymBandMatrix};
use crate::rng::{normal_vector, stream_rng, Stream};
use nalgebra::{DMatrix, DVector};

/// 2x2 Gauss points on [-1, 1].
const GP: [f64; 2] = [-0.5773502691896257, 0.5773502691896257];

fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

fn shape_grad(xi: f64, eta: f64) -> [(f64, f64); 4] {
    [
        (-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)),
        (0.25 * (1.0 - eta), -0.25 * (1.0 + xi)),
        (0.25 * (1.0 + eta), 0.25 * (1.0 + xi)),
        (-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)),
    ]
}

/// Assembles the mass matrix weighted by a nodewise coefficient
/// (bilinearly interpolated to quadrature points).
pub fn assemble_weighted_mass(
    mesh: &StructuredMesh,
    coeff: impl Fn(usize) -> f64,
) -> SymBandMatrix {
    let mut m = SymBandMatrix::zeros(mesh.n_nodes(), mesh.half_bandwidth());
    let jac = mesh.hx * mesh.hy / 4.0;
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        let c: Vec<f64> = nodes.iter().map(|&n| coeff(n)).collect();
        let mut local = [[0.0; 4]; 4];
        for &xi in &GP {
            for &eta in &GP {
                let n = shape(xi, eta);
                let cq: f64 = (0..4).map(|i| c[i] * n[i]).sum();
                for i in 0..4 {
                    for j in 0..=i {
                        local[i][j] += jac * cq * n[i] * n[j];
                    }
                }
            }
        }
        for i in 0..4 {
            for j in 0..=i {
                let (gi, gj) = (nodes[i], nodes[j]);
                if gi >= gj {
                    m.add(gi, gj, local[i][j]);
                } else {
                    m.add(gj, gi, local[i][j]);
                }
            }
        }
    }
    m
}

/// Assembles the stiffness matrix weighted by a nodewise coefficient.
pub fn assemble_weighted_stiffness(
    mesh: &StructuredMesh,
    coeff: impl Fn(usize) -> f64,
) -> SymBandMatrix {
    let mut k = SymBandMatrix::zeros(mesh.n_nodes(), mesh.half_bandwidth());
    let jac = mesh.hx * mesh.hy / 4.0;
    let (sx, sy) = (2.0 / mesh.hx, 2.0 / mesh.hy);
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        let c: Vec<f64> = nodes.iter().map(|&n| coeff(n)).collect();
        let mut local = [[0.0; 4]; 4];
        for &xi in &GP {
            for &eta in &GP {
                let n = shape(xi, eta);
                let g = shape_grad(xi, eta);
                let cq: f64 = (0..4).map(|i| c[i] * n[i]).sum();
                for i in 0..4 {
                    let (gxi, gyi) = (g[i].0 * sx, g[i].1 * sy);
                    for j in 0..=i {
                        let (gxj, gyj) = (g[j].0 * sx, g[j].1 * sy);
                        local[i][j] += jac * cq * (gxi * gxj + gyi * gyj);
                    }
                }
            }
        }
        for i in 0..4 {
            for j in 0..=i {
                let (gi, gj) = (nodes[i], nodes[j]);
                if gi >= gj {
                    k.add(gi, gj, local[i][j]);
                } else {
                    k.add(gj, gi, local[i][j]);
                }
            }
        }
    }
    k
}

/// How `M^-1` actions are computed in prior-precision quadratic forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassInverse {
    /// Diagonal lumped mass; O(d_m) and consistent with the sampler.
    #[default]
    Lumped,
    /// Consistent mass solved by preconditioned CG.
    ConsistentCg,
}

/// Assembled prior: mean, mass matrix, SPDE operator, factorizations.
pub struct GaussianPrior {
    pub mesh: StructuredMesh,
    pub m_prior: DVector<f64>,
    pub mass: SymBandMatrix,
    pub a_op: SymBandMatrix,
    pub lumped_mass: DVector<f64>,
    pub mass_inverse: MassInverse,
    chol_a: BandCholesky,
    chol_m: BandCholesky,
}

impl GaussianPrior {
    pub fn assemble(
        mesh: &StructuredMesh,
        material: &MaterialMap,
        mass_inverse: MassInverse,
    ) -> Result<Self> {
        if material.delta.iter().all(|&d| d <= 0.0) {
            return Err(Error::invalid(
                "delta vanishes everywhere; the SPDE operator would be singular",
            ));
        }
        let mass = assemble_weighted_mass(mesh, |_| 1.0);
        let stiff = assemble_weighted_stiffness(mesh, |n| material.gamma[n]);
        let dmass = assemble_weighted_mass(mesh, |n| material.delta[n]);
        let a_op = stiff.linear_comb(1.0, &dmass, 1.0);
        let n = mesh.n_nodes();
        let mut lumped = DVector::zeros(n);
        // Row sums: partition of unity makes them positive and mass-preserving.
        let dense_free_rowsum = |m: &SymBandMatrix, i: usize| -> f64 {
            let mut s = 0.0;
            for j in i.saturating_sub(m.half_bandwidth())..(i + m.half_bandwidth() + 1).min(n) {
                s += m.get(i, j);
            }
            s
        };
        for i in 0..n {
            lumped[i] = dense_free_rowsum(&mass, i);
        }
        let chol_a = a_op.cholesky()?;
        let chol_m = mass.cholesky()?;
        Ok(GaussianPrior {
            mesh: mesh.clone(),
            m_prior: DVector::from_iterator(n, material.prior_mean.iter().cloned()),
            mass,
            a_op,
            lumped_mass: lumped,
            mass_inverse,
            chol_a,
            chol_m,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.m_prior.len()
    }

    pub fn apply_a(&self, v: &DVector<f64>) -> DVector<f64> {
        self.a_op.mul_vec(v)
    }

    pub fn solve_a(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol_a.solve(v)
    }

    pub fn apply_mass(&self, v: &DVector<f64>) -> DVector<f64> {
        self.mass.mul_vec(v)
    }

    /// `M^-1 v` under the configured mode.
    pub fn solve_mass(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self.mass_inverse {
            MassInverse::Lumped => Ok(DVector::from_fn(v.len(), |i, _| v[i] / self.lumped_mass[i])),
            MassInverse::ConsistentCg => {
                let lumped = &self.lumped_mass;
                let (x, _) = conjugate_gradient(
                    |w| self.mass.mul_vec(w),
                    |r| DVector::from_fn(r.len(), |i, _| r[i] / lumped[i]),
                    v,
                    None,
                    1e-14,
                    500,
                )?;
                Ok(x)
            }
        }
    }

    /// `M^{1/2} v` with the lumped (diagonal) square root.
    pub fn lumped_sqrt_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| v[i] * self.lumped_mass[i].sqrt())
    }

    /// Whitening map `v -> M^{-1/2} A v`; Euclidean norms of whitened
    /// vectors equal prior-precision norms.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let av = self.apply_a(v);
        DVector::from_fn(v.len(), |i, _| av[i] / self.lumped_mass[i].sqrt())
    }

    /// Inverse of [`Self::whiten`]: `beta -> A^-1 M^{1/2} beta`.
    pub fn unwhiten(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.solve_a(&self.lumped_sqrt_mul(beta))
    }

    /// `|v|^2 in the prior-precision metric = (Av)^T M^-1 (Av)`.
    pub fn prior_quad_norm(&self, v: &DVector<f64>) -> Result<f64> {
        let av = self.apply_a(v);
        let minv_av = self.solve_mass(&av)?;
        Ok(av.dot(&minv_av))
    }

    /// Mass-weighted norm `sqrt(v^T M v)`.
    pub fn mass_norm(&self, v: &DVector<f64>) -> f64 {
        self.mass.quad_form(v).max(0.0).sqrt()
    }

    /// Zero-mean prior fluctuation `A^-1 M^{1/2} eta`, `eta ~ N(0, I)`.
    pub fn zero_mean_sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
        let eta = normal_vector(rng, self.n_nodes());
        self.unwhiten(&eta)
    }

    /// Draws `m ~ N(m_prior, Gamma_prior)`; deterministic per seed.
    pub fn sample(&self, seed: u64, index: u64) -> DVector<f64> {
        let mut rng = stream_rng(seed, Stream::PriorSample(index));
        &self.m_prior + self.zero_mean_sample(&mut rng)
    }

    /// Dense `Gamma_prior = A^-1 M A^-1` for oracle tests. The mass
    /// factor follows the configured inverse mode so that the dense
    /// covariance agrees with the sampler and quadratic forms.
    pub fn dense_prior_covariance(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        assert!(n <= 4096, "dense prior covariance reserved for oracle meshes");
        let mut gamma = DMatrix::zeros(n, n);
        // first pass: C = A^-1 M (columns of M solved through A)
        for j in 0..n {
            let mcol = match self.mass_inverse {
                MassInverse::Lumped => {
                    let mut e = DVector::zeros(n);
                    e[j] = self.lumped_mass[j];
                    e
                }
                MassInverse::ConsistentCg => DVector::from_fn(n, |i, _| self.mass.get(i, j)),
            };
            gamma.set_column(j, &self.solve_a(&mcol));
        }
        // second pass: Gamma = C A^-1 = (A^-1 C^T)^T, and Gamma is symmetric
        let c = gamma.clone();
        for j in 0..n {
            gamma.set_column(j, &self.solve_a(&c.row(j).transpose()));
        }
        (&gamma + gamma.transpose()) * 0.5
    }

    /// Consistent-mass solve regardless of mode (oracle helper).
    pub fn solve_mass_consistent(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol_m.solve(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, RegionSpec, GRAY_DEFAULTS, WHITE_DEFAULTS};

    fn default_prior(nx: usize, mode: MassInverse) -> GaussianPrior {
        let (mesh, mat) = build_geometry(
            nx,
            nx,
            20.0,
            20.0,
            &RegionSpec::default(),
            GRAY_DEFAULTS,
            WHITE_DEFAULTS,
        )
        .unwrap();
        GaussianPrior::assemble(&mesh, &mat, mode).unwrap()
    }

    #[test]
    fn mass_sums_to_domain_area() {
        let p = default_prior(8, MassInverse::Lumped);
        let ones = DVector::from_element(64, 1.0);
        let total = p.mass.quad_form(&ones);
        assert!((total - 400.0).abs() < 1e-9, "total mass {total}");
        // lumped mass preserves total mass
        assert!((p.lumped_mass.sum() - 400.0).abs() < 1e-9);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let (mesh, mat) = build_geometry(
            8,
            8,
            20.0,
            20.0,
            &RegionSpec::default(),
            GRAY_DEFAULTS,
            WHITE_DEFAULTS,
        )
        .unwrap();
        let p = GaussianPrior::assemble(&mesh, &mat, MassInverse::Lumped).unwrap();
        let dmass = assemble_weighted_mass(&mesh, |n| mat.delta[n]);
        let ones = DVector::from_element(64, 1.0);
        let diff = p.apply_a(&ones) - dmass.mul_vec(&ones);
        assert!(diff.norm() < 1e-10, "gamma part leaks {}", diff.norm());
    }

    #[test]
    fn dense_prior_covariance_is_spd_on_16x16() {
        let p = default_prior(16, MassInverse::ConsistentCg);
        let gamma = p.dense_prior_covariance();
        let (vals, _) = crate::linalg::symmetric_eigen_desc(&gamma);
        assert!(vals[vals.len() - 1] > 0.0, "min eig {}", vals[vals.len() - 1]);
    }

    #[test]
    fn whiten_unwhiten_inverse_pair() {
        let p = default_prior(10, MassInverse::Lumped);
        let mut rng = stream_rng(3, Stream::Custom(0));
        let v = normal_vector(&mut rng, p.n_nodes());
        let round = p.unwhiten(&p.whiten(&v));
        assert!((&round - &v).norm() <= 1e-10 * v.norm());
        // whitened Euclidean norm equals prior-precision norm
        let nw = p.whiten(&v).norm_squared();
        let nq = p.prior_quad_norm(&v).unwrap();
        assert!((nw - nq).abs() <= 1e-10 * nq.abs());
        // v = 0 -> all norms zero
        let z = DVector::zeros(p.n_nodes());
        assert_eq!(p.prior_quad_norm(&z).unwrap(), 0.0);
        assert_eq!(p.mass_norm(&z), 0.0);
    }

    #[test]
    fn quad_norm_matches_dense_oracle_both_modes() {
        for mode in [MassInverse::Lumped, MassInverse::ConsistentCg] {
            let p = default_prior(16, mode);
            let gamma = p.dense_prior_covariance();
            let mut rng = stream_rng(5, Stream::Custom(1));
            let v = normal_vector(&mut rng, p.n_nodes());
            let direct = p.prior_quad_norm(&v).unwrap();
            let oracle = v.dot(
                &gamma
                    .clone()
                    .cholesky()
                    .expect("gamma SPD")
                    .solve(&v),
            );
            assert!(
                (direct - oracle).abs() <= 1e-8 * oracle.abs(),
                "{mode:?}: {direct} vs {oracle}"
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = default_prior(8, MassInverse::Lumped);
        assert_eq!(p.sample(11, 0), p.sample(11, 0));
        assert_ne!(p.sample(11, 0), p.sample(11, 1));
    }

    #[test]
    fn sample_moments_match_dense_covariance() {
        let p = default_prior(16, MassInverse::Lumped);
        let gamma = p.dense_prior_covariance();
        let n = p.n_nodes();
        let n_samples = 10_000usize;
        let mut mean: DVector<f64> = DVector::zeros(n);
        let mut sq: DVector<f64> = DVector::zeros(n);
        for s in 0..n_samples {
            let m = p.sample(42, s as u64);
            mean += &m;
            for i in 0..n {
                sq[i] += m[i] * m[i];
            }
        }
        mean /= n_samples as f64;
        let mut max_var_dev = 0.0f64;
        let mut max_mean_dev = 0.0f64;
        for i in 0..n {
            let var: f64 = sq[i] / n_samples as f64 - mean[i] * mean[i];
            let truth = gamma[(i, i)];
            // MC standard error of a variance estimate ~ var * sqrt(2/N)
            let se_var = truth * (2.0 / n_samples as f64).sqrt();
            max_var_dev = max_var_dev.max((var - truth).abs() / se_var);
            let se_mean = (truth / n_samples as f64).sqrt();
            max_mean_dev = max_mean_dev.max((mean[i] - p.m_prior[i]).abs() / se_mean);
        }
        assert!(max_var_dev < 5.0, "variance off by {max_var_dev} SEs");
        assert!(max_mean_dev < 5.0, "mean off by {max_mean_dev} SEs");
    }
}
