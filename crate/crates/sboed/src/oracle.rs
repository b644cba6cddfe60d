//! Dense linear-Gaussian oracle: closed-form posterior, KL divergence,
//! expected information gain, conditional EIG, and the numerical check
//! that the terminal and initial-conditioned design objectives differ
//! by a candidate-independent constant.
//!
//! Everything here is straight Gaussian algebra on small dense
//! matrices; it exists to validate the matrix-free machinery and the
//! design loop, never to run at scale.

use crate::error::{Error, Result};
use crate::linalg::logdet_spd;
use nalgebra::{DMatrix, DVector};

/// Dense linear-Gaussian instance `y_k = J_k m + eps_k`,
/// `eps ~ N(0, sigma^2 I)`, `m ~ N(m_prior, gamma_prior)`.
pub struct LinearGaussianModel {
    pub jacobians: Vec<DMatrix<f64>>,
    pub gamma_prior: DMatrix<f64>,
    pub m_prior: DVector<f64>,
    pub noise_std: f64,
    gamma_prior_inv: DMatrix<f64>,
}

/// A Gaussian in mean/covariance form.
#[derive(Clone)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(
        jacobians: Vec<DMatrix<f64>>,
        gamma_prior: DMatrix<f64>,
        m_prior: DVector<f64>,
        noise_std: f64,
    ) -> Result<Self> {
        let d_m = m_prior.len();
        if d_m > 4096 {
            return Err(Error::invalid("oracle reserved for d_m <= 4096"));
        }
        if jacobians.iter().any(|j| j.ncols() != d_m) {
            return Err(Error::invalid("Jacobian column count mismatch"));
        }
        let gamma_prior_inv = gamma_prior
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
            .inverse();
        Ok(LinearGaussianModel {
            jacobians,
            gamma_prior,
            m_prior,
            noise_std,
            gamma_prior_inv,
        })
    }

    pub fn n_times(&self) -> usize {
        self.jacobians.len()
    }

    pub fn d_m(&self) -> usize {
        self.m_prior.len()
    }

    pub fn prior(&self) -> Gaussian {
        Gaussian {
            mean: self.m_prior.clone(),
            cov: self.gamma_prior.clone(),
        }
    }

    fn check_design(&self, design: &[bool]) -> Result<()> {
        if design.len() != self.n_times() {
            return Err(Error::invalid("design length mismatch"));
        }
        Ok(())
    }

    /// Rows of all selected Jacobians stacked.
    pub fn stacked_jacobian(&self, design: &[bool]) -> DMatrix<f64> {
        let rows: usize = design
            .iter()
            .zip(&self.jacobians)
            .filter(|(&on, _)| on)
            .map(|(_, j)| j.nrows())
            .sum();
        let mut out = DMatrix::zeros(rows, self.d_m());
        let mut at = 0;
        for (c, j) in self.jacobians.iter().enumerate() {
            if design[c] {
                out.view_mut((at, 0), (j.nrows(), j.ncols())).copy_from(j);
                at += j.nrows();
            }
        }
        out
    }

    fn stacked_data(&self, design: &[bool], y: &[DVector<f64>]) -> DVector<f64> {
        let rows: usize = design
            .iter()
            .zip(&self.jacobians)
            .filter(|(&on, _)| on)
            .map(|(_, j)| j.nrows())
            .sum();
        let mut out = DVector::zeros(rows);
        let mut at = 0;
        for c in 0..design.len() {
            if design[c] {
                out.rows_mut(at, y[c].len()).copy_from(&y[c]);
                at += y[c].len();
            }
        }
        out
    }

    /// Exact posterior for data at the selected times.
    pub fn posterior(&self, design: &[bool], y: &[DVector<f64>]) -> Result<Gaussian> {
        self.check_design(design)?;
        let j = self.stacked_jacobian(design);
        let yv = self.stacked_data(design, y);
        let inv_var = 1.0 / (self.noise_std * self.noise_std);
        let prec = &self.gamma_prior_inv + inv_var * j.transpose() * &j;
        let cov = prec
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
            .inverse();
        let rhs = inv_var * j.transpose() * yv + &self.gamma_prior_inv * &self.m_prior;
        let mean = &cov * rhs;
        Ok(Gaussian { mean, cov })
    }

    /// `KL(N(a) || N(b))` for the instance dimension.
    pub fn kl(&self, a: &Gaussian, b: &Gaussian) -> Result<f64> {
        let n = a.mean.len() as f64;
        let b_inv = b
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
            .inverse();
        let dm = &a.mean - &b.mean;
        Ok(0.5
            * ((&b_inv * &a.cov).trace() - n + logdet_spd(&b.cov)? - logdet_spd(&a.cov)?
                + dm.dot(&(&b_inv * &dm))))
    }

    /// Exact static EIG
    /// `1/2 log det(I + J Gamma J^T / sigma^2)` over selected rows.
    pub fn exact_eig(&self, design: &[bool]) -> Result<f64> {
        self.check_design(design)?;
        let j = self.stacked_jacobian(design);
        if j.nrows() == 0 {
            return Ok(0.0);
        }
        let s = DMatrix::identity(j.nrows(), j.nrows())
            + (&j * &self.gamma_prior * j.transpose()) / (self.noise_std * self.noise_std);
        Ok(0.5 * logdet_spd(&s)?)
    }

    /// `E_y [ KL(posterior(y_all) || reference) ]` where the prefix data
    /// is fixed and the remaining selected data is drawn from its
    /// marginal under `belief`.
    ///
    /// Direct Gaussian algebra (no Theorem-1 shortcut): the posterior
    /// mean is affine in the random data block, so the expectation of
    /// the quadratic KL term splits into a mean part and a trace part.
    fn expected_kl(
        &self,
        prefix: &[bool],
        y_star: &[DVector<f64>],
        candidate: &[bool],
        belief: &Gaussian,
        reference: &Gaussian,
    ) -> Result<f64> {
        let full: Vec<bool> = prefix
            .iter()
            .zip(candidate)
            .map(|(&a, &b)| a || b)
            .collect();
        let j_all = self.stacked_jacobian(&full);
        let j_cand = self.stacked_jacobian(candidate);
        let inv_var = 1.0 / (self.noise_std * self.noise_std);

        // final posterior covariance (data independent)
        let prec = &self.gamma_prior_inv + inv_var * j_all.transpose() * &j_all;
        let cov1 = prec
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
            .inverse();

        // mu1(y_cand) = a + B y_cand
        let j_pre = self.stacked_jacobian(prefix);
        let y_pre = self.stacked_data(prefix, y_star);
        let a = &cov1
            * (inv_var * j_pre.transpose() * y_pre + &self.gamma_prior_inv * &self.m_prior);
        let b = inv_var * &cov1 * j_cand.transpose();

        // marginal of the candidate data under the belief
        let y_mean = &j_cand * &belief.mean;
        let y_cov = &j_cand * &belief.cov * j_cand.transpose()
            + DMatrix::identity(j_cand.nrows(), j_cand.nrows()) * (self.noise_std.powi(2));

        let ref_inv = reference
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
            .inverse();
        let n = self.d_m() as f64;
        let mean1 = &a + &b * y_mean;
        let dm = &mean1 - &reference.mean;
        let trace_part = (&ref_inv * &cov1).trace();
        let quad_mean = dm.dot(&(&ref_inv * &dm));
        let quad_fluct = (&ref_inv * &b * y_cov * b.transpose()).trace();
        Ok(0.5
            * (trace_part - n + logdet_spd(&reference.cov)? - logdet_spd(&cov1)?
                + quad_mean
                + quad_fluct))
    }

    /// Closed-form conditional EIG of `candidate` given observed prefix
    /// data: expectation over future data of `KL(posterior || prior)`.
    pub fn conditional_eig(
        &self,
        prefix: &[bool],
        y_star: &[DVector<f64>],
        candidate: &[bool],
    ) -> Result<f64> {
        self.check_design(prefix)?;
        self.check_design(candidate)?;
        let belief = if prefix.iter().any(|&b| b) {
            self.posterior(prefix, y_star)?
        } else {
            self.prior()
        };
        self.expected_kl(prefix, y_star, candidate, &belief, &self.prior())
    }

    /// Same expectation but measured against the current belief
    /// (the initial-conditioned objective).
    pub fn conditional_eig_vs_belief(
        &self,
        prefix: &[bool],
        y_star: &[DVector<f64>],
        candidate: &[bool],
    ) -> Result<f64> {
        let belief = if prefix.iter().any(|&b| b) {
            self.posterior(prefix, y_star)?
        } else {
            self.prior()
        };
        self.expected_kl(prefix, y_star, candidate, &belief, &belief)
    }

    /// Numerical Theorem-1 check: over every candidate completion, the
    /// terminal objective minus the initial-conditioned objective must
    /// equal `KL(belief || prior)` independent of the candidate.
    /// Returns the maximum absolute deviation and whether the argmaxes
    /// of the two objectives coincide.
    pub fn theorem1_check(
        &self,
        prefix: &[bool],
        y_star: &[DVector<f64>],
        candidates: &[Vec<bool>],
    ) -> Result<Theorem1Report> {
        let belief = if prefix.iter().any(|&b| b) {
            self.posterior(prefix, y_star)?
        } else {
            self.prior()
        };
        let constant = self.kl(&belief, &self.prior())?;
        let mut max_dev = 0.0f64;
        let mut best_terminal = (0usize, f64::NEG_INFINITY);
        let mut best_initial = (0usize, f64::NEG_INFINITY);
        for (i, cand) in candidates.iter().enumerate() {
            let terminal = self.conditional_eig(prefix, y_star, cand)?;
            let initial = self.conditional_eig_vs_belief(prefix, y_star, cand)?;
            max_dev = max_dev.max((terminal - initial - constant).abs());
            if terminal > best_terminal.1 {
                best_terminal = (i, terminal);
            }
            if initial > best_initial.1 {
                best_initial = (i, initial);
            }
        }
        Ok(Theorem1Report {
            constant,
            max_deviation: max_dev,
            argmax_terminal: best_terminal.0,
            argmax_initial: best_initial.0,
        })
    }
}

pub struct Theorem1Report {
    /// `KL(posterior_prefix || prior)`.
    pub constant: f64,
    pub max_deviation: f64,
    pub argmax_terminal: usize,
    pub argmax_initial: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, normal_vector, stream_rng, Stream};
    use itertools::Itertools;

    fn toy_model(d_m: usize, d_y: usize, k: usize, seed: u64) -> LinearGaussianModel {
        let mut rng = stream_rng(seed, Stream::Custom(0));
        let jacobians: Vec<DMatrix<f64>> =
            (0..k).map(|_| normal_matrix(&mut rng, d_y, d_m)).collect();
        let l = normal_matrix(&mut rng, d_m, d_m) * 0.4;
        let gamma = &l * l.transpose() + DMatrix::identity(d_m, d_m) * 0.5;
        let m_prior = normal_vector(&mut rng, d_m);
        LinearGaussianModel::new(jacobians, gamma, m_prior, 0.7).unwrap()
    }

    #[test]
    fn empty_design_gives_zero_eig() {
        let m = toy_model(4, 2, 3, 1);
        assert_eq!(m.exact_eig(&[false; 3]).unwrap(), 0.0);
        // cEIG with empty candidate and empty prefix is zero too
        let y = vec![DVector::zeros(2); 3];
        let c = m.conditional_eig(&[false; 3], &y, &[false; 3]).unwrap();
        assert!(c.abs() <= 1e-12);
    }

    #[test]
    fn scalar_case_matches_nested_monte_carlo() {
        // one parameter, one observation: EIG = 1/2 log(1 + s_p^2 j^2 / s_n^2)
        let j = DMatrix::from_element(1, 1, 1.3);
        let gamma = DMatrix::from_element(1, 1, 0.8);
        let m_prior = DVector::from_element(1, 0.2);
        let sigma = 0.5;
        let model = LinearGaussianModel::new(vec![j], gamma, m_prior, sigma).unwrap();
        let closed = model.exact_eig(&[true]).unwrap();
        let analytic = 0.5 * (1.0f64 + 0.8 * 1.3 * 1.3 / (0.5 * 0.5)).ln();
        assert!((closed - analytic).abs() <= 1e-12);

        // nested Monte Carlo oracle
        let mut rng = stream_rng(2, Stream::Custom(1));
        let n_outer = 1_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n_outer {
            let m: f64 = 0.2 + 0.8f64.sqrt() * normal_vector(&mut rng, 1)[0];
            let y = 1.3 * m + sigma * normal_vector(&mut rng, 1)[0];
            // posterior for this y
            let prec = 1.0 / 0.8 + 1.3 * 1.3 / (sigma * sigma);
            let var = 1.0 / prec;
            let mean = var * (1.3 * y / (sigma * sigma) + 0.2 / 0.8);
            // KL(N(mean,var) || N(0.2, 0.8))
            let kl = 0.5 * ((var / 0.8) - 1.0 + (0.8f64 / var).ln() + (mean - 0.2) * (mean - 0.2) / 0.8);
            acc += kl;
        }
        let mc = acc / n_outer as f64;
        // MC standard error ~ std/sqrt(N); generous 5-sigma band
        assert!(
            (mc - closed).abs() < 5e-3,
            "MC {mc} vs closed {closed}"
        );
    }

    #[test]
    fn posterior_covariance_contracts() {
        let model = toy_model(5, 3, 4, 3);
        let y: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_element(3, 0.3)).collect();
        let post = model.posterior(&[true, false, true, false], &y).unwrap();
        // Loewner: prior - posterior PSD
        let diff = &model.gamma_prior - &post.cov;
        let (vals, _) = crate::linalg::symmetric_eigen_desc(&diff);
        assert!(vals[vals.len() - 1] >= -1e-10, "not contracting: {}", vals[vals.len() - 1]);
    }

    #[test]
    fn eig_monotone_under_supersets_k5() {
        let model = toy_model(6, 2, 5, 4);
        let designs: Vec<Vec<bool>> = (0..32u32)
            .map(|mask| (0..5).map(|k| mask >> k & 1 == 1).collect())
            .collect();
        let eigs: Vec<f64> = designs
            .iter()
            .map(|d| model.exact_eig(d).unwrap())
            .collect();
        for (i, a) in designs.iter().enumerate() {
            for (j, b) in designs.iter().enumerate() {
                let subset = a.iter().zip(b).all(|(&x, &y)| !x || y);
                if subset {
                    assert!(
                        eigs[i] <= eigs[j] + 1e-10,
                        "EIG({a:?})={} > EIG({b:?})={}",
                        eigs[i],
                        eigs[j]
                    );
                }
            }
        }
    }

    #[test]
    fn conditional_eig_matches_sequential_shortcut() {
        // cross-check the direct expectation algebra against the
        // belief-propagation identity EIG = 1/2 logdet(I + J S_p J^T / s^2)
        let model = toy_model(5, 2, 4, 5);
        let prefix = vec![true, false, false, false];
        let mut rng = stream_rng(6, Stream::Custom(2));
        let y: Vec<DVector<f64>> = (0..4).map(|_| normal_vector(&mut rng, 2)).collect();
        let candidate = vec![false, false, true, true];
        let direct = model.conditional_eig_vs_belief(&prefix, &y, &candidate).unwrap();

        let belief = model.posterior(&prefix, &y).unwrap();
        let j = model.stacked_jacobian(&candidate);
        let s = DMatrix::identity(j.nrows(), j.nrows())
            + (&j * &belief.cov * j.transpose()) / (model.noise_std * model.noise_std);
        let shortcut = 0.5 * logdet_spd(&s).unwrap();
        assert!(
            (direct - shortcut).abs() <= 1e-10 * shortcut.abs(),
            "{direct} vs {shortcut}"
        );
    }

    #[test]
    fn theorem1_constant_shift_k4_d2() {
        let model = toy_model(6, 2, 4, 7);
        // observed prefix: time 0 selected with random data
        let prefix = vec![true, false, false, false];
        let mut rng = stream_rng(8, Stream::Custom(3));
        let y: Vec<DVector<f64>> = (0..4).map(|_| normal_vector(&mut rng, 2)).collect();
        // candidates: choose 2 of the remaining 3 times
        let candidates: Vec<Vec<bool>> = (1..4)
            .combinations(2)
            .map(|sel| (0..4).map(|k| sel.contains(&k)).collect())
            .collect();
        let report = model.theorem1_check(&prefix, &y, &candidates).unwrap();
        assert!(report.constant > 0.0);
        assert!(
            report.max_deviation <= 1e-8,
            "deviation {}",
            report.max_deviation
        );
        assert_eq!(report.argmax_terminal, report.argmax_initial);

        // i = 1: no prefix, constant 0, objectives identical
        let no_prefix = vec![false; 4];
        let report0 = model.theorem1_check(&no_prefix, &y, &candidates).unwrap();
        assert!(report0.constant.abs() <= 1e-12);
        assert!(report0.max_deviation <= 1e-10);
    }
}
