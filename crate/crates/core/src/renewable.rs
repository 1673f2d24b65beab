//! Sequential renewal of the pseudo-value GEE across sites.
//!
//! Each site sees only the previous state `(beta, I, M)` and its own rows.
//! The update solves `U_k(b) - I_{k-1} (b - beta_{k-1}) = 0` (score oriented
//! so its Jacobian is `-H`) with the matrix `I_{k-1} + H_k(beta_{k-1})`
//! held fixed across iterations.

use log::debug;

use crate::error::{Error, Result};
use crate::glm::{accumulate, glm_fit, GlmFit, Link, NewtonConfig};
use crate::linalg::{dot, sandwich, Cholesky, Matrix};
use crate::pseudo::Design;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RenewableState<T> {
    pub beta: Vec<T>,
    pub info: Matrix<T>,
    pub meat: Matrix<T>,
    pub sites_processed: usize,
    pub n_cum: usize,
    pub landmarks: Vec<T>,
    pub schema: Vec<String>,
    pub link: Link,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCoefficient<T> {
    pub covariate: String,
    pub landmark_index: usize,
    pub landmark: Option<T>,
    pub estimate: T,
    pub std_error: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T> {
    pub columns: Vec<String>,
    pub beta: Vec<T>,
    pub covariance: Matrix<T>,
    pub std_errors: Vec<T>,
    pub wald_z: Vec<T>,
    pub p_values: Vec<T>,
    pub effective: Vec<EffectiveCoefficient<T>>,
    pub n_subjects: usize,
    pub sites: usize,
}

impl<T: Scalar> FitReport<T> {
    pub fn coefficient(&self, name: &str) -> Option<(T, T)> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some((self.beta[j], self.std_errors[j]))
    }

    /// Effective coefficients of one time-varying covariate, in landmark order.
    pub fn effective_for(&self, covariate: &str) -> Vec<&EffectiveCoefficient<T>> {
        self.effective.iter().filter(|e| e.covariate == covariate).collect()
    }
}

/// Two-sided normal p-value for a Wald statistic.
pub fn two_sided_p<T: Scalar>(z: T) -> T {
    T::c(libm::erfc(z.abs().to_f64_lossy() / std::f64::consts::SQRT_2))
}

/// Assembles a report from an estimate, its information and meat.
pub fn report_from<T: Scalar>(
    columns: &[String],
    beta: &[T],
    info: &Matrix<T>,
    meat: &Matrix<T>,
    landmarks: &[T],
    n_subjects: usize,
    sites: usize,
) -> Result<FitReport<T>> {
    let covariance = sandwich(info, meat).map_err(|_| Error::SingularInformation)?;
    let std_errors: Vec<T> = covariance.diag().iter().map(|v| v.max(T::zero()).sqrt()).collect();
    let wald_z: Vec<T> = beta.iter().zip(&std_errors).map(|(&b, &s)| b / s).collect();
    let p_values = wald_z.iter().map(|&z| two_sided_p(z)).collect();
    let effective = effective_coefficients(columns, beta, &covariance, landmarks);
    Ok(FitReport {
        columns: columns.to_vec(),
        beta: beta.to_vec(),
        covariance,
        std_errors,
        wald_z,
        p_values,
        effective,
        n_subjects,
        sites,
    })
}

fn effective_coefficients<T: Scalar>(
    columns: &[String],
    beta: &[T],
    cov: &Matrix<T>,
    landmarks: &[T],
) -> Vec<EffectiveCoefficient<T>> {
    let mut out = Vec::new();
    for (b, name) in columns.iter().enumerate() {
        if name.contains(':') {
            continue;
        }
        let prefix = format!("{name}:landmark_");
        let devs: Vec<(usize, usize)> = columns
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.strip_prefix(&prefix).and_then(|j| j.parse::<usize>().ok()).map(|j| (j, k)))
            .collect();
        if devs.is_empty() {
            continue;
        }
        out.push(EffectiveCoefficient {
            covariate: name.clone(),
            landmark_index: 0,
            landmark: landmarks.first().copied(),
            estimate: beta[b],
            std_error: cov[(b, b)].max(T::zero()).sqrt(),
        });
        for (j, k) in devs {
            let var = cov[(b, b)] + cov[(k, k)] + T::c(2.0) * cov[(b, k)];
            out.push(EffectiveCoefficient {
                covariate: name.clone(),
                landmark_index: j - 1,
                landmark: landmarks.get(j - 1).copied(),
                estimate: beta[b] + beta[k],
                std_error: var.max(T::zero()).sqrt(),
            });
        }
    }
    out
}

/// Starts the chain from a local fit at the first site.
pub fn renew_init<T: Scalar>(
    design: &Design<T>,
    landmarks: &[T],
    link: Link,
    config: &NewtonConfig<T>,
) -> Result<RenewableState<T>> {
    if design.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fit = glm_fit(design, link, None, config)?;
    Ok(state_from_fit(fit, design, landmarks, link))
}

pub fn state_from_fit<T: Scalar>(fit: GlmFit<T>, design: &Design<T>, landmarks: &[T], link: Link) -> RenewableState<T> {
    RenewableState {
        beta: fit.beta,
        info: fit.information,
        meat: fit.meat,
        sites_processed: 1,
        n_cum: design.n_clusters,
        landmarks: landmarks.to_vec(),
        schema: design.columns.clone(),
        link,
    }
}

/// Incorporates one more site.
pub fn renew_update<T: Scalar>(
    state: &RenewableState<T>,
    design: &Design<T>,
    config: &NewtonConfig<T>,
) -> Result<RenewableState<T>> {
    if state.sites_processed == 0 {
        return Err(Error::Protocol("renewal before initialization".into()));
    }
    if design.columns != state.schema {
        return Err(Error::SchemaMismatch(format!(
            "site columns {:?} differ from {:?}",
            design.columns, state.schema
        )));
    }
    if design.landmarks != state.landmarks.len() {
        return Err(Error::SchemaMismatch(format!(
            "site uses {} landmarks, chain uses {}",
            design.landmarks,
            state.landmarks.len()
        )));
    }
    let mut next = state.clone();
    next.sites_processed += 1;
    if design.is_empty() {
        return Ok(next);
    }

    let link = state.link;
    let sign = link.orientation::<T>();
    let order = design.canonical_order();
    let prev = &state.beta;
    let at_prev = accumulate(design, &order, link, prev, true, false)?;
    let h_old = at_prev.hessian.expect("requested");
    let fixed = state.info.add(&h_old)?;
    let chol = Cholesky::new(&fixed).map_err(|_| Error::IndefiniteInformation)?;

    let mut beta = prev.clone();
    let mut score = at_prev.score;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let diff: Vec<T> = beta.iter().zip(prev).map(|(&b, &p)| b - p).collect();
        let pull = state.info.matvec(&diff)?;
        let g: Vec<T> = score.iter().zip(&pull).map(|(&u, &q)| sign * u - q).collect();
        let delta = chol.solve(&g);
        let decrement = dot(&g, &delta).abs();
        for (b, d) in beta.iter_mut().zip(&delta) {
            *b = *b + *d;
        }
        if decrement < config.tol {
            converged = true;
            break;
        }
        score = accumulate(design, &order, link, &beta, false, false)?.score;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            last: beta.iter().map(|b| b.to_f64_lossy()).collect(),
        });
    }
    debug!("site {} renewed in {iterations} iterations", next.sites_processed);

    let fin = accumulate(design, &order, link, &beta, true, true)?;
    next.info.add_assign(&fin.hessian.expect("requested"))?;
    next.meat.add_assign(&fin.meat.expect("requested"))?;
    next.beta = beta;
    next.n_cum += design.n_clusters;
    Ok(next)
}

/// Returns the estimate with sandwich covariance `I^-1 M I^-1`.
pub fn finalize<T: Scalar>(state: &RenewableState<T>) -> Result<FitReport<T>> {
    if state.sites_processed == 0 {
        return Err(Error::Protocol("finalize before initialization".into()));
    }
    report_from(
        &state.schema,
        &state.beta,
        &state.info,
        &state.meat,
        &state.landmarks,
        state.n_cum,
        state.sites_processed,
    )
}
