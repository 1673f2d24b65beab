//! Reference estimators: Cox proportional hazards and the pooled
//! pseudo-value GEE.

use std::cmp::Ordering;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::glm::{glm_fit, Link, NewtonConfig};
use crate::linalg::{max_abs, Cholesky, Matrix};
use crate::pseudo::{build_design, pseudo_exact, pseudo_federated, DesignSpec, LandmarkGrid};
use crate::renewable::{report_from, FitReport};
use crate::scalar::Scalar;
use crate::survival::{km_on_grid, quantile_grid, validate_records, SubjectRecord};

pub const DEFAULT_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit<T> {
    /// Covariate indices that were estimated; constant columns are dropped.
    pub columns: Vec<usize>,
    pub beta: Vec<T>,
    pub covariance: Matrix<T>,
    pub loglik: T,
    pub iterations: usize,
}

impl<T: Scalar> CoxFit<T> {
    /// Estimate and standard error of covariate `k`, if it was estimated.
    pub fn coefficient(&self, k: usize) -> Option<(T, T)> {
        let j = self.columns.iter().position(|&c| c == k)?;
        Some((self.beta[j], self.covariance[(j, j)].max(T::zero()).sqrt()))
    }
}

struct CoxEval<T> {
    loglik: T,
    score: Vec<T>,
    info: Matrix<T>,
}

/// Breslow partial likelihood, score and information. `order` sorts
/// subjects by decreasing time.
fn cox_eval<T: Scalar>(times: &[T], events: &[bool], z: &[Vec<T>], order: &[usize], beta: &[T]) -> CoxEval<T> {
    let p = beta.len();
    let mut s0 = T::zero();
    let mut s1 = vec![T::zero(); p];
    let mut s2 = Matrix::zeros(p, p);
    let mut loglik = T::zero();
    let mut score = vec![T::zero(); p];
    let mut info = Matrix::zeros(p, p);
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut end = i;
        while end < order.len() && times[order[end]] == t {
            let k = order[end];
            let eta = z[k].iter().zip(beta).fold(T::zero(), |a, (&x, &b)| a + x * b);
            let w = eta.exp();
            s0 = s0 + w;
            for a in 0..p {
                s1[a] = s1[a] + w * z[k][a];
            }
            s2.add_weighted_outer_upper(&z[k], w);
            end += 1;
        }
        let mut deaths = 0usize;
        for &k in &order[i..end] {
            if events[k] {
                deaths += 1;
                let eta = z[k].iter().zip(beta).fold(T::zero(), |a, (&x, &b)| a + x * b);
                loglik = loglik + eta;
                for a in 0..p {
                    score[a] = score[a] + z[k][a];
                }
            }
        }
        if deaths > 0 {
            let m = T::from_usize_exact(deaths);
            loglik = loglik - m * s0.ln();
            for a in 0..p {
                score[a] = score[a] - m * s1[a] / s0;
                for b in a..p {
                    let v = info[(a, b)] + m * (s2[(a, b)] / s0 - s1[a] * s1[b] / (s0 * s0));
                    info[(a, b)] = v;
                }
            }
        }
        i = end;
    }
    info.mirror_upper();
    CoxEval { loglik, score, info }
}

/// Cox regression by Newton–Raphson with step halving, Breslow ties.
pub fn cox_fit<T: Scalar>(records: &[SubjectRecord<T>]) -> Result<CoxFit<T>> {
    let d = validate_records(records)?;
    if !records.iter().any(|r| r.event) {
        return Err(Error::Config("Cox regression needs at least one event".into()));
    }
    let columns: Vec<usize> = (0..d)
        .filter(|&k| {
            let first = records[0].covariates[k];
            records.iter().any(|r| r.covariates[k] != first)
        })
        .collect();
    let p = columns.len();
    let n = records.len();
    let times: Vec<T> = records.iter().map(|r| r.time).collect();
    let events: Vec<bool> = records.iter().map(|r| r.event).collect();
    let means: Vec<T> = columns
        .iter()
        .map(|&k| records.iter().map(|r| r.covariates[k]).sum::<T>() / T::from_usize_exact(n))
        .collect();
    let z: Vec<Vec<T>> = records
        .iter()
        .map(|r| columns.iter().zip(&means).map(|(&k, &m)| r.covariates[k] - m).collect())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap_or(Ordering::Equal));

    let max_iter = 50;
    let mut beta = vec![T::zero(); p];
    let mut cur = cox_eval(&times, &events, &z, &order, &beta);
    let info0 = cur.info.diag();
    let mut iterations = 0;
    let mut converged = p == 0;
    while !converged && iterations < max_iter {
        iterations += 1;
        let chol = Cholesky::new(&cur.info).map_err(|_| Error::MonotoneLikelihood {
            iterations,
            loglik: cur.loglik.to_f64_lossy(),
        })?;
        let delta = chol.solve(&cur.score);
        let mut step = T::one();
        let mut next = None;
        for _ in 0..20 {
            let trial: Vec<T> = beta.iter().zip(&delta).map(|(&b, &dl)| b + step * dl).collect();
            let ev = cox_eval(&times, &events, &z, &order, &trial);
            if ev.loglik.is_finite() && ev.loglik >= cur.loglik - T::c(1e-12) * cur.loglik.abs() {
                next = Some((trial, ev));
                break;
            }
            step = step * T::c(0.5);
        }
        let Some((trial, ev)) = next else {
            break;
        };
        let change = (ev.loglik - cur.loglik).abs();
        beta = trial;
        cur = ev;
        if change < T::c(1e-9) && max_abs(&cur.score) < T::c(1e-6) * T::from_usize_exact(n) {
            converged = true;
        }
    }
    // Under separation the likelihood flattens as a coefficient diverges, so
    // the information collapses even though the score vanishes.
    let collapsed = cur.info.diag().iter().zip(&info0).any(|(&now, &start)| now < T::c(1e-8) * start);
    if !converged || collapsed {
        return Err(Error::MonotoneLikelihood {
            iterations,
            loglik: cur.loglik.to_f64_lossy(),
        });
    }
    let covariance = if p == 0 {
        Matrix::zeros(0, 0)
    } else {
        Cholesky::new(&cur.info).map_err(|_| Error::SingularInformation)?.inverse()
    };
    Ok(CoxFit { columns, beta, covariance, loglik: cur.loglik, iterations })
}

/// Pseudo-value construction for the pooled fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoMethod {
    /// Leave-one-out jackknife.
    Exact,
    /// `S + psi` on the quantile grid, as in the federated path.
    Influence,
}

impl FromStr for PseudoMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" | "jackknife" => Ok(Self::Exact),
            "influence" => Ok(Self::Influence),
            other => Err(Error::Config(format!("unknown pseudo-value method `{other}`"))),
        }
    }
}

/// Non-distributed pseudo-value GEE on all records.
pub fn pooled_pseudo_fit<T: Scalar>(
    records: &[SubjectRecord<T>],
    grid: &LandmarkGrid<T>,
    link: Link,
    spec: &DesignSpec,
    method: PseudoMethod,
    grid_points: usize,
) -> Result<FitReport<T>> {
    validate_records(records)?;
    let pseudo = match method {
        PseudoMethod::Exact => pseudo_exact(records, grid)?,
        PseudoMethod::Influence => {
            let times: Vec<T> = records.iter().map(|r| r.time).collect();
            let eval = quantile_grid(&times, grid.times(), grid_points)?;
            let state = km_on_grid(records, &eval)?;
            pseudo_federated(&state, records, grid)?
        }
    };
    let design = build_design(&pseudo, records, grid, spec)?;
    let fit = glm_fit(&design, link, None, &NewtonConfig::default())?;
    report_from(&design.columns, &fit.beta, &fit.information, &fit.meat, grid.times(), records.len(), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo::landmarks_equally_spaced;
    use crate::survival::km_pooled;

    fn rec(id: usize, t: f64, e: bool, z: Vec<f64>) -> SubjectRecord<f64> {
        SubjectRecord::new(id.to_string(), "s", t, e, z)
    }

    #[test]
    fn constant_covariate_gives_empty_fit() {
        let rs = vec![rec(0, 1.0, true, vec![0.0]), rec(1, 2.0, false, vec![0.0]), rec(2, 3.0, true, vec![0.0])];
        let fit = cox_fit(&rs).unwrap();
        assert!(fit.beta.is_empty() && fit.columns.is_empty());
        assert!(fit.coefficient(0).is_none());
    }

    #[test]
    fn two_subject_likelihood_matches_grid_search() {
        // Subject with z=1 fails at t=1 while both are at risk:
        // L(b) = e^b / (1 + e^b) is monotone, so add a third subject that
        // breaks separation.
        let rs = vec![
            rec(0, 1.0, true, vec![1.0]),
            rec(1, 2.0, true, vec![0.0]),
            rec(2, 3.0, true, vec![1.0]),
            rec(3, 4.0, false, vec![0.0]),
        ];
        let fit = cox_fit(&rs).unwrap();
        let ll = |b: f64| -> f64 {
            let w = |z: f64| (b * z).exp();
            (b - (w(1.0) + w(0.0) + w(1.0) + w(0.0)).ln())
                + (0.0 - (w(0.0) + w(1.0) + w(0.0)).ln())
                + (b - (w(1.0) + w(0.0)).ln())
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut b = -5.0;
        while b <= 5.0 {
            let v = ll(b);
            if v > best.0 {
                best = (v, b);
            }
            b += 1e-5;
        }
        assert!((fit.beta[0] - best.1).abs() < 1e-4, "{} vs {}", fit.beta[0], best.1);
        assert!((fit.loglik - best.0).abs() < 1e-8);
    }

    #[test]
    fn separation_is_reported() {
        let rs = vec![rec(0, 1.0, true, vec![1.0]), rec(1, 2.0, false, vec![0.0])];
        assert!(matches!(cox_fit(&rs), Err(Error::MonotoneLikelihood { .. })));
    }

    fn sample(n: usize) -> Vec<SubjectRecord<f64>> {
        (0..n)
            .map(|i| {
                let z1 = (i % 2) as f64;
                let z2 = ((i * 37) % 19) as f64 / 19.0;
                let u = ((i * 7919 + 13) % 997) as f64 / 997.0 + 0.0005;
                let t = -u.ln() / (0.1 * (0.4 * z1 - 0.5 * z2).exp());
                let c = 5.0 + ((i * 31) % 23) as f64;
                rec(i, t.min(c), t <= c, vec![z1, z2])
            })
            .collect()
    }

    #[test]
    fn centering_invariance() {
        let rs = sample(300);
        let a = cox_fit(&rs).unwrap();
        let shifted: Vec<_> = rs
            .iter()
            .map(|r| rec(r.subject_id.parse().unwrap(), r.time, r.event, vec![r.covariates[0] - 3.0, r.covariates[1] + 10.0]))
            .collect();
        let b = cox_fit(&shifted).unwrap();
        for (x, y) in a.beta.iter().zip(&b.beta) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_intercepts_reproduce_km() {
        let rs: Vec<_> = sample(200).into_iter().map(|r| rec(r.subject_id.parse().unwrap(), r.time, r.event, vec![])).collect();
        let grid = landmarks_equally_spaced(2.0, 12.0, 4).unwrap();
        let spec = DesignSpec::new(vec![], vec![]).unwrap();
        let rep = pooled_pseudo_fit(&rs, &grid, Link::Identity, &spec, PseudoMethod::Exact, DEFAULT_GRID_POINTS).unwrap();
        let km = km_pooled(&rs, grid.times()).unwrap();
        for (j, &t) in grid.times().iter().enumerate() {
            assert!((rep.beta[j] - km.survival_at(t)).abs() < 1e-10);
        }
    }
}
