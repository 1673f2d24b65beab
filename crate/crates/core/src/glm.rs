//! Link functions and the working-independence estimating equation
//! `U(beta) = Z' (y - mu) = 0` fitted by Newton iterations.
//!
//! `H = Z' diag(|dmu/deta|) Z` is used as the information matrix for every
//! link. For increasing links (identity, logit) it is minus the Jacobian of
//! `U`; for the survival-scale complementary log-log link `dmu/deta < 0`, so
//! it equals the Jacobian itself. [`Link::orientation`] carries that sign so
//! Newton steps and renewable updates can work with an oriented score whose
//! Jacobian is always `-H`.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, Cholesky, Matrix};
use crate::pseudo::Design;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Identity,
    Logit,
    /// `g(mu) = log(-log(mu))`, so `mu = exp(-exp(eta))` is a survival
    /// probability and coefficients are log hazard ratios.
    Cloglog,
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
            Link::Cloglog => "cloglog",
        }
    }

    /// `+1` when `mu` increases in `eta`, `-1` otherwise.
    pub fn orientation<T: Scalar>(self) -> T {
        match self {
            Link::Identity | Link::Logit => T::one(),
            Link::Cloglog => -T::one(),
        }
    }

    pub fn link<T: Scalar>(self, mu: T) -> T {
        match self {
            Link::Identity => mu,
            Link::Logit => (mu / (T::one() - mu)).ln(),
            Link::Cloglog => (-mu.ln()).ln(),
        }
    }

    /// Mean and `dmu/deta` at `eta`, after clamping the linear predictor.
    pub fn eval<T: Scalar>(self, eta: T) -> (T, T) {
        match self {
            Link::Identity => (eta, T::one()),
            Link::Logit => {
                let e = eta.max(T::c(-30.0)).min(T::c(30.0));
                let mu = T::one() / (T::one() + (-e).exp());
                (mu, mu * (T::one() - mu))
            }
            Link::Cloglog => {
                let u = eta.exp().max(T::c(1e-10)).min(T::c(30.0));
                let mu = (-u).exp();
                (mu, -u * mu)
            }
        }
    }

    pub fn inverse<T: Scalar>(self, eta: T) -> T {
        self.eval(eta).0
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Link::Identity),
            "logit" => Ok(Link::Logit),
            "cloglog" => Ok(Link::Cloglog),
            other => Err(Error::Config(format!("unknown link `{other}`"))),
        }
    }
}

impl std::fmt::Display for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `(mu, W)` for one linear predictor value.
pub fn link_eval<T: Scalar>(link: Link, eta: T) -> (T, T) {
    link.eval(eta)
}

/// Newton settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig<T> {
    pub tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl<T: Scalar> Default for NewtonConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::newton_tol(),
            max_iter: 25,
            max_halvings: 10,
        }
    }
}

/// Result of a local fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit<T> {
    pub beta: Vec<T>,
    /// `Z' diag(|W|) Z` at `beta`.
    pub information: Matrix<T>,
    /// `sum_c s_c s_c'` with `s_c = Z_c' (y_c - mu_c)` at `beta`.
    pub meat: Matrix<T>,
    pub n_clusters: usize,
    pub n_rows: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Sums over the rows of a design at one coefficient vector.
#[derive(Debug, Clone)]
pub(crate) struct Accumulated<T> {
    pub score: Vec<T>,
    pub hessian: Option<Matrix<T>>,
    pub meat: Option<Matrix<T>>,
}

/// Accumulates score, information and meat in the order given by `order`;
/// rows of one cluster must be adjacent in that order for the meat.
pub(crate) fn accumulate<T: Scalar>(
    design: &Design<T>,
    order: &[usize],
    link: Link,
    beta: &[T],
    want_hessian: bool,
    want_meat: bool,
) -> Result<Accumulated<T>> {
    let p = design.width();
    if beta.len() != p {
        return Err(Error::Dimension(format!(
            "coefficient vector has {} entries, design has {p} columns",
            beta.len()
        )));
    }
    let mut score = vec![T::zero(); p];
    let mut hessian = want_hessian.then(|| Matrix::zeros(p, p));
    let mut meat = want_meat.then(|| Matrix::zeros(p, p));
    let mut cluster_score = vec![T::zero(); p];
    let mut current: Option<usize> = None;

    for &i in order {
        let row = &design.rows[i];
        let x = &row.predictors;
        if x.len() != p {
            return Err(Error::Dimension(format!("row {i} has {} predictors, expected {p}", x.len())));
        }
        let eta = x.iter().zip(beta).fold(T::zero(), |a, (&xi, &b)| a + xi * b);
        let (mu, w) = link.eval(eta);
        if !mu.is_finite() || !w.is_finite() {
            return Err(Error::DivergentPredictor);
        }
        let resid = row.response - mu;
        for (s, &xi) in score.iter_mut().zip(x) {
            *s = *s + xi * resid;
        }
        if let Some(h) = hessian.as_mut() {
            h.add_weighted_outer_upper(x, w.abs());
        }
        if let Some(m) = meat.as_mut() {
            if current != Some(row.cluster) {
                if current.is_some() {
                    m.add_weighted_outer_upper(&cluster_score, T::one());
                }
                cluster_score.iter_mut().for_each(|v| *v = T::zero());
                current = Some(row.cluster);
            }
            for (s, &xi) in cluster_score.iter_mut().zip(x) {
                *s = *s + xi * resid;
            }
        }
    }
    if let Some(m) = meat.as_mut() {
        if current.is_some() {
            m.add_weighted_outer_upper(&cluster_score, T::one());
        }
        m.mirror_upper();
    }
    if let Some(h) = hessian.as_mut() {
        h.mirror_upper();
    }
    if score.iter().any(|s| !s.is_finite()) {
        return Err(Error::DivergentPredictor);
    }
    Ok(Accumulated { score, hessian, meat })
}

/// Score `U = Z'(y - mu)` and information `H = Z' diag(|W|) Z` at `beta`.
pub fn score_hessian<T: Scalar>(design: &Design<T>, link: Link, beta: &[T]) -> Result<(Vec<T>, Matrix<T>)> {
    let order = design.canonical_order();
    let acc = accumulate(design, &order, link, beta, true, false)?;
    Ok((acc.score, acc.hessian.expect("requested")))
}

/// Cluster meat `sum_c s_c s_c'` at `beta`.
pub fn cluster_meat<T: Scalar>(design: &Design<T>, link: Link, beta: &[T]) -> Result<Matrix<T>> {
    let order = design.canonical_order();
    let acc = accumulate(design, &order, link, beta, false, true)?;
    Ok(acc.meat.expect("requested"))
}

/// Default starting point: zeros, except that for the complementary log-log
/// link each landmark intercept starts at the link of its mean response
/// clamped to `[0.01, 0.99]`.
pub fn default_start<T: Scalar>(design: &Design<T>, link: Link) -> Vec<T> {
    let mut beta = vec![T::zero(); design.width()];
    if link == Link::Cloglog && design.landmarks > 0 {
        let j = design.landmarks;
        let mut sum = vec![T::zero(); j];
        let mut count = vec![0usize; j];
        for row in &design.rows {
            if row.landmark_index < j {
                sum[row.landmark_index] = sum[row.landmark_index] + row.response;
                count[row.landmark_index] += 1;
            }
        }
        for k in 0..j {
            let mean = if count[k] > 0 {
                sum[k] / T::from_usize_exact(count[k])
            } else {
                T::c(0.5)
            };
            beta[k] = link.link(mean.max(T::c(0.01)).min(T::c(0.99)));
        }
    }
    beta
}

fn oriented<T: Scalar>(score: &[T], sign: T) -> Vec<T> {
    score.iter().map(|&s| s * sign).collect()
}

fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Solves the estimating equation by Newton's method with step halving.
pub fn glm_fit<T: Scalar>(
    design: &Design<T>,
    link: Link,
    beta_init: Option<&[T]>,
    config: &NewtonConfig<T>,
) -> Result<GlmFit<T>> {
    let p = design.width();
    if design.len() < p {
        return Err(Error::Dimension(format!("{} rows for {p} coefficients", design.len())));
    }
    let order = design.canonical_order();
    let sign = link.orientation::<T>();
    let mut beta = match beta_init {
        Some(b) => b.to_vec(),
        None => default_start(design, link),
    };

    let mut acc = accumulate(design, &order, link, &beta, true, false)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let g = oriented(&acc.score, sign);
        let h = acc.hessian.as_ref().expect("requested");
        let chol = Cholesky::new(h).map_err(|_| Error::RankDeficient)?;
        let delta = chol.solve(&g);
        let decrement = g.iter().zip(&delta).fold(T::zero(), |a, (&x, &y)| a + x * y).abs();
        if decrement < config.tol {
            for (b, d) in beta.iter_mut().zip(&delta) {
                *b = *b + *d;
            }
            converged = true;
            break;
        }
        let base = norm2(&g);
        let mut step = T::one();
        let mut halvings = 0;
        loop {
            let trial: Vec<T> = beta.iter().zip(&delta).map(|(&b, &d)| b + d * step).collect();
            let next = accumulate(design, &order, link, &trial, true, false);
            let accept = match &next {
                Ok(a) => norm2(&a.score) <= base || halvings >= config.max_halvings,
                Err(_) => false,
            };
            if accept {
                beta = trial;
                acc = next?;
                break;
            }
            if halvings >= config.max_halvings {
                return Err(next.err().unwrap_or(Error::DivergentPredictor));
            }
            step = step * T::c(0.5);
            halvings += 1;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            last: beta.iter().map(|b| b.to_f64_lossy()).collect(),
        });
    }
    let fin = accumulate(design, &order, link, &beta, true, true)?;
    Ok(GlmFit {
        beta,
        information: fin.hessian.expect("requested"),
        meat: fin.meat.expect("requested"),
        n_clusters: design.n_clusters,
        n_rows: design.len(),
        converged,
        iterations,
    })
}

/// `max |U(beta)|`, for post-fit checks.
pub fn score_sup_norm<T: Scalar>(design: &Design<T>, link: Link, beta: &[T]) -> Result<T> {
    let order = design.canonical_order();
    Ok(max_abs(&accumulate(design, &order, link, beta, false, false)?.score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo::DesignRow;

    fn design_from(xs: &[Vec<f64>], ys: &[f64], clusters: &[usize]) -> Design<f64> {
        let p = xs[0].len();
        let rows = xs
            .iter()
            .zip(ys)
            .zip(clusters)
            .enumerate()
            .map(|(i, ((x, &y), &c))| DesignRow {
                subject_id: format!("{c:04}"),
                cluster: c,
                landmark_index: i,
                response: y,
                predictors: x.clone(),
            })
            .collect();
        let n_clusters = clusters.iter().max().map_or(0, |m| m + 1);
        Design {
            columns: (0..p).map(|j| format!("x{j}")).collect(),
            rows,
            n_clusters,
            landmarks: 0,
        }
    }

    #[test]
    fn link_values() {
        assert_eq!(link_eval(Link::Identity, 0.3), (0.3, 1.0));
        assert_eq!(link_eval(Link::Logit, 0.0), (0.5, 0.25));
        let (mu, w) = link_eval(Link::Cloglog, 0.0);
        assert!((mu - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w + (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!("CLOGLOG".parse::<Link>().unwrap(), Link::Cloglog);
        assert!("probit".parse::<Link>().is_err());
    }

    #[test]
    fn single_row_hand_case() {
        let d = design_from(&[vec![1.0, 2.0]], &[3.0], &[0]);
        let (u, h) = score_hessian(&d, Link::Identity, &[0.0, 0.0]).unwrap();
        assert_eq!(u, vec![3.0, 6.0]);
        assert_eq!(h, Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap());
    }

    #[test]
    fn exact_linear_response_has_zero_score() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64]).collect();
        let ys: Vec<f64> = (0..6).map(|i| 0.5 + 2.0 * i as f64).collect();
        let d = design_from(&xs, &ys, &[0, 1, 2, 3, 4, 5]);
        let (u, _) = score_hessian(&d, Link::Identity, &[0.5, 2.0]).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn identity_fit_is_least_squares() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, i as f64, ((i * i) % 5) as f64]).collect();
        let ys = [1.0, 2.5, 2.0, 4.5, 3.0, 6.0, 7.5, 7.0];
        let d = design_from(&xs, &ys, &[0, 0, 1, 1, 2, 2, 3, 3]);
        let fit = glm_fit(&d, Link::Identity, None, &NewtonConfig::default()).unwrap();
        // Normal equations solved independently.
        let mut xtx = Matrix::zeros(3, 3);
        let mut xty = vec![0.0; 3];
        for (x, &y) in xs.iter().zip(&ys) {
            for a in 0..3 {
                xty[a] += x[a] * y;
                for b in 0..3 {
                    xtx[(a, b)] += x[a] * x[b];
                }
            }
        }
        let ols = Cholesky::new(&xtx).unwrap().solve(&xty);
        for (b, o) in fit.beta.iter().zip(&ols) {
            assert!((b - o).abs() < 1e-10);
        }
        assert!(fit.information.max_abs_diff(&xtx) < 1e-12);
        assert_eq!(fit.meat.max_asymmetry(), 0.0);
    }

    #[test]
    fn rank_deficient_design_is_reported() {
        let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![1.0, 2.0, i as f64]).collect();
        let d = design_from(&xs, &[1.0, 2.0, 3.0, 4.0], &[0, 1, 2, 3]);
        assert!(matches!(glm_fit(&d, Link::Identity, None, &NewtonConfig::default()), Err(Error::RankDeficient)));
    }

    #[test]
    fn cloglog_fit_solves_the_score_equation() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, (i % 7) as f64 / 7.0]).collect();
        let ys: Vec<f64> = (0..40).map(|i| if (i * 37) % 11 < 6 { 1.0 } else { 0.0 }).collect();
        let clusters: Vec<usize> = (0..40).map(|i| i / 2).collect();
        let d = design_from(&xs, &ys, &clusters);
        let fit = glm_fit(&d, Link::Cloglog, None, &NewtonConfig::default()).unwrap();
        assert!(score_sup_norm(&d, Link::Cloglog, &fit.beta).unwrap() < 1e-6 * 40.0);
    }

    #[test]
    fn hessian_matches_finite_difference_jacobian() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![1.0, (i % 5) as f64 * 0.3, ((i * 7) % 3) as f64]).collect();
        let ys: Vec<f64> = (0..30).map(|i| ((i * 13) % 10) as f64 / 10.0).collect();
        let cl: Vec<usize> = (0..30).collect();
        let d = design_from(&xs, &ys, &cl);
        let beta = [-0.4, 0.3, 0.2];
        for link in [Link::Identity, Link::Logit, Link::Cloglog] {
            let (_, h) = score_hessian(&d, link, &beta).unwrap();
            let sign = link.orientation::<f64>();
            for k in 0..3 {
                let step = 1e-6;
                let mut up = beta;
                let mut dn = beta;
                up[k] += step;
                dn[k] -= step;
                let (su, _) = score_hessian(&d, link, &up).unwrap();
                let (sd, _) = score_hessian(&d, link, &dn).unwrap();
                for a in 0..3 {
                    let jac = -sign * (su[a] - sd[a]) / (2.0 * step);
                    assert!((jac - h[(a, k)]).abs() <= 1e-4 * h[(a, k)].abs().max(1.0), "{link} {a} {k}");
                }
            }
        }
    }

    #[test]
    fn row_permutation_invariance() {
        let xs: Vec<Vec<f64>> = (0..24).map(|i| vec![1.0, (i % 4) as f64, ((i * 5) % 7) as f64 / 7.0]).collect();
        let ys: Vec<f64> = (0..24).map(|i| ((i * 11) % 9) as f64 / 9.0).collect();
        let cl: Vec<usize> = (0..24).map(|i| i / 3).collect();
        let d = design_from(&xs, &ys, &cl);
        let fit = glm_fit(&d, Link::Logit, None, &NewtonConfig::default()).unwrap();
        let mut shuffled = d.clone();
        shuffled.rows.reverse();
        let fit2 = glm_fit(&shuffled, Link::Logit, None, &NewtonConfig::default()).unwrap();
        assert_eq!(fit.beta, fit2.beta);
        assert_eq!(fit.meat, fit2.meat);
        assert_eq!(fit.information, fit2.information);
    }

    #[test]
    fn f32_identity_fit() {
        let rows = (0..10)
            .map(|i| DesignRow {
                subject_id: i.to_string(),
                cluster: i,
                landmark_index: 0,
                response: 1.0f32 + 0.5 * i as f32,
                predictors: vec![1.0f32, i as f32],
            })
            .collect();
        let d = Design { columns: vec!["a".into(), "b".into()], rows, n_clusters: 10, landmarks: 0 };
        let fit = glm_fit(&d, Link::Identity, None, &NewtonConfig::default()).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-4 && (fit.beta[1] - 0.5).abs() < 1e-5);
    }
}
