//! Pseudo-observations of survival probability at landmark times and the
//! stacked long-format design used to regress them on covariates.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::survival::{influence_at, validate_records, KmState, SubjectRecord};

/// Landmark times `t_1 < ... < t_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkGrid<T> {
    times: Vec<T>,
}

impl<T: Scalar> LandmarkGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidLandmarks("at least one landmark is required".into()));
        }
        if times.iter().any(|t| !t.is_finite() || *t <= T::zero()) {
            return Err(Error::InvalidLandmarks("landmarks must be finite and positive".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidLandmarks("landmarks must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Every landmark must lie strictly before the largest observed time.
    pub fn check_within(&self, max_time: T) -> Result<()> {
        match self.times.last() {
            Some(&last) if last < max_time => Ok(()),
            Some(&last) => Err(Error::InvalidLandmarks(format!(
                "landmark {last} is not before the largest observed time {max_time}"
            ))),
            None => Err(Error::InvalidLandmarks("empty".into())),
        }
    }
}

/// `count` equally spaced landmarks from `lo` to `hi` inclusive.
pub fn landmarks_equally_spaced<T: Scalar>(lo: T, hi: T, count: usize) -> Result<LandmarkGrid<T>> {
    if !(lo > T::zero()) || !(lo < hi) {
        return Err(Error::InvalidLandmarks(format!(
            "need 0 < lo < hi, got lo = {lo}, hi = {hi}"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidLandmarks("count must be at least 1".into()));
    }
    if count == 1 {
        return LandmarkGrid::new(vec![lo]);
    }
    let step = (hi - lo) / T::from_usize_exact(count - 1);
    let mut times: Vec<T> = (0..count)
        .map(|k| lo + T::from_usize_exact(k) * step)
        .collect();
    times[count - 1] = hi;
    LandmarkGrid::new(times)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * T::from_usize_exact(n - 1);
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::from_usize_exact(lo);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Default placement: `count` equally spaced landmarks between the 10th
/// and 90th percentiles of the observed event times.
pub fn default_landmarks<T: Scalar>(records: &[SubjectRecord<T>], count: usize) -> Result<LandmarkGrid<T>> {
    let mut events: Vec<T> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    if events.len() < 2 {
        return Err(Error::InvalidLandmarks("need at least two events to place landmarks".into()));
    }
    events.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let lo = quantile_sorted(&events, T::c(0.1));
    let hi = quantile_sorted(&events, T::c(0.9));
    landmarks_equally_spaced(lo, hi, count)
}

/// Pseudo-value `Y_ij` for one subject at one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservation<T> {
    pub subject_id: String,
    /// Zero-based landmark position.
    pub landmark_index: usize,
    pub value: T,
}

/// Exact jackknife pseudo-values `N S(t_j) - (N - 1) S^{-i}(t_j)`.
///
/// The leave-one-out curves are not refitted: removing subject `i` only
/// lowers the risk sets before its time by one and its own event count, so
/// each `S^{-i}(t_j)` is assembled from prefix products in O(1).
/// Output is subject-major in input order.
pub fn pseudo_exact<T: Scalar>(
    records: &[SubjectRecord<T>],
    grid: &LandmarkGrid<T>,
) -> Result<Vec<PseudoObservation<T>>> {
    validate_records(records)?;
    let n = records.len();
    if n < 2 {
        return Err(Error::JackknifeTooSmall);
    }

    let mut sorted: Vec<(T, bool)> = records.iter().map(|r| (r.time, r.event)).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // Distinct event times with risk-set size and death count.
    let mut ev_time: Vec<T> = Vec::new();
    let mut at_risk: Vec<usize> = Vec::new();
    let mut deaths: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let mut j = i;
        let mut d = 0;
        while j < n && sorted[j].0 == t {
            d += usize::from(sorted[j].1);
            j += 1;
        }
        if d > 0 {
            ev_time.push(t);
            at_risk.push(n - i);
            deaths.push(d);
        }
        i = j;
    }
    let k_total = ev_time.len();

    // full[m] = prod_{l<m} (1 - d_l / n_l); loo[m] uses n_l - 1.
    let mut full = vec![T::one(); k_total + 1];
    let mut loo = vec![T::one(); k_total + 1];
    for m in 0..k_total {
        let d = T::from_usize_exact(deaths[m]);
        let nr = T::from_usize_exact(at_risk[m]);
        full[m + 1] = full[m] * (T::one() - d / nr);
        loo[m + 1] = if at_risk[m] > 1 {
            loo[m] * (T::one() - d / (nr - T::one()))
        } else {
            T::nan()
        };
    }

    let events_upto: Vec<usize> = grid
        .times()
        .iter()
        .map(|&t| ev_time.partition_point(|&s| s <= t))
        .collect();

    let n_t = T::from_usize_exact(n);
    let n1 = T::from_usize_exact(n - 1);
    let mut out = Vec::with_capacity(n * grid.len());
    for r in records {
        let a = ev_time.partition_point(|&s| s < r.time);
        let tie = a < k_total && ev_time[a] == r.time;
        for (j, &kj) in events_upto.iter().enumerate() {
            let s_loo = if kj <= a {
                loo[kj]
            } else {
                let mut v = loo[a];
                let mut b = a;
                if tie {
                    let nr = at_risk[a] - 1;
                    let d = deaths[a] - usize::from(r.event);
                    if nr > 0 && d > 0 {
                        v = v * (T::one() - T::from_usize_exact(d) / T::from_usize_exact(nr));
                    }
                    b = a + 1;
                }
                if kj > b {
                    v = v * (full[kj] / full[b]);
                }
                v
            };
            out.push(PseudoObservation {
                subject_id: r.subject_id.clone(),
                landmark_index: j,
                value: n_t * full[kj] - n1 * s_loo,
            });
        }
    }
    Ok(out)
}

/// Grid positions of the landmarks inside a curve, rejecting landmarks that
/// are missing from the grid or lie past the last positive at-risk point.
pub fn landmark_positions<T: Scalar>(state: &KmState<T>, grid: &LandmarkGrid<T>) -> Result<Vec<usize>> {
    let last = state.last_positive_risk();
    grid.times()
        .iter()
        .map(|&t| {
            let h = state.grid_index(t).ok_or_else(|| {
                Error::InvalidLandmarks(format!("landmark {t} is not a point of the shared grid"))
            })?;
            match last {
                Some(l) if h <= l => Ok(h),
                _ => Err(Error::InvalidLandmarks(format!(
                    "landmark {t} lies beyond the last time with a positive risk set"
                ))),
            }
        })
        .collect()
}

/// Influence-function pseudo-values `S(t_j) + psi_i(t_j)` against a shared
/// curve. Output is subject-major in input order.
pub fn pseudo_federated<T: Scalar>(
    state: &KmState<T>,
    records: &[SubjectRecord<T>],
    grid: &LandmarkGrid<T>,
) -> Result<Vec<PseudoObservation<T>>> {
    let positions = landmark_positions(state, grid)?;
    let mut out = Vec::with_capacity(records.len() * grid.len());
    for r in records {
        let psi = influence_at(state, r, &positions)?;
        for (j, (&h, v)) in positions.iter().zip(psi).enumerate() {
            out.push(PseudoObservation {
                subject_id: r.subject_id.clone(),
                landmark_index: j,
                value: state.survival[h] + v,
            });
        }
    }
    Ok(out)
}

/// One row of the stacked regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow<T> {
    pub subject_id: String,
    /// Dense cluster index within its design (one cluster per subject).
    pub cluster: usize,
    pub landmark_index: usize,
    pub response: T,
    pub predictors: Vec<T>,
}

/// Long-format design: `J` rows per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Design<T> {
    pub columns: Vec<String>,
    pub rows: Vec<DesignRow<T>>,
    pub n_clusters: usize,
    /// Number of leading landmark-intercept columns.
    pub landmarks: usize,
}

impl<T: Scalar> Design<T> {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Empty design with the given schema.
    pub fn empty(columns: Vec<String>, landmarks: usize) -> Self {
        Self {
            columns,
            rows: Vec::new(),
            n_clusters: 0,
            landmarks,
        }
    }

    /// Row indices ordered by `(subject_id, landmark_index)`. Accumulating
    /// in this order makes fits independent of how rows were supplied.
    pub fn canonical_order(&self) -> Vec<usize> {
        fn key<T>(r: &DesignRow<T>) -> (&str, usize) {
            (r.subject_id.as_str(), r.landmark_index)
        }
        let sorted = self.rows.windows(2).all(|w| key(&w[0]) <= key(&w[1]));
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        if !sorted {
            order.sort_by(|&a, &b| key(&self.rows[a]).cmp(&key(&self.rows[b])));
        }
        order
    }
}

/// Column coding of the stacked model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpec {
    pub covariate_names: Vec<String>,
    /// Zero-based covariate indices that get landmark-specific deviations.
    pub time_varying: Vec<usize>,
}

impl DesignSpec {
    pub fn new(covariate_names: Vec<String>, time_varying: Vec<usize>) -> Result<Self> {
        let d = covariate_names.len();
        if let Some(&bad) = time_varying.iter().find(|&&k| k >= d) {
            return Err(Error::Config(format!("time-varying index {bad} out of range for {d} covariates")));
        }
        let mut seen = time_varying.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != time_varying.len() {
            return Err(Error::Config("duplicate time-varying covariate".into()));
        }
        Ok(Self {
            covariate_names,
            time_varying,
        })
    }

    /// Looks up time-varying covariates by name.
    pub fn with_names(covariate_names: Vec<String>, time_varying: &[String]) -> Result<Self> {
        let idx = time_varying
            .iter()
            .map(|name| {
                covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Config(format!("unknown covariate `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(covariate_names, idx)
    }

    /// Column names: landmark intercepts, covariates, then for each
    /// time-varying covariate its deviations at landmarks `2..=J` (the first
    /// landmark is the reference).
    pub fn columns(&self, landmarks: usize) -> Vec<String> {
        let mut cols: Vec<String> = (1..=landmarks).map(|j| format!("landmark_{j}")).collect();
        cols.extend(self.covariate_names.iter().cloned());
        for &k in &self.time_varying {
            for j in 2..=landmarks {
                cols.push(format!("{}:landmark_{j}", self.covariate_names[k]));
            }
        }
        cols
    }

    pub fn width(&self, landmarks: usize) -> usize {
        landmarks + self.covariate_names.len() + self.time_varying.len() * landmarks.saturating_sub(1)
    }
}

/// Stacks pseudo-values into the regression design. Rows are emitted in
/// the order subjects first appear in `pseudo`, `J` rows each.
pub fn build_design<T: Scalar>(
    pseudo: &[PseudoObservation<T>],
    records: &[SubjectRecord<T>],
    grid: &LandmarkGrid<T>,
    spec: &DesignSpec,
) -> Result<Design<T>> {
    let j_count = grid.len();
    let d = spec.covariate_names.len();
    let columns = spec.columns(j_count);
    let width = columns.len();

    let mut covs: HashMap<&str, &[T]> = HashMap::with_capacity(records.len());
    for r in records {
        if r.covariates.len() != d {
            return Err(Error::Dimension(format!(
                "subject {} has {} covariates, schema has {d}",
                r.subject_id,
                r.covariates.len()
            )));
        }
        if covs.insert(r.subject_id.as_str(), &r.covariates).is_some() {
            return Err(Error::SchemaMismatch(format!("duplicate subject {}", r.subject_id)));
        }
    }

    let mut cluster_of: HashMap<&str, usize> = HashMap::with_capacity(records.len());
    let mut seen_landmarks: Vec<Vec<bool>> = Vec::new();
    let mut rows = Vec::with_capacity(pseudo.len());
    for p in pseudo {
        if p.landmark_index >= j_count {
            return Err(Error::Dimension(format!("landmark index {} out of range", p.landmark_index)));
        }
        let z = covs.get(p.subject_id.as_str()).ok_or_else(|| {
            Error::SchemaMismatch(format!("no covariates for subject {}", p.subject_id))
        })?;
        let next = cluster_of.len();
        let cluster = *cluster_of.entry(p.subject_id.as_str()).or_insert(next);
        if cluster == seen_landmarks.len() {
            seen_landmarks.push(vec![false; j_count]);
        }
        if std::mem::replace(&mut seen_landmarks[cluster][p.landmark_index], true) {
            return Err(Error::SchemaMismatch(format!(
                "subject {} has two pseudo-values at landmark {}",
                p.subject_id,
                p.landmark_index + 1
            )));
        }
        let mut x = vec![T::zero(); width];
        x[p.landmark_index] = T::one();
        x[j_count..j_count + d].copy_from_slice(z);
        if p.landmark_index > 0 {
            for (slot, &k) in spec.time_varying.iter().enumerate() {
                x[j_count + d + slot * (j_count - 1) + p.landmark_index - 1] = z[k];
            }
        }
        rows.push(DesignRow {
            subject_id: p.subject_id.clone(),
            cluster,
            landmark_index: p.landmark_index,
            response: p.value,
            predictors: x,
        });
    }
    if cluster_of.len() != covs.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} subjects have covariates but {} have pseudo-values",
            covs.len(),
            cluster_of.len()
        )));
    }
    if let Some((c, _)) = seen_landmarks.iter().enumerate().find(|(_, s)| s.iter().any(|&b| !b)) {
        let id = cluster_of.iter().find(|(_, &v)| v == c).map(|(k, _)| k.to_string()).unwrap_or_default();
        return Err(Error::SchemaMismatch(format!("subject {id} is missing landmark pseudo-values")));
    }
    Ok(Design {
        columns,
        n_clusters: cluster_of.len(),
        rows,
        landmarks: j_count,
    })
}
