//! Subject records, the product-limit estimator, and the sequentially
//! updated Kaplan-Meier curve driven by its empirical influence function.
//!
//! Every curve lives on a fixed, strictly increasing time grid. Besides the
//! survival values, a [`KmState`] carries the running tallies needed to
//! evaluate the influence function of a new subject without revisiting
//! earlier ones:
//!
//! * `at_risk_fraction[g]`: fraction of processed subjects with `X > t_g`,
//! * `event_fraction[g]`: fraction with an event in `(t_{g-1}, t_g]`,
//! * `cum_hazard_integrand[g]`: `sum_{h<=g} e_h / (r_{h-1} r_h)`, the discrete
//!   form of `int_0^t lambda(u) / Y(u) du` built from those tallies.
//!
//! A subject whose time falls in `(t_{g-1}, t_g]` is attributed to grid
//! index `g` both for its own at-risk value and for the upper limit of the
//! hazard integral. With that convention the influence contributions of the
//! subjects that built a state average to zero exactly.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One subject's follow-up.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord<T> {
    pub subject_id: String,
    pub site_id: String,
    /// Observed time `min(T, C)`.
    pub time: T,
    /// `true` when the event was observed.
    pub event: bool,
    pub covariates: Vec<T>,
}

impl<T: Scalar> SubjectRecord<T> {
    pub fn new(
        subject_id: impl Into<String>,
        site_id: impl Into<String>,
        time: T,
        event: bool,
        covariates: Vec<T>,
    ) -> Self {
        Self {
            subject_id: subject_id.into(),
            site_id: site_id.into(),
            time,
            event,
            covariates,
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        if !self.time.is_finite() || self.time < T::zero() {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("time must be finite and >= 0, got {}", self.time),
            });
        }
        if let Some(j) = self.covariates.iter().position(|z| !z.is_finite()) {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("covariate {} is not finite", j + 1),
            });
        }
        Ok(())
    }
}

/// Validates a dataset and returns its covariate dimension.
pub fn validate_records<T: Scalar>(records: &[SubjectRecord<T>]) -> Result<usize> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let d = first.covariates.len();
    for (i, r) in records.iter().enumerate() {
        r.check(i)?;
        if r.covariates.len() != d {
            return Err(Error::InvalidRecord {
                index: i,
                reason: format!("expected {d} covariates, found {}", r.covariates.len()),
            });
        }
    }
    Ok(d)
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Checks that `grid` is nonempty, finite, and strictly increasing.
pub fn check_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidLandmarks("empty time grid".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidLandmarks("non-finite grid point".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidLandmarks("grid is not strictly increasing".into()));
    }
    Ok(())
}

/// Sorted union of two point sets with exact duplicates removed.
pub fn merge_points<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut all: Vec<T> = a.iter().chain(b).copied().collect();
    all.sort_by(cmp);
    all.dedup();
    all
}

/// Shared evaluation grid: `points` empirical quantiles (probabilities
/// `k / (points + 1)`, `k = 1..=points`) of `times`, merged with
/// `landmarks`. The sample maximum is left out: the curve there may be
/// exactly zero, and a streamed curve cannot move away from zero.
pub fn quantile_grid<T: Scalar>(times: &[T], landmarks: &[T], points: usize) -> Result<Vec<T>> {
    if times.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(cmp);
    let n = sorted.len();
    let quantiles: Vec<T> = (1..=points)
        .map(|k| {
            let rank = (n * k).div_ceil(points + 1).max(1);
            sorted[rank - 1]
        })
        .collect();
    let grid = merge_points(&quantiles, landmarks);
    check_grid(&grid)?;
    Ok(grid)
}

/// Survival curve plus the running tallies that make sequential updating
/// possible.
#[derive(Debug, Clone, PartialEq)]
pub struct KmState<T> {
    pub grid: Vec<T>,
    pub survival: Vec<T>,
    pub cum_hazard_integrand: Vec<T>,
    pub at_risk_fraction: Vec<T>,
    pub event_fraction: Vec<T>,
    pub n_processed: usize,
    /// Number of grid values adjusted by clamping or monotone projection
    /// during streaming updates.
    pub clamp_adjustments: usize,
}

/// Empirical influence of one subject on the curve, on the state's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceContribution<T> {
    pub subject_id: String,
    pub values: Vec<T>,
}

impl<T: Scalar> KmState<T> {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Grid index of a subject time: smallest `g` with `t_g >= time`, or
    /// `len()` when the time lies beyond the grid.
    pub fn interval_index(&self, time: T) -> usize {
        self.grid.partition_point(|&t| t < time)
    }

    /// Exact position of `t` on the grid.
    pub fn grid_index(&self, t: T) -> Option<usize> {
        self.grid.binary_search_by(|g| cmp(g, &t)).ok()
    }

    /// Step-function lookup of the survival curve at an arbitrary time.
    pub fn survival_at(&self, t: T) -> T {
        let k = self.grid.partition_point(|&g| g <= t);
        if k == 0 {
            T::one()
        } else {
            self.survival[k - 1]
        }
    }

    /// Last grid index with a positive at-risk fraction.
    pub fn last_positive_risk(&self) -> Option<usize> {
        self.at_risk_fraction.iter().rposition(|&r| r > T::zero())
    }

    fn refresh_cum_hazard(&mut self) {
        let mut acc = T::zero();
        let mut r_prev = T::one();
        for g in 0..self.grid.len() {
            let r = self.at_risk_fraction[g];
            let e = self.event_fraction[g];
            if e > T::zero() && r > T::zero() && r_prev > T::zero() {
                acc = acc + e / (r_prev * r);
            }
            self.cum_hazard_integrand[g] = acc;
            r_prev = r;
        }
    }

    /// Verifies the structural invariants of the state.
    pub fn check_invariants(&self) -> Result<()> {
        check_grid(&self.grid)?;
        let g = self.grid.len();
        for (name, v) in [
            ("survival", &self.survival),
            ("cum_hazard_integrand", &self.cum_hazard_integrand),
            ("at_risk_fraction", &self.at_risk_fraction),
            ("event_fraction", &self.event_fraction),
        ] {
            if v.len() != g {
                return Err(Error::Dimension(format!("{name} has {} entries, grid {g}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        if self
            .survival
            .iter()
            .any(|&s| s < T::zero() || s > T::one())
        {
            return Err(Error::Protocol("survival outside [0, 1]".into()));
        }
        if self.survival.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Protocol("survival increases along the grid".into()));
        }
        if self.cum_hazard_integrand.first().is_some_and(|&c| c < T::zero())
            || self.cum_hazard_integrand.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Protocol("cumulative hazard integrand decreases".into()));
        }
        Ok(())
    }
}

/// Product-limit estimate evaluated on an explicit grid, with tallies taken
/// from the same records.
pub fn km_on_grid<T: Scalar>(records: &[SubjectRecord<T>], grid: &[T]) -> Result<KmState<T>> {
    validate_records(records)?;
    check_grid(grid)?;

    let n = records.len();
    let n_t = T::from_usize_exact(n);
    let mut sorted: Vec<(T, bool)> = records.iter().map(|r| (r.time, r.event)).collect();
    // Events before censorings at tied times.
    sorted.sort_by(|a, b| cmp(&a.0, &b.0).then(b.1.cmp(&a.1)));

    let gl = grid.len();
    let mut survival = vec![T::one(); gl];
    let mut beyond = vec![0usize; gl];
    let mut events_in = vec![0usize; gl];

    // Walk distinct times; risk set at time s is {X >= s}.
    let mut s_cur = T::one();
    let mut gi = 0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let at_risk = n - i;
        let mut j = i;
        let mut deaths = 0usize;
        while j < n && sorted[j].0 == t {
            if sorted[j].1 {
                deaths += 1;
            }
            j += 1;
        }
        while gi < gl && grid[gi] < t {
            survival[gi] = s_cur;
            gi += 1;
        }
        if deaths > 0 {
            s_cur = s_cur * (T::one() - T::from_usize_exact(deaths) / T::from_usize_exact(at_risk));
        }
        i = j;
    }
    while gi < gl {
        survival[gi] = s_cur;
        gi += 1;
    }

    for &(t, ev) in &sorted {
        let g = grid.partition_point(|&x| x < t);
        // X > t_h for every h < g.
        if g > 0 {
            beyond[g - 1] += 1;
        }
        if ev && g < gl {
            events_in[g] += 1;
        }
    }
    // Suffix sums turn "last grid point below X" counts into "X > t_h" counts.
    let mut at_risk_fraction = vec![T::zero(); gl];
    let mut acc = 0usize;
    for h in (0..gl).rev() {
        acc += beyond[h];
        at_risk_fraction[h] = T::from_usize_exact(acc) / n_t;
    }
    let event_fraction = events_in
        .iter()
        .map(|&e| T::from_usize_exact(e) / n_t)
        .collect();

    let mut state = KmState {
        grid: grid.to_vec(),
        survival,
        cum_hazard_integrand: vec![T::zero(); gl],
        at_risk_fraction,
        event_fraction,
        n_processed: n,
        clamp_adjustments: 0,
    };
    state.refresh_cum_hazard();
    Ok(state)
}

/// Pooled Kaplan-Meier estimate on the grid of distinct observed times
/// merged with `landmarks`.
pub fn km_pooled<T: Scalar>(records: &[SubjectRecord<T>], landmarks: &[T]) -> Result<KmState<T>> {
    validate_records(records)?;
    let times: Vec<T> = records.iter().map(|r| r.time).collect();
    let grid = merge_points(&times, landmarks);
    km_on_grid(records, &grid)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Undefined {
    Error,
    Freeze,
}

fn influence_value<T: Scalar>(
    state: &KmState<T>,
    gi: usize,
    event: bool,
    h: usize,
    policy: Undefined,
    time: T,
) -> Result<T> {
    let s = state.survival[h];
    if policy == Undefined::Freeze && state.at_risk_fraction[h] <= T::zero() {
        return Ok(T::zero());
    }
    let bracket = if gi <= h {
        let own = if event {
            let r = state.at_risk_fraction[gi];
            if r <= T::zero() {
                if s == T::zero() {
                    return Ok(T::zero());
                }
                return Err(Error::EmptyRiskSet {
                    time: time.to_f64_lossy(),
                });
            }
            T::one() / r
        } else {
            T::zero()
        };
        own - state.cum_hazard_integrand[gi]
    } else {
        -state.cum_hazard_integrand[h]
    };
    Ok(-s * bracket)
}

/// Influence of `record` on the curve, evaluated on the state's grid points
/// `indices`.
pub(crate) fn influence_at<T: Scalar>(
    state: &KmState<T>,
    record: &SubjectRecord<T>,
    indices: &[usize],
) -> Result<Vec<T>> {
    if state.n_processed == 0 {
        return Err(Error::EmptyDataset);
    }
    record.check(0)?;
    let gi = state.interval_index(record.time);
    indices
        .iter()
        .map(|&h| influence_value(state, gi, record.event, h, Undefined::Error, record.time))
        .collect()
}

/// Empirical influence function of the current curve at `record`, on the
/// whole grid.
pub fn km_influence<T: Scalar>(
    state: &KmState<T>,
    record: &SubjectRecord<T>,
) -> Result<InfluenceContribution<T>> {
    let all: Vec<usize> = (0..state.len()).collect();
    Ok(InfluenceContribution {
        subject_id: record.subject_id.clone(),
        values: influence_at(state, record, &all)?,
    })
}

/// Absorbs one more subject: tallies are refreshed first, then the curve
/// moves by `psi / n` with `n` the new subject count. Values are clamped to
/// `[0, 1]` and projected onto nonincreasing sequences; grid points past the
/// last positive at-risk fraction stay frozen.
pub fn km_update<T: Scalar>(state: &KmState<T>, record: &SubjectRecord<T>) -> Result<KmState<T>> {
    let mut next = state.clone();
    km_update_in_place(&mut next, record)?;
    Ok(next)
}

/// In-place form of [`km_update`] used when streaming a whole site.
pub fn km_update_in_place<T: Scalar>(state: &mut KmState<T>, record: &SubjectRecord<T>) -> Result<()> {
    if state.n_processed == 0 {
        return Err(Error::EmptyDataset);
    }
    record.check(0)?;
    let n_new = state.n_processed + 1;
    let w = T::one() / T::from_usize_exact(n_new);
    let gi = state.interval_index(record.time);
    let gl = state.len();

    for h in 0..gl {
        let beyond = if h < gi { T::one() } else { T::zero() };
        let r = state.at_risk_fraction[h];
        state.at_risk_fraction[h] = r + (beyond - r) * w;
        let e = state.event_fraction[h];
        let hit = if record.event && h == gi { T::one() } else { T::zero() };
        state.event_fraction[h] = e + (hit - e) * w;
    }
    state.refresh_cum_hazard();
    state.n_processed = n_new;

    let mut prev = T::one();
    for h in 0..gl {
        let psi = influence_value(state, gi, record.event, h, Undefined::Freeze, record.time)?;
        // Fixed order of operations: identical inputs give identical bits.
        let raw = state.survival[h] + psi * w;
        let bounded = raw.max(T::zero()).min(T::one()).min(prev);
        if bounded != raw {
            state.clamp_adjustments += 1;
        }
        state.survival[h] = bounded;
        prev = bounded;
    }
    Ok(())
}

/// Streams `records` through [`km_update_in_place`] in order.
pub fn km_stream<T: Scalar>(state: &mut KmState<T>, records: &[SubjectRecord<T>]) -> Result<()> {
    for r in records {
        km_update_in_place(state, r)?;
    }
    Ok(())
}
