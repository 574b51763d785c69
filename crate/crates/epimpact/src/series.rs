//! Calendar-indexed rate series and the statistics shared by every other
//! module: alignment, period slicing, Pearson correlation and means.
//!
//! All types are immutable after construction and all operations are pure,
//! so values can be shared freely across worker threads.

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a geographic reporting unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationId(pub String);

impl LocationId {
    pub fn new(id: impl Into<String>) -> Self {
        LocationId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LocationId {
    fn from(s: &str) -> Self {
        LocationId(s.to_owned())
    }
}

/// Evenly spaced calendar index: `count` observations starting at `start`,
/// every `step_days` days. Dates are calendar dates at UTC midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateIndex {
    pub start: NaiveDate,
    pub step_days: u32,
    pub count: usize,
}

impl DateIndex {
    /// Weekly cadence, the default reporting granularity.
    pub fn weekly(start: NaiveDate, count: usize) -> Result<Self> {
        Self::new(start, 7, count)
    }

    pub fn new(start: NaiveDate, step_days: u32, count: usize) -> Result<Self> {
        if step_days == 0 {
            return Err(Error::Validation("date index step must be positive".into()));
        }
        if count == 0 {
            return Err(Error::Validation(
                "date index must contain at least one observation".into(),
            ));
        }
        Ok(DateIndex {
            start,
            step_days,
            count,
        })
    }

    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start + chrono::Duration::days(i as i64 * self.step_days as i64)
    }

    /// One past the last indexed date (half-open end of the covered range).
    pub fn end(&self) -> NaiveDate {
        self.date_at(self.count)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.count).map(|i| self.date_at(i))
    }

    /// Position of `date` in this index, if it falls exactly on a step.
    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        if offset < 0 || offset % self.step_days as i64 != 0 {
            return None;
        }
        let i = (offset / self.step_days as i64) as usize;
        (i < self.count).then_some(i)
    }

    /// Two indices are alignable iff they share the step and their starts
    /// differ by an integer multiple of it.
    pub fn alignable(&self, other: &DateIndex) -> bool {
        self.step_days == other.step_days
            && (other.start - self.start).num_days() % self.step_days as i64 == 0
    }
}

/// Role of a study period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodKind {
    PreIntervention,
    Intervention,
}

/// Half-open calendar interval `[start, end)` with a study role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPeriod {
    pub kind: PeriodKind,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl StudyPeriod {
    pub fn new(kind: PeriodKind, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start >= end {
            return Err(Error::Validation(format!(
                "study period [{start}, {end}) is empty"
            )));
        }
        Ok(StudyPeriod { kind, start, end })
    }

    pub fn pre_intervention(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        Self::new(PeriodKind::PreIntervention, start, end)
    }

    pub fn intervention(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        Self::new(PeriodKind::Intervention, start, end)
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date < self.end
    }

    /// The pre-intervention window must end before the intervention window
    /// starts when both belong to one study.
    pub fn validate_order(pre: &StudyPeriod, intervention: &StudyPeriod) -> Result<()> {
        if pre.end > intervention.start {
            return Err(Error::PeriodOrder(format!(
                "pre-intervention period ends {} but intervention starts {}",
                pre.end, intervention.start
            )));
        }
        Ok(())
    }
}

/// Disease-rate time series for one location (cases per 100,000 people).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    location: LocationId,
    index: DateIndex,
    values: Vec<f64>,
}

impl RateSeries {
    pub fn new(location: LocationId, index: DateIndex, values: Vec<f64>) -> Result<Self> {
        if values.len() != index.count {
            return Err(Error::DimensionMismatch(format!(
                "series for {location} has {} values but the index holds {} dates",
                values.len(),
                index.count
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!(
                "series for {location} contains a non-finite or negative rate ({bad})"
            )));
        }
        Ok(RateSeries {
            location,
            index,
            values,
        })
    }

    pub fn location(&self) -> &LocationId {
        &self.location
    }

    pub fn index(&self) -> &DateIndex {
        &self.index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Observations whose dates fall inside `period`.
    pub fn slice(&self, period: &StudyPeriod) -> Result<RateSeries> {
        let (first, count) = slice_bounds(&self.index, period)?;
        let index = DateIndex {
            start: self.index.date_at(first),
            step_days: self.index.step_days,
            count,
        };
        Ok(RateSeries {
            location: self.location.clone(),
            index,
            values: self.values[first..first + count].to_vec(),
        })
    }

    /// Arithmetic mean of the values.
    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

fn slice_bounds(index: &DateIndex, period: &StudyPeriod) -> Result<(usize, usize)> {
    let step = index.step_days as i64;
    // First observation at or after period.start.
    let offset = (period.start - index.start).num_days();
    let first = if offset <= 0 {
        0
    } else {
        ((offset + step - 1) / step) as usize
    };
    // Observations strictly before period.end.
    let span = (period.end - index.start).num_days();
    let past_end = if span <= 0 {
        0
    } else {
        (((span - 1) / step) + 1).min(index.count as i64) as usize
    };
    if first >= past_end {
        return Err(Error::EmptyOverlap(format!(
            "period [{}, {}) shares no observations with index starting {} ({} x {}d)",
            period.start, period.end, index.start, index.count, index.step_days
        )));
    }
    Ok((first, past_end - first))
}

/// Value sequences of `a` and `b` over the intersection of their indices.
pub fn align(a: &RateSeries, b: &RateSeries) -> Result<(Vec<f64>, Vec<f64>)> {
    if !a.index.alignable(&b.index) {
        return Err(Error::NonAlignable(format!(
            "steps/starts differ: {} every {}d vs {} every {}d",
            a.index.start, a.index.step_days, b.index.start, b.index.step_days
        )));
    }
    let start = a.index.start.max(b.index.start);
    let end = a.index.end().min(b.index.end());
    if start >= end {
        return Err(Error::EmptyOverlap(format!(
            "indices [{}, {}) and [{}, {}) do not intersect",
            a.index.start,
            a.index.end(),
            b.index.start,
            b.index.end()
        )));
    }
    let n = ((end - start).num_days() / a.index.step_days as i64) as usize;
    let ia = ((start - a.index.start).num_days() / a.index.step_days as i64) as usize;
    let ib = ((start - b.index.start).num_days() / b.index.step_days as i64) as usize;
    Ok((
        a.values[ia..ia + n].to_vec(),
        b.values[ib..ib + n].to_vec(),
    ))
}

/// Arithmetic mean of a value sequence (0 for an empty one).
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (denominator `n`), used by the correlation below.
fn central_moments(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    (m, var)
}

/// Sample Pearson correlation coefficient of two equal-length sequences.
///
/// Requires at least three observations and nonzero variance on both sides.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "correlation inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "correlation needs at least 3 observations, got {}",
            a.len()
        )));
    }
    let (ma, va) = central_moments(a);
    let (mb, vb) = central_moments(b);
    // Relative floor: a numerically constant sequence leaves variance at
    // round-off scale rather than exactly zero.
    let floor = |m: f64| (1e-10 * (1.0 + m.abs())).powi(2);
    if va <= floor(ma) || vb <= floor(mb) {
        return Err(Error::DegenerateInput(
            "correlation input has zero variance".into(),
        ));
    }
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Role of a location in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Target,
    Control,
}

/// A non-empty set of locations sharing one study role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationSet {
    role: Role,
    members: BTreeSet<LocationId>,
}

impl LocationSet {
    pub fn new(role: Role, members: impl IntoIterator<Item = LocationId>) -> Result<Self> {
        let members: BTreeSet<LocationId> = members.into_iter().collect();
        if members.is_empty() {
            return Err(Error::Validation(format!("{role:?} location set is empty")));
        }
        Ok(LocationSet { role, members })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn members(&self) -> &BTreeSet<LocationId> {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &LocationId) -> bool {
        self.members.contains(id)
    }

    /// Members in canonical (lexicographic) order.
    pub fn ordered(&self) -> Vec<LocationId> {
        self.members.iter().cloned().collect()
    }

    /// A location may appear in at most one role per study.
    pub fn validate_disjoint(targets: &LocationSet, controls: &LocationSet) -> Result<()> {
        if let Some(shared) = targets.members.intersection(&controls.members).next() {
            return Err(Error::Validation(format!(
                "location {shared} appears as both target and control"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn weekly_series(start: NaiveDate, values: Vec<f64>) -> RateSeries {
        let index = DateIndex::weekly(start, values.len()).unwrap();
        RateSeries::new(LocationId::new("loc"), index, values).unwrap()
    }

    #[test]
    fn align_partial_overlap() {
        // Weeks 1-10 vs weeks 6-15 -> five shared weeks (6-10).
        let start = date(2013, 1, 7);
        let a = weekly_series(start, (1..=10).map(f64::from).collect());
        let b = weekly_series(
            start + chrono::Duration::weeks(5),
            (6..=15).map(f64::from).collect(),
        );
        let (va, vb) = align(&a, &b).unwrap();
        assert_eq!(va, vec![6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(vb, vec![6.0, 7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn align_identical_series() {
        let a = weekly_series(date(2013, 1, 7), vec![1.0, 2.0, 3.0]);
        let (va, vb) = align(&a, &a).unwrap();
        assert_eq!(va, a.values());
        assert_eq!(vb, a.values());
    }

    #[test]
    fn align_rejects_mixed_steps() {
        let start = date(2013, 1, 7);
        let weekly = weekly_series(start, vec![1.0, 2.0, 3.0]);
        let daily_index = DateIndex::new(start, 1, 3).unwrap();
        let daily = RateSeries::new(LocationId::new("loc"), daily_index, vec![1.0, 2.0, 3.0])
            .unwrap();
        assert!(matches!(
            align(&weekly, &daily),
            Err(Error::NonAlignable(_))
        ));
    }

    #[test]
    fn align_rejects_disjoint_ranges() {
        let a = weekly_series(date(2013, 1, 7), vec![1.0, 2.0]);
        let b = weekly_series(date(2014, 1, 6), vec![1.0, 2.0]);
        assert!(matches!(align(&a, &b), Err(Error::EmptyOverlap(_))));
    }

    #[test]
    fn slice_tail_of_a_year() {
        // 52-week series; a period covering weeks 40-52 keeps 12 points.
        let start = date(2013, 1, 7);
        let s = weekly_series(start, (0..52).map(f64::from).collect());
        let period = StudyPeriod::intervention(
            start + chrono::Duration::weeks(40),
            start + chrono::Duration::weeks(52),
        )
        .unwrap();
        let sliced = s.slice(&period).unwrap();
        assert_eq!(sliced.len(), 12);
        assert_eq!(sliced.values()[0], 40.0);
        assert_eq!(*sliced.values().last().unwrap(), 51.0);
    }

    #[test]
    fn slice_covering_whole_index_is_identity() {
        let s = weekly_series(date(2013, 1, 7), vec![1.0, 2.0, 3.0]);
        let period =
            StudyPeriod::pre_intervention(date(2012, 1, 1), date(2015, 1, 1)).unwrap();
        assert_eq!(s.slice(&period).unwrap(), s);
    }

    #[test]
    fn slice_disjoint_period_errors() {
        let s = weekly_series(date(2013, 1, 7), vec![1.0, 2.0, 3.0]);
        let period = StudyPeriod::intervention(date(2014, 1, 6), date(2014, 3, 3)).unwrap();
        assert!(matches!(s.slice(&period), Err(Error::EmptyOverlap(_))));
    }

    #[test]
    fn nested_slices_equal_single_inner_slice() {
        let start = date(2013, 1, 7);
        let s = weekly_series(start, (0..30).map(f64::from).collect());
        let outer = StudyPeriod::pre_intervention(
            start + chrono::Duration::weeks(3),
            start + chrono::Duration::weeks(25),
        )
        .unwrap();
        let inner = StudyPeriod::pre_intervention(
            start + chrono::Duration::weeks(8),
            start + chrono::Duration::weeks(17),
        )
        .unwrap();
        let twice = s.slice(&outer).unwrap().slice(&inner).unwrap();
        let once = s.slice(&inner).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn pearson_exact_linear_relations() {
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pearson_hand_computed_value() {
        // Hand evaluation of the sample-correlation formula.
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.8,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pearson_degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mean_over_series() {
        let s = weekly_series(date(2013, 1, 7), vec![10.0, 20.0, 30.0]);
        assert_eq!(s.mean(), 20.0);
        let single = weekly_series(date(2013, 1, 7), vec![7.0]);
        assert_eq!(single.mean(), 7.0);
        let zeros = weekly_series(date(2013, 1, 7), vec![0.0, 0.0, 0.0]);
        assert_eq!(zeros.mean(), 0.0);
    }

    #[test]
    fn series_rejects_negative_and_non_finite_values() {
        let index = DateIndex::weekly(date(2013, 1, 7), 2).unwrap();
        assert!(RateSeries::new(LocationId::new("x"), index, vec![1.0, -0.5]).is_err());
        assert!(RateSeries::new(LocationId::new("x"), index, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn period_order_validation() {
        let pre = StudyPeriod::pre_intervention(date(2013, 1, 7), date(2013, 6, 3)).unwrap();
        let alpha = StudyPeriod::intervention(date(2013, 6, 3), date(2013, 9, 2)).unwrap();
        assert!(StudyPeriod::validate_order(&pre, &alpha).is_ok());
        assert!(matches!(
            StudyPeriod::validate_order(&alpha, &pre),
            Err(Error::PeriodOrder(_))
        ));
    }

    #[test]
    fn location_sets_must_be_disjoint() {
        let t = LocationSet::new(Role::Target, [LocationId::new("a"), LocationId::new("b")])
            .unwrap();
        let c = LocationSet::new(Role::Control, [LocationId::new("b")]).unwrap();
        assert!(LocationSet::validate_disjoint(&t, &c).is_err());
    }
}
