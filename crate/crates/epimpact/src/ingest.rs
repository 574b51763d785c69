//! Strict CSV ingestion and emission for the three on-disk schemas:
//! rates (`date,location,rate`), term frequencies (`date,term,frequency`,
//! long format, one file per location scope) and cluster assignments
//! (`term,cluster_id`).
//!
//! Parsing is strict: malformed rows, duplicate keys and calendar gaps are
//! rejected rather than repaired. Imputation is a study decision, not
//! library behaviour.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::{ClusterPartition, FeatureMatrix};
use crate::series::{DateIndex, LocationId, RateSeries};

fn parse_date(raw: &str, path: &Path, line: usize) -> Result<NaiveDate> {
    raw.parse().map_err(|_| {
        Error::Parse(format!(
            "{}:{line}: invalid ISO-8601 date {raw:?}",
            path.display()
        ))
    })
}

fn parse_number(raw: &str, what: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| {
        Error::Parse(format!(
            "{}:{line}: invalid {what} {raw:?}",
            path.display()
        ))
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse(format!(
            "{}:{line}: {what} must be a non-negative finite number, got {raw}",
            path.display()
        )));
    }
    Ok(v)
}

/// Build an evenly spaced index from sorted unique dates, rejecting gaps.
fn index_from_dates(dates: &[NaiveDate], what: &str, path: &Path) -> Result<DateIndex> {
    if dates.is_empty() {
        return Err(Error::Parse(format!("{}: no {what} rows", path.display())));
    }
    if dates.len() == 1 {
        return DateIndex::new(dates[0], 7, 1);
    }
    let step = (dates[1] - dates[0]).num_days();
    if step <= 0 {
        return Err(Error::Parse(format!(
            "{}: dates are not strictly increasing",
            path.display()
        )));
    }
    for w in dates.windows(2) {
        if (w[1] - w[0]).num_days() != step {
            return Err(Error::Parse(format!(
                "{}: gap or irregular cadence between {} and {} (expected {step}-day steps); \
                 missing observations are rejected rather than imputed",
                path.display(),
                w[0],
                w[1]
            )));
        }
    }
    DateIndex::new(dates[0], step as u32, dates.len())
}

/// Read per-location rate series. Duplicate (date, location) pairs and
/// calendar gaps are rejected.
pub fn read_rates(path: &Path) -> Result<BTreeMap<LocationId, RateSeries>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["date", "location", "rate"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!(
            "{}: expected header `date,location,rate`, got {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: BTreeMap<LocationId, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Parse(format!(
                "{}:{line}: expected 3 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let date = parse_date(&record[0], path, line)?;
        let location = LocationId::new(record[1].to_string());
        if record[1].is_empty() {
            return Err(Error::Parse(format!(
                "{}:{line}: empty location identifier",
                path.display()
            )));
        }
        let rate = parse_number(&record[2], "rate", path, line)?;
        if rows.entry(location.clone()).or_default().insert(date, rate).is_some() {
            return Err(Error::Parse(format!(
                "{}:{line}: duplicate observation for ({date}, {location})",
                path.display()
            )));
        }
    }
    let mut out = BTreeMap::new();
    for (location, by_date) in rows {
        let dates: Vec<NaiveDate> = by_date.keys().copied().collect();
        let index = index_from_dates(&dates, "rate", path)?;
        let values: Vec<f64> = by_date.values().copied().collect();
        out.insert(location.clone(), RateSeries::new(location, index, values)?);
    }
    if out.is_empty() {
        return Err(Error::Parse(format!("{}: no rate rows", path.display())));
    }
    Ok(out)
}

/// Write per-location rate series in the ingestion schema.
pub fn write_rates<'a>(
    path: &Path,
    series: impl IntoIterator<Item = &'a RateSeries>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["date", "location", "rate"])?;
    for s in series {
        for (date, value) in s.index().dates().zip(s.values()) {
            writer.write_record([
                date.to_string(),
                s.location().to_string(),
                format!("{value}"),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read a `term,cluster_id` assignment file.
pub fn read_clusters(path: &Path) -> Result<BTreeMap<String, u32>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["term", "cluster_id"] {
        return Err(Error::Parse(format!(
            "{}: expected header `term,cluster_id`",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let term = record[0].to_string();
        let cluster: u32 = record[1].parse().map_err(|_| {
            Error::Parse(format!(
                "{}:{line}: invalid cluster id {:?}",
                path.display(),
                &record[1]
            ))
        })?;
        if out.insert(term.clone(), cluster).is_some() {
            return Err(Error::Parse(format!(
                "{}:{line}: duplicate cluster assignment for term {term:?}",
                path.display()
            )));
        }
    }
    if out.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no cluster assignments",
            path.display()
        )));
    }
    Ok(out)
}

pub fn write_clusters<'a>(
    path: &Path,
    assignments: impl IntoIterator<Item = (&'a str, u32)>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["term", "cluster_id"])?;
    for (term, cluster) in assignments {
        writer.write_record([term, &cluster.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Read one location scope's term-frequency panel (`date,term,frequency`
/// long format) and partition its columns with the cluster assignment.
///
/// Terms keep their first-appearance order; the panel must be a complete
/// date-by-term grid.
pub fn read_features(path: &Path, clusters: &BTreeMap<String, u32>) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["date", "term", "frequency"] {
        return Err(Error::Parse(format!(
            "{}: expected header `date,term,frequency`",
            path.display()
        )));
    }
    let mut terms: Vec<String> = Vec::new();
    let mut term_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut cells: BTreeMap<NaiveDate, BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Parse(format!(
                "{}:{line}: expected 3 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let date = parse_date(&record[0], path, line)?;
        let term = record[1].to_string();
        let freq = parse_number(&record[2], "frequency", path, line)?;
        let col = *term_index.entry(term.clone()).or_insert_with(|| {
            terms.push(term.clone());
            terms.len() - 1
        });
        if cells.entry(date).or_default().insert(col, freq).is_some() {
            return Err(Error::Parse(format!(
                "{}:{line}: duplicate frequency for ({date}, {term})",
                path.display()
            )));
        }
    }
    let dates: Vec<NaiveDate> = cells.keys().copied().collect();
    let index = index_from_dates(&dates, "feature", path)?;
    let m = terms.len();
    let mut values = DMatrix::zeros(dates.len(), m);
    for (r, (date, row)) in cells.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Parse(format!(
                "{}: date {date} has {} of {m} terms; the panel must be a complete grid",
                path.display(),
                row.len()
            )));
        }
        for (&c, &v) in row {
            values[(r, c)] = v;
        }
    }

    // Columns grouped by ascending cluster id.
    let mut ids = BTreeSet::new();
    for term in &terms {
        let id = clusters.get(term).ok_or_else(|| {
            Error::Parse(format!(
                "{}: term {term:?} has no cluster assignment",
                path.display()
            ))
        })?;
        ids.insert(*id);
    }
    let groups: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| {
            (0..m)
                .filter(|&c| clusters[&terms[c]] == *id)
                .collect::<Vec<usize>>()
        })
        .collect();
    let partition = ClusterPartition::new(groups, m)?;
    FeatureMatrix::new(index, terms, values, partition)
}

/// Write one location scope's term panel in the ingestion schema.
pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["date", "term", "frequency"])?;
    for (r, date) in features.index().dates().enumerate() {
        for (c, term) in features.terms().iter().enumerate() {
            writer.write_record([
                date.to_string(),
                term.clone(),
                format!("{}", features.values()[(r, c)]),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}
