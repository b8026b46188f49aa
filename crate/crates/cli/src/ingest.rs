//! CSV ingestion for real price series.
//!
//! Rows are sorted by timestamp and re-timed on a trading clock: row `i`
//! sits at `i / periods_per_year`, so consecutive daily closes are exactly
//! `1/252` apart whatever the calendar gap between them.

use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use log::warn;
use serde::Serialize;
use sigregime_core::streams::Stream;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    /// Timestamp column; defaults to the first column.
    pub time_column: Option<String>,
    /// Value columns; defaults to every other column.
    pub columns: Option<Vec<String>>,
    pub periods_per_year: f64,
    /// Largest tolerated share of unparseable rows.
    pub max_bad_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            time_column: None,
            columns: None,
            periods_per_year: 252.0,
            max_bad_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
    pub dropped_unparseable: usize,
    pub columns: Vec<String>,
    pub first: Option<String>,
    pub last: Option<String>,
}

/// A parsed, time-sorted price table.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub timestamps: Vec<NaiveDateTime>,
    pub labels: Vec<String>,
    pub stream: Stream,
    pub summary: IngestSummary,
}

impl PriceTable {
    /// Rows whose timestamp is at most `end`.
    pub fn rows_through(&self, end: NaiveDateTime) -> usize {
        self.timestamps.partition_point(|t| *t <= end)
    }
}

const MISSING: [&str; 6] = ["", "na", "nan", "null", "none", "."];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_utc())
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<PriceTable> {
    let file = std::fs::File::open(path).map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file, opts).map_err(|e| e.context(&path.display().to_string()))
}

pub fn ingest_reader(reader: impl Read, opts: &IngestOptions) -> Result<PriceTable> {
    if !(opts.periods_per_year > 0.0) {
        return Err(CliError::config("periods_per_year must be positive"));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::data(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("column {name:?} not in header {header:?}")))
    };
    let time_idx = match &opts.time_column {
        Some(c) => find(c)?,
        None => 0,
    };
    let value_idx: Vec<usize> = match &opts.columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&i| i != time_idx).collect(),
    };
    if value_idx.is_empty() {
        return Err(CliError::data("no value columns"));
    }

    let mut rows: Vec<(NaiveDateTime, String, Vec<f64>)> = Vec::new();
    let (mut read, mut missing, mut bad) = (0usize, 0usize, 0usize);
    for record in rdr.records() {
        read += 1;
        let Ok(record) = record else {
            bad += 1;
            continue;
        };
        if record.len() != header.len() {
            bad += 1;
            continue;
        }
        let Some(ts) = parse_timestamp(&record[time_idx]) else {
            bad += 1;
            continue;
        };
        let mut values = Vec::with_capacity(value_idx.len());
        let mut row_missing = false;
        let mut row_bad = false;
        for &i in &value_idx {
            let cell = &record[i];
            if MISSING.contains(&cell.to_ascii_lowercase().as_str()) {
                row_missing = true;
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => row_bad = true,
                }
            }
        }
        if row_bad {
            bad += 1;
        } else if row_missing {
            missing += 1;
        } else {
            rows.push((ts, record[time_idx].to_string(), values));
        }
    }
    if read > 0 && bad as f64 > opts.max_bad_fraction * read as f64 {
        return Err(CliError::data(format!(
            "{bad} of {read} rows are unparseable (limit {:.1}%)",
            100.0 * opts.max_bad_fraction
        )));
    }
    if bad > 0 {
        warn!("dropped {bad} unparseable rows");
    }
    if missing > 0 {
        warn!("dropped {missing} rows with missing values");
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::data(format!("duplicate timestamp {}", w[1].1)));
    }
    if rows.len() < 2 {
        return Err(CliError::data(format!("need at least two complete rows, found {}", rows.len())));
    }
    let times: Vec<f64> = (0..rows.len()).map(|i| i as f64 / opts.periods_per_year).collect();
    let data: Vec<Vec<f64>> = rows.iter().map(|r| r.2.clone()).collect();
    let stream = Stream::from_rows(times, &data).map_err(|e| CliError::data(e.to_string()))?;
    let summary = IngestSummary {
        rows_read: read,
        rows_kept: rows.len(),
        dropped_missing: missing,
        dropped_unparseable: bad,
        columns: value_idx.iter().map(|&i| header[i].clone()).collect(),
        first: rows.first().map(|r| r.1.clone()),
        last: rows.last().map(|r| r.1.clone()),
    };
    Ok(PriceTable {
        timestamps: rows.iter().map(|r| r.0).collect(),
        labels: rows.into_iter().map(|r| r.1).collect(),
        stream,
        summary,
    })
}

/// Canonical CSV: original timestamp, trading-clock time, then the values.
pub fn write_table(table: &PriceTable, out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    let mut header = vec!["timestamp".to_string(), "t".to_string()];
    header.extend(table.summary.columns.iter().cloned());
    w.write_record(&header).map_err(|e| CliError::io(e.to_string()))?;
    for i in 0..table.stream.len() {
        let mut rec = vec![table.labels[i].clone(), format!("{}", table.stream.times()[i])];
        rec.extend(table.stream.value(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| CliError::io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str) -> Result<PriceTable> {
        ingest_reader(text.as_bytes(), &IngestOptions::default())
    }

    #[test]
    fn three_rows_one_column() {
        let t = ingest("date,px\n2020-01-02,1.0\n2020-01-03,1.1\n2020-01-06,1.2\n").unwrap();
        assert_eq!(t.stream.len(), 3);
        assert_eq!(t.stream.dim(), 1);
    }

    #[test]
    fn daily_rows_are_one_trading_day_apart() {
        let t = ingest("date,px\n2020-01-06,1\n2020-01-02,2\n2020-01-03,3\n").unwrap();
        let times = t.stream.times();
        assert_eq!(times[1] - times[0], 1.0 / 252.0);
        assert_eq!(times[2], 2.0 / 252.0);
        // Sorted by date.
        assert_eq!(t.stream.value(0), &[2.0]);
    }

    #[test]
    fn duplicate_timestamp_is_named() {
        let e = ingest("date,px\n2020-01-02,1\n2020-01-03,2\n2020-01-02,3\n").unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.message.contains("2020-01-02"), "{e}");
    }

    #[test]
    fn missing_values_are_dropped_and_counted() {
        let t = ingest("date,a,b\n2020-01-02,1,2\n2020-01-03,,2\n2020-01-06,1,NA\n2020-01-07,1,2\n").unwrap();
        assert_eq!(t.summary.dropped_missing, 2);
        assert_eq!(t.stream.len(), 2);
    }

    #[test]
    fn unparseable_rows_over_the_limit_fail() {
        let mut text = String::from("date,px\n");
        for i in 0..99 {
            text.push_str(&format!("2020-01-01 00:{:02}:{:02},1.0\n", i / 60, i % 60));
        }
        text.push_str("garbage,1.0\n");
        // 1 bad row in 100 sits at the limit.
        assert_eq!(ingest(&text).unwrap().summary.dropped_unparseable, 1);
        text.push_str("2020-02-01,abc\n");
        assert_eq!(ingest(&text).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn column_selection() {
        let opts = IngestOptions {
            time_column: Some("when".into()),
            columns: Some(vec!["b".into()]),
            ..Default::default()
        };
        let t = ingest_reader("a,when,b\n5,2021-03-01,7\n6,2021-03-02,8\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.stream.values(), &[7.0, 8.0]);
        let opts = IngestOptions {
            columns: Some(vec!["zzz".into()]),
            ..Default::default()
        };
        assert!(ingest_reader("a,b\n2021-03-01,1\n".as_bytes(), &opts).is_err());
    }
}
