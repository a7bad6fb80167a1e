//! Raw clickstream parsers.
//!
//! Two source layouts are supported:
//! * yoochoose: `session_id,timestamp,item_id,category` with RFC 3339
//!   timestamps, no header row;
//! * diginetica: `sessionId;userId;itemId;timeframe;eventdate` with a header
//!   row. Event time is midnight UTC of `eventdate` plus `timeframe`
//!   milliseconds, which preserves the within-session `timeframe` order.

use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, NaiveDate};

use crate::corpus::RawEvent;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceFormat {
    Yoochoose,
    Diginetica,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yoochoose" => Ok(SourceFormat::Yoochoose),
            "diginetica" => Ok(SourceFormat::Diginetica),
            other => Err(Error::InvalidArgument(format!(
                "unknown source format `{other}` (expected yoochoose or diginetica)"
            ))),
        }
    }
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub events: Vec<RawEvent>,
    /// Rows skipped because they did not match the declared format.
    pub malformed: usize,
}

fn parse_yoochoose(line: &str) -> Option<RawEvent> {
    let mut fields = line.split(',');
    let session = fields.next()?.trim();
    let ts = fields.next()?.trim();
    let item = fields.next()?.trim();
    if session.is_empty() || item.is_empty() {
        return None;
    }
    let timestamp_ms = DateTime::parse_from_rfc3339(ts).ok()?.timestamp_millis();
    Some(RawEvent {
        session_key: session.to_string(),
        timestamp_ms,
        item_key: item.to_string(),
    })
}

fn parse_diginetica(line: &str) -> Option<RawEvent> {
    let fields: Vec<&str> = line.split(';').collect();
    if fields.len() != 5 {
        return None;
    }
    let session = fields[0].trim();
    let item = fields[2].trim();
    if session.is_empty() || item.is_empty() {
        return None;
    }
    let timeframe: i64 = fields[3].trim().parse().ok()?;
    let date = NaiveDate::parse_from_str(fields[4].trim(), "%Y-%m-%d").ok()?;
    let midnight = date.and_hms_opt(0, 0, 0)?.and_utc().timestamp_millis();
    Some(RawEvent {
        session_key: session.to_string(),
        timestamp_ms: midnight + timeframe,
        item_key: item.to_string(),
    })
}

/// Parse one data row (header rows do not parse). Lets callers filter a raw
/// dump line-by-line without re-serializing it.
pub fn parse_line(line: &str, format: SourceFormat) -> Option<RawEvent> {
    match format {
        SourceFormat::Yoochoose => parse_yoochoose(line),
        SourceFormat::Diginetica => parse_diginetica(line),
    }
}

/// Parse an in-memory line iterator; `diginetica` input starts with a header
/// row, which is skipped without counting as malformed.
pub fn ingest_lines<I, S>(lines: I, format: SourceFormat) -> Ingested
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = Ingested::default();
    let mut first = true;
    for line in lines {
        let line = line.as_ref();
        if first && format == SourceFormat::Diginetica {
            first = false;
            continue;
        }
        first = false;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            SourceFormat::Yoochoose => parse_yoochoose(line),
            SourceFormat::Diginetica => parse_diginetica(line),
        };
        match parsed {
            Some(event) => out.events.push(event),
            None => out.malformed += 1,
        }
    }
    out
}

pub fn ingest(path: &Path, format: SourceFormat) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|e| Error::io(path.display().to_string(), e))?);
    }
    Ok(ingest_lines(lines, format))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yoochoose_row_maps_fields() {
        let got = ingest_lines(["1,2014-04-07T10:51:09.277Z,214536502,0"], SourceFormat::Yoochoose);
        assert_eq!(got.malformed, 0);
        assert_eq!(got.events.len(), 1);
        let e = &got.events[0];
        assert_eq!(e.session_key, "1");
        assert_eq!(e.item_key, "214536502");
        // 2014-04-07T10:51:09.277Z
        assert_eq!(e.timestamp_ms % 1000, 277);
    }

    #[test]
    fn diginetica_row_maps_fields_and_skips_header() {
        let got = ingest_lines(
            [
                "sessionId;userId;itemId;timeframe;eventdate",
                "1;NA;81766;526309;2016-05-09",
            ],
            SourceFormat::Diginetica,
        );
        assert_eq!(got.malformed, 0);
        assert_eq!(got.events.len(), 1);
        let e = &got.events[0];
        assert_eq!(e.session_key, "1");
        assert_eq!(e.item_key, "81766");
        let midnight = NaiveDate::from_ymd_opt(2016, 5, 9)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
            .and_utc()
            .timestamp_millis();
        assert_eq!(e.timestamp_ms, midnight + 526_309);
    }

    #[test]
    fn timeframe_orders_within_session() {
        let got = ingest_lines(
            [
                "sessionId;userId;itemId;timeframe;eventdate",
                "7;NA;b;2000;2016-05-09",
                "7;NA;a;1000;2016-05-09",
            ],
            SourceFormat::Diginetica,
        );
        assert!(got.events[0].timestamp_ms > got.events[1].timestamp_ms);
    }

    #[test]
    fn empty_input_is_clean() {
        let got = ingest_lines(Vec::<&str>::new(), SourceFormat::Yoochoose);
        assert!(got.events.is_empty());
        assert_eq!(got.malformed, 0);
    }

    #[test]
    fn malformed_rows_are_counted_and_skipped() {
        let got = ingest_lines(
            [
                "1,2014-04-07T10:51:09.277Z,214536502,0",
                "not a row",
                "2,also-not-a-timestamp,5,0",
                "3,2014-04-07T10:52:00.000Z,214536503,0",
            ],
            SourceFormat::Yoochoose,
        );
        assert_eq!(got.events.len(), 2);
        assert_eq!(got.malformed, 2);
    }

    #[test]
    fn reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clicks.dat");
        std::fs::write(&path, "9,2014-04-01T00:00:00.000Z,42,0\n").unwrap();
        let got = ingest(&path, SourceFormat::Yoochoose).unwrap();
        assert_eq!(got.events.len(), 1);
        assert_eq!(got.events[0].session_key, "9");
        assert!(ingest(&dir.path().join("missing.dat"), SourceFormat::Yoochoose).is_err());
    }
}
