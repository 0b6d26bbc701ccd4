//! Trajectory, label, event, and metric file formats.
//!
//! Trajectories travel as CSV (`frame,agent_id,x,y[,label]`) or as one JSON
//! object per line with the same fields. Events and per-agent scores are
//! always line-delimited JSON. All real values are rendered with nine
//! significant digits, so rewriting a parsed file reproduces it byte for
//! byte.

use std::fmt;
use std::io::{self, BufRead, Write};

use crowdwatch_core::anomaly::{AnomalyEvent, Scope};
use crowdwatch_core::{AgentId, Observation, Vec2};
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_flag(s: &str) -> Option<Format> {
        match s {
            "csv" => Some(Format::Csv),
            "jsonl" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

/// One parsed input row; the label column is carried for round-trips but
/// detection never reads it.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct TrajectoryRecord {
    pub frame: u64,
    pub agent_id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub label: Option<bool>,
}

impl TrajectoryRecord {
    pub fn observation(&self) -> Observation {
        Observation::new(self.frame, self.agent_id.as_str(), Vec2::new(self.x, self.y))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError {
        line,
        reason: reason.into(),
    }
}

/// Renders with nine significant digits, in plain decimal. Re-rendering the
/// parsed result yields the same string, which keeps file round-trips stable.
pub fn sig9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.00000000".into();
    }
    let places = |x: f64| (8 - x.abs().log10().floor() as i64).clamp(0, 40) as usize;
    let first = format!("{:.*}", places(v), v);
    let reparsed: f64 = first.parse().expect("decimal rendering parses back");
    if reparsed == 0.0 {
        return first;
    }
    let wanted = places(reparsed);
    if first.split('.').nth(1).map_or(0, str::len) == wanted {
        first
    } else {
        // Rounding crossed a decade (9.99.. -> 10.0..); re-render at the
        // precision of the value actually written.
        format!("{:.*}", wanted, reparsed)
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

// --- trajectory writing ---

pub const CSV_HEADER: &str = "frame,agent_id,x,y";
pub const CSV_HEADER_LABELED: &str = "frame,agent_id,x,y,label";

pub fn write_trajectories(
    out: &mut impl Write,
    format: Format,
    records: &[TrajectoryRecord],
) -> io::Result<()> {
    let labeled = records.iter().any(|r| r.label.is_some());
    if format == Format::Csv {
        writeln!(out, "{}", if labeled { CSV_HEADER_LABELED } else { CSV_HEADER })?;
    }
    for r in records {
        match format {
            Format::Csv => {
                write!(out, "{},{},{},{}", r.frame, r.agent_id, sig9(r.x), sig9(r.y))?;
                if labeled {
                    write!(out, ",{}", r.label.unwrap_or(false))?;
                }
                writeln!(out)?;
            }
            Format::Jsonl => {
                write!(
                    out,
                    "{{\"frame\":{},\"agent_id\":{},\"x\":{},\"y\":{}",
                    r.frame,
                    json_string(&r.agent_id),
                    sig9(r.x),
                    sig9(r.y)
                )?;
                if let Some(label) = r.label {
                    write!(out, ",\"label\":{label}")?;
                }
                writeln!(out, "}}")?;
            }
        }
    }
    Ok(())
}

// --- trajectory parsing ---

fn parse_bool(s: &str, line: usize) -> Result<bool, ParseError> {
    match s {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(err(line, format!("expected boolean label, got '{s}'"))),
    }
}

fn parse_csv_row(row: &str, labeled: bool, line: usize) -> Result<TrajectoryRecord, ParseError> {
    let fields: Vec<&str> = row.split(',').collect();
    let expected = if labeled { 5 } else { 4 };
    if fields.len() != expected {
        return Err(err(
            line,
            format!("expected {expected} fields, got {}", fields.len()),
        ));
    }
    let frame: u64 = fields[0]
        .parse()
        .map_err(|_| err(line, format!("invalid frame '{}'", fields[0])))?;
    let x: f64 = fields[2]
        .parse()
        .map_err(|_| err(line, format!("invalid x '{}'", fields[2])))?;
    let y: f64 = fields[3]
        .parse()
        .map_err(|_| err(line, format!("invalid y '{}'", fields[3])))?;
    let label = if labeled {
        Some(parse_bool(fields[4], line)?)
    } else {
        None
    };
    Ok(TrajectoryRecord {
        frame,
        agent_id: fields[1].to_string(),
        x,
        y,
        label,
    })
}

/// Streaming record reader over either format. Yields records with their
/// 1-based line numbers; consumes the CSV header on first read.
pub struct RecordReader<R: BufRead> {
    input: R,
    format: Format,
    line: usize,
    header: Option<bool>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(input: R, format: Format) -> Self {
        RecordReader {
            input,
            format,
            line: 0,
            header: None,
        }
    }

    fn next_line(&mut self) -> Result<Option<String>, ParseError> {
        let mut buf = String::new();
        loop {
            buf.clear();
            let n = self
                .input
                .read_line(&mut buf)
                .map_err(|e| err(self.line + 1, format!("read failed: {e}")))?;
            if n == 0 {
                return Ok(None);
            }
            self.line += 1;
            let trimmed = buf.trim_end_matches(['\n', '\r']);
            if !trimmed.is_empty() {
                return Ok(Some(trimmed.to_string()));
            }
        }
    }

    pub fn next_record(&mut self) -> Result<Option<(usize, TrajectoryRecord)>, ParseError> {
        if self.format == Format::Csv && self.header.is_none() {
            match self.next_line()? {
                None => return Ok(None),
                Some(row) => {
                    self.header = Some(match row.as_str() {
                        CSV_HEADER => false,
                        CSV_HEADER_LABELED => true,
                        other => {
                            return Err(err(
                                self.line,
                                format!("expected header '{CSV_HEADER}[,label]', got '{other}'"),
                            ))
                        }
                    });
                }
            }
        }
        let Some(row) = self.next_line()? else {
            return Ok(None);
        };
        let record = match self.format {
            Format::Csv => parse_csv_row(&row, self.header == Some(true), self.line)?,
            Format::Jsonl => serde_json::from_str(&row)
                .map_err(|e| err(self.line, format!("invalid record: {e}")))?,
        };
        Ok(Some((self.line, record)))
    }
}

/// Reads a whole trajectory file at once.
#[allow(dead_code)] // streaming paths use RecordReader directly
pub fn parse_trajectories(
    input: impl BufRead,
    format: Format,
) -> Result<Vec<TrajectoryRecord>, ParseError> {
    let mut reader = RecordReader::new(input, format);
    let mut records = Vec::new();
    while let Some((_, record)) = reader.next_record()? {
        records.push(record);
    }
    Ok(records)
}

// --- event and score records ---

fn scope_name(scope: Scope) -> &'static str {
    match scope {
        Scope::Local => "local",
        Scope::Global => "global",
    }
}

pub fn write_event(out: &mut impl Write, event: &AnomalyEvent) -> io::Result<()> {
    writeln!(
        out,
        "{{\"frame\":{},\"agent_id\":{},\"score\":{},\"threshold\":{},\"scope\":\"{}\"}}",
        event.frame,
        json_string(event.agent.as_str()),
        sig9(event.score),
        sig9(event.threshold),
        scope_name(event.scope)
    )
}

/// Per-agent score echo for `--verbose-scores`; the tracked position rides
/// along unless the run retains events only.
pub fn write_score(
    out: &mut impl Write,
    frame: u64,
    agent: &AgentId,
    score: f64,
    position: Option<Vec2>,
) -> io::Result<()> {
    write!(
        out,
        "{{\"frame\":{},\"agent_id\":{},\"score\":{}",
        frame,
        json_string(agent.as_str()),
        sig9(score)
    )?;
    if let Some(p) = position {
        write!(out, ",\"x\":{},\"y\":{}", sig9(p.x), sig9(p.y))?;
    }
    writeln!(out, "}}")
}

/// Minimal shape shared by event and score records; extra fields like
/// threshold or position are ignored on read.
#[derive(Debug, Deserialize)]
pub struct ScoreRecord {
    pub frame: u64,
    pub agent_id: String,
    pub score: f64,
}

pub fn parse_scores(input: impl BufRead) -> Result<Vec<ScoreRecord>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| err(i + 1, format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreRecord = serde_json::from_str(&line)
            .map_err(|e| err(i + 1, format!("invalid score record: {e}")))?;
        if !record.score.is_finite() {
            return Err(err(i + 1, "non-finite score".to_string()));
        }
        out.push(record);
    }
    Ok(out)
}

// --- label files ---

pub const LABEL_HEADER: &str = "frame,agent_id,label";

pub fn write_labels(
    out: &mut impl Write,
    rows: &[(u64, String, bool)],
) -> io::Result<()> {
    writeln!(out, "{LABEL_HEADER}")?;
    for (frame, agent, label) in rows {
        writeln!(out, "{frame},{agent},{label}")?;
    }
    Ok(())
}

pub fn parse_labels(input: impl BufRead) -> Result<Vec<(u64, String, bool)>, ParseError> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| err(i + 1, format!("read failed: {e}")))?;
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed.is_empty() {
            continue;
        }
        if !saw_header {
            if trimmed != LABEL_HEADER {
                return Err(err(i + 1, format!("expected header '{LABEL_HEADER}'")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(err(i + 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let frame: u64 = fields[0]
            .parse()
            .map_err(|_| err(i + 1, format!("invalid frame '{}'", fields[0])))?;
        let label = parse_bool(fields[2], i + 1)?;
        rows.push((frame, fields[1].to_string(), label));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_renders_nine_significant_digits() {
        assert_eq!(sig9(33.0 / 7.0), "4.71428571");
        assert_eq!(sig9(-33.0 / 7.0), "-4.71428571");
        assert_eq!(sig9(0.000123456789123), "0.000123456789");
        assert_eq!(sig9(0.0), "0.00000000");
        assert_eq!(sig9(-0.0), "0.00000000");
        assert_eq!(sig9(123456789.0), "123456789");
    }

    #[test]
    fn sig9_is_stable_across_reparse() {
        for &v in &[
            9.999999996,
            0.9999999996,
            -9.999999996,
            1.0,
            10.0,
            0.1,
            33.0 / 7.0,
            1e-12,
            98765.43215,
        ] {
            let first = sig9(v);
            let second = sig9(first.parse::<f64>().unwrap());
            assert_eq!(first, second, "unstable rendering for {v}");
        }
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let records = vec![
            TrajectoryRecord {
                frame: 0,
                agent_id: "a000".into(),
                x: 1.0 / 3.0,
                y: -2.0 / 7.0,
                label: None,
            },
            TrajectoryRecord {
                frame: 1,
                agent_id: "a001".into(),
                x: 0.0,
                y: 1234.56789,
                label: None,
            },
        ];
        let mut bytes = Vec::new();
        write_trajectories(&mut bytes, Format::Csv, &records).unwrap();
        let parsed = parse_trajectories(bytes.as_slice(), Format::Csv).unwrap();
        let mut again = Vec::new();
        write_trajectories(&mut again, Format::Csv, &parsed).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn jsonl_round_trip_preserves_labels() {
        let records = vec![TrajectoryRecord {
            frame: 7,
            agent_id: "walker".into(),
            x: 3.52169265,
            y: -2.91828183,
            label: Some(true),
        }];
        let mut bytes = Vec::new();
        write_trajectories(&mut bytes, Format::Jsonl, &records).unwrap();
        let parsed = parse_trajectories(bytes.as_slice(), Format::Jsonl).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn malformed_float_reports_its_line() {
        let text = "frame,agent_id,x,y\n0,a,0.0,1.0\n1,a,oops,1.0\n";
        let e = parse_trajectories(text.as_bytes(), Format::Csv).unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.reason.contains("oops"));
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let text = "time,id,x,y\n0,a,0.0,1.0\n";
        let e = parse_trajectories(text.as_bytes(), Format::Csv).unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn single_row_parses_to_one_observation() {
        let text = "frame,agent_id,x,y\n0,a,0.0,1.0\n";
        let records = parse_trajectories(text.as_bytes(), Format::Csv).unwrap();
        assert_eq!(records.len(), 1);
        let obs = records[0].observation();
        assert_eq!(obs.frame, 0);
        assert_eq!(obs.position, Vec2::new(0.0, 1.0));
    }

    #[test]
    fn score_parser_accepts_event_records() {
        let mut bytes = Vec::new();
        let event = AnomalyEvent {
            frame: 12,
            agent: AgentId::new("a007"),
            score: 3.5,
            threshold: 1.0,
            scope: Scope::Local,
        };
        write_event(&mut bytes, &event).unwrap();
        let scores = parse_scores(bytes.as_slice()).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].agent_id, "a007");
        assert_eq!(scores[0].score, 3.5);
    }

    #[test]
    fn labels_round_trip() {
        let rows = vec![(0, "a".to_string(), false), (1, "b".to_string(), true)];
        let mut bytes = Vec::new();
        write_labels(&mut bytes, &rows).unwrap();
        assert_eq!(parse_labels(bytes.as_slice()).unwrap(), rows);
    }
}
