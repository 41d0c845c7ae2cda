//! Trace file parsing, serialization and train/test splitting.
//!
//! The on-disk format is line oriented UTF-8:
//!
//! ```text
//! #! trace v1
//! # free-form comment
//! 0.001 2C6
//! 0.002 5D7
//! ```
//!
//! Each data line is `<timestamp> <id>` with the timestamp in seconds. A bare
//! `<id>` line is an untimed event. Lines starting with `#` are comments and
//! blank lines are skipped. A `#! <kind> v<N>` line declares the format version;
//! files declaring a version other than [`FORMAT_VERSION`] are refused.
//! Gapped traces additionally allow `? <count>` sentinel lines.

use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trace::{Event, EventId, Trace};

pub const FORMAT_VERSION: u32 = 1;
pub const TRACE_EXTENSION: &str = "trace";

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Record {
    Event(Event),
    Gap(usize),
}

/// Parses a line-oriented record stream, validating the version header and
/// timestamp order. `allow_gaps` enables `? <count>` sentinels.
pub(crate) fn parse_records(text: &str, allow_gaps: bool) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    let mut last_ts = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if let Some(header) = line.strip_prefix("#!") {
            check_header(header, line_no)?;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let first = fields.next().unwrap_or_default();
        let second = fields.next();
        if fields.next().is_some() {
            return Err(malformed(line_no, "expected at most two fields"));
        }
        if first == "?" {
            if !allow_gaps {
                return Err(malformed(line_no, "gap sentinel in a plain trace"));
            }
            let count: usize = second
                .and_then(|s| s.parse().ok())
                .filter(|&n| n >= 1)
                .ok_or_else(|| malformed(line_no, "gap sentinel needs a positive count"))?;
            records.push(Record::Gap(count));
            continue;
        }
        let event = match second {
            Some(id) => {
                let ts: f64 = first
                    .parse()
                    .ok()
                    .filter(|t: &f64| t.is_finite() && *t >= 0.0)
                    .ok_or_else(|| malformed(line_no, "timestamp must be a finite number >= 0"))?;
                if ts < last_ts {
                    return Err(Error::NonMonotonicTimestamp { line: line_no });
                }
                last_ts = ts;
                Event::new(parse_id(id, line_no)?, Some(ts))
            }
            None => Event::new(parse_id(first, line_no)?, None),
        };
        records.push(Record::Event(event));
    }
    Ok(records)
}

fn parse_id(token: &str, line: usize) -> Result<EventId> {
    if !token.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(malformed(line, "id must be alphanumeric"));
    }
    EventId::new(token).ok_or_else(|| malformed(line, "empty id"))
}

fn check_header(header: &str, line: usize) -> Result<()> {
    let version = header
        .split_whitespace()
        .nth(1)
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| malformed(line, "version header must look like `#! <kind> v<N>`"))?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn malformed(line: usize, reason: &str) -> Error {
    Error::MalformedLine {
        line,
        reason: reason.to_string(),
    }
}

/// Parses a trace from a UTF-8 byte stream.
pub fn parse_trace<R: Read>(mut source: R, label: &str) -> Result<Trace> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData => malformed(0, "input is not valid UTF-8"),
            _ => Error::Io(e),
        })?;
    parse_trace_str(&text, label)
}

pub fn parse_trace_str(text: &str, label: &str) -> Result<Trace> {
    let events = parse_records(text, false)?
        .into_iter()
        .map(|r| match r {
            Record::Event(e) => e,
            Record::Gap(_) => unreachable!("gaps rejected by parser"),
        })
        .collect();
    Ok(Trace::new(label, events))
}

pub(crate) fn format_event(out: &mut String, event: &Event) {
    match event.timestamp {
        Some(t) => writeln!(out, "{t} {}", event.id),
        None => writeln!(out, "{}", event.id),
    }
    .expect("writing to a String cannot fail");
}

/// Serializes a trace; [`parse_trace_str`] of the output yields an equal trace.
pub fn format_trace(trace: &Trace) -> String {
    let mut out = format!("#! trace v{FORMAT_VERSION}\n");
    if !trace.label.is_empty() {
        writeln!(out, "# label {}", trace.label).unwrap();
    }
    for e in &trace.events {
        format_event(&mut out, e);
    }
    out
}

pub fn write_trace<W: Write>(mut sink: W, trace: &Trace) -> Result<()> {
    sink.write_all(format_trace(trace).as_bytes())?;
    Ok(())
}

/// Reads a trace file, labelling it with the file stem.
pub fn read_trace_file(path: &Path) -> Result<Trace> {
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    parse_trace(io::BufReader::new(file), &label)
}

/// Reads every `*.trace` file in `dir`, sorted by file name.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<Trace>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == TRACE_EXTENSION))
        .collect();
    paths.sort();
    crate::par::map(&paths, |p| read_trace_file(p))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_count: usize,
    pub test_count: usize,
    pub shuffle_seed: u64,
}

/// Deterministically shuffles and partitions traces into train and test pools.
pub fn split_traces(traces: &[Trace], spec: &SplitSpec) -> Result<(Vec<Trace>, Vec<Trace>)> {
    if spec.train_count < 2 {
        return Err(Error::InvalidSpec(
            "train_count must be at least 2".to_string(),
        ));
    }
    let needed = spec.train_count + spec.test_count;
    if needed > traces.len() {
        return Err(Error::InsufficientTraces {
            needed,
            available: traces.len(),
        });
    }
    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.shuffle_seed));
    let pick = |range: std::ops::Range<usize>| -> Vec<Trace> {
        order[range].iter().map(|&i| traces[i].clone()).collect()
    };
    Ok((
        pick(0..spec.train_count),
        pick(spec.train_count..needed),
    ))
}
