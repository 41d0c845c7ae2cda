//! Simplified timed-regular-expression miner for two property templates.
//!
//! * response: every `P` is answered by an `S` before the next `P`, and the
//!   answer arrives within the time bound;
//! * alternating: the trace restricted to `{P, S}` is `P S P S ... P S`,
//!   each pair within the time bound.
//!
//! Both readings apply to the whole trace and need at least one `P`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::{Dictionary, Event, EventId, Trace};

/// Standardized time runs from 0 to this value.
pub const TIME_SCALE: f64 = 1000.0;
/// Largest admissible standardized delay between `P` and its `S`.
pub const TIME_BOUND: f64 = 1000.0;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Response,
    Alternating,
}

impl Template {
    pub const ALL: [Template; 2] = [Template::Response, Template::Alternating];
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Response => "response",
            Template::Alternating => "alternating",
        })
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(Template::Response),
            "alternating" => Ok(Template::Alternating),
            other => Err(Error::InvalidSpec(format!("unknown template `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreInstance {
    pub template: Template,
    pub p: EventId,
    pub s: EventId,
    pub match_count: usize,
}

impl TreInstance {
    pub fn key(&self) -> (Template, &EventId, &EventId) {
        (self.template, &self.p, &self.s)
    }
}

/// Affine map of the timestamps onto `[0, TIME_SCALE]`.
pub fn standardize_time(trace: &Trace) -> Result<Trace> {
    let ts = trace.timestamps()?;
    let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if ts.is_empty() || hi <= lo {
        return Err(Error::DegenerateTimeSpan);
    }
    let scale = TIME_SCALE / (hi - lo);
    let events = trace
        .events
        .iter()
        .zip(&ts)
        .map(|(e, &t)| Event::at(e.id.clone(), ((t - lo) * scale).clamp(0.0, TIME_SCALE)))
        .collect();
    Ok(Trace::new(trace.label.clone(), events))
}

fn within_bound(p_time: Option<f64>, s_time: Option<f64>) -> bool {
    match (p_time, s_time) {
        (Some(a), Some(b)) => (0.0..=TIME_BOUND).contains(&(b - a)),
        _ => true,
    }
}

/// Number of `P -> S` segments if `(p, s)` satisfies `template` on `trace`.
pub fn match_pair(trace: &Trace, template: Template, p: &EventId, s: &EventId) -> Option<usize> {
    if p == s {
        return None;
    }
    let mut pending: Option<Option<f64>> = None;
    let mut count = 0;
    for e in &trace.events {
        if &e.id == p {
            if pending.is_some() {
                return None;
            }
            pending = Some(e.timestamp);
        } else if &e.id == s {
            match pending.take() {
                Some(pt) => {
                    if !within_bound(pt, e.timestamp) {
                        return None;
                    }
                    count += 1;
                }
                None if template == Template::Alternating => return None,
                None => {}
            }
        }
    }
    (pending.is_none() && count > 0).then_some(count)
}

/// Candidate alphabet of a trace: its distinct ids in first-occurrence order,
/// without OTHER.
pub fn trace_alphabet(trace: &Trace) -> Vec<EventId> {
    let mut seen = BTreeSet::new();
    let other = EventId::other();
    trace
        .ids()
        .filter(|id| **id != other && seen.insert((*id).clone()))
        .cloned()
        .collect()
}

fn mine_template(trace: &Trace, template: Template, alphabet: &[EventId]) -> Vec<TreInstance> {
    let present: BTreeSet<&EventId> = trace.ids().collect();
    let candidates: Vec<&EventId> = alphabet.iter().filter(|id| present.contains(id)).collect();
    let found = crate::par::map(&candidates, |p| {
        candidates
            .iter()
            .filter_map(|s| {
                match_pair(trace, template, p, s).map(|match_count| TreInstance {
                    template,
                    p: (*p).clone(),
                    s: (*s).clone(),
                    match_count,
                })
            })
            .collect::<Vec<_>>()
    });
    found.into_iter().flatten().collect()
}

pub fn mine_response(trace: &Trace) -> Vec<TreInstance> {
    mine_template(trace, Template::Response, &trace_alphabet(trace))
}

pub fn mine_alternating(trace: &Trace) -> Vec<TreInstance> {
    mine_template(trace, Template::Alternating, &trace_alphabet(trace))
}

/// Mined instances of one trace, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiningReport {
    pub trace_label: String,
    /// Candidate ids; their positions order the instances.
    pub alphabet: Vec<EventId>,
    pub instances: Vec<TreInstance>,
}

impl MiningReport {
    /// Both templates over `dict`'s known ids (or the trace's own ids when
    /// `dict` is `None`), after time standardization.
    pub fn mine(trace: &Trace, dict: Option<&Dictionary>) -> Result<Self> {
        let alphabet = match dict {
            Some(d) => d.ids().to_vec(),
            None => trace_alphabet(trace),
        };
        let standardized = standardize_time(trace)?;
        let mut instances = Vec::new();
        for template in Template::ALL {
            instances.extend(mine_template(&standardized, template, &alphabet));
        }
        let mut report = MiningReport {
            trace_label: trace.label.clone(),
            alphabet,
            instances,
        };
        report.canonicalize();
        Ok(report)
    }

    fn rank_of(&self) -> impl Fn(&TreInstance) -> (Template, usize, usize) + '_ {
        let pos: BTreeMap<&EventId, usize> = self.alphabet.iter().enumerate().map(|(i, id)| (id, i)).collect();
        move |inst| {
            let at = |id: &EventId| pos.get(id).copied().unwrap_or(usize::MAX);
            (inst.template, at(&inst.p), at(&inst.s))
        }
    }

    fn canonicalize(&mut self) {
        let mut instances = std::mem::take(&mut self.instances);
        {
            let key = self.rank_of();
            instances.sort_by_key(|i| key(i));
        }
        self.instances = instances;
    }

    pub fn keys(&self) -> BTreeSet<(Template, &EventId, &EventId)> {
        self.instances.iter().map(TreInstance::key).collect()
    }

    pub fn format(&self) -> String {
        let mut out = format!("#! mining v{REPORT_VERSION}\n# label {}\n", self.trace_label);
        let ids: Vec<&str> = self.alphabet.iter().map(EventId::as_str).collect();
        out.push_str(&format!("# alphabet {}\n", ids.join(",")));
        for i in &self.instances {
            out.push_str(&format!("{} {} {} {}\n", i.template, i.p, i.s, i.match_count));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut report = MiningReport {
            trace_label: String::new(),
            alphabet: Vec::new(),
            instances: Vec::new(),
        };
        let bad = |line: usize, reason: &str| Error::MalformedLine {
            line,
            reason: reason.to_string(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix("#!") {
                let version = rest
                    .trim()
                    .strip_prefix("mining v")
                    .and_then(|v| v.parse::<u32>().ok())
                    .ok_or_else(|| bad(line_no, "bad version header"))?;
                if version != REPORT_VERSION {
                    return Err(Error::VersionMismatch {
                        found: version,
                        expected: REPORT_VERSION,
                    });
                }
            } else if let Some(label) = line.strip_prefix("# label ") {
                report.trace_label = label.to_string();
            } else if let Some(ids) = line.strip_prefix("# alphabet") {
                report.alphabet = ids
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| EventId::new(s).ok_or_else(|| bad(line_no, "bad id")))
                    .collect::<Result<_>>()?;
            } else if line.is_empty() || line.starts_with('#') {
                continue;
            } else {
                let fields: Vec<&str> = line.split_whitespace().collect();
                let [t, p, s, c] = fields[..] else {
                    return Err(bad(line_no, "expected `<template> <P> <S> <count>`"));
                };
                let match_count: usize = c.parse().map_err(|_| bad(line_no, "bad count"))?;
                let p = EventId::new(p).ok_or_else(|| bad(line_no, "bad id"))?;
                let s = EventId::new(s).ok_or_else(|| bad(line_no, "bad id"))?;
                if p == s || match_count == 0 {
                    return Err(bad(line_no, "invalid instance"));
                }
                report.instances.push(TreInstance {
                    template: t.parse().map_err(|_| bad(line_no, "unknown template"))?,
                    p,
                    s,
                    match_count,
                });
            }
        }
        let unique: BTreeSet<_> = report.keys();
        if unique.len() != report.instances.len() {
            return Err(Error::InvalidSpec("duplicate instance in mining report".into()));
        }
        report.canonicalize();
        Ok(report)
    }
}

/// The `top_k` most frequently matched instances; ties keep canonical order.
pub fn rank_dominant(report: &MiningReport, top_k: usize) -> MiningReport {
    let key = report.rank_of();
    let mut instances = report.instances.clone();
    instances.sort_by(|a, b| b.match_count.cmp(&a.match_count).then_with(|| key(a).cmp(&key(b))));
    instances.truncate(top_k.max(1));
    MiningReport {
        trace_label: report.trace_label.clone(),
        alphabet: report.alphabet.clone(),
        instances,
    }
}

/// Percentage of `original`'s instances missing from `other`.
pub fn compare_reports(original: &MiningReport, other: &MiningReport) -> Result<f64> {
    let (lost, total) = lost_and_total(original, other);
    if total == 0 {
        return Err(Error::EmptyOriginal);
    }
    Ok(100.0 * lost as f64 / total as f64)
}

fn lost_and_total(original: &MiningReport, other: &MiningReport) -> (usize, usize) {
    let kept = other.keys();
    let orig = original.keys();
    (orig.iter().filter(|k| !kept.contains(*k)).count(), orig.len())
}

/// Percent decrease over several trace pairs, pooled by instance count.
pub fn pooled_decrease(pairs: &[(MiningReport, MiningReport)]) -> Result<f64> {
    let (lost, total) = pairs
        .iter()
        .map(|(o, x)| lost_and_total(o, x))
        .fold((0, 0), |(l, t), (a, b)| (l + a, t + b));
    if total == 0 {
        return Err(Error::EmptyOriginal);
    }
    Ok(100.0 * lost as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use regex::Regex;

    fn timed(spec: &[(&str, f64)]) -> Trace {
        Trace::new("t", spec.iter().map(|&(id, t)| Event::at(id, t)).collect())
    }

    fn id(s: &str) -> EventId {
        EventId::from(s)
    }

    fn inst(report: &[TreInstance], p: &str, s: &str) -> Option<usize> {
        report.iter().find(|i| i.p == id(p) && i.s == id(s)).map(|i| i.match_count)
    }

    #[test]
    fn standardization() {
        let t = standardize_time(&timed(&[("A", 2.0), ("B", 3.0), ("C", 4.0)])).unwrap();
        assert_eq!(t.timestamps().unwrap(), vec![0.0, 500.0, 1000.0]);
        assert_eq!(standardize_time(&t).unwrap(), t);
        assert!(matches!(
            standardize_time(&timed(&[("A", 5.0), ("B", 5.0)])),
            Err(Error::DegenerateTimeSpan)
        ));
    }

    #[test]
    fn response_examples() {
        let t = timed(&[("P", 0.0), ("S", 100.0), ("P", 200.0), ("S", 300.0)]);
        assert_eq!(inst(&mine_response(&t), "P", "S"), Some(2));
        let t = timed(&[("P", 0.0), ("P", 1.0), ("S", 2.0)]);
        assert_eq!(inst(&mine_response(&t), "P", "S"), None);
        let t = timed(&[("P", 0.0), ("S", 1500.0)]);
        assert_eq!(match_pair(&t, Template::Response, &id("P"), &id("S")), None);
    }

    #[test]
    fn alternating_examples() {
        let t = timed(&[("P", 0.0), ("X", 1.0), ("S", 2.0), ("P", 3.0), ("S", 4.0)]);
        assert_eq!(inst(&mine_alternating(&t), "P", "S"), Some(2));
        let t = timed(&[("P", 0.0), ("P", 1.0), ("S", 2.0), ("S", 3.0)]);
        assert_eq!(inst(&mine_alternating(&t), "P", "S"), None);
        let t = timed(&[("S", 0.0), ("P", 1.0), ("S", 2.0)]);
        assert_eq!(inst(&mine_alternating(&t), "P", "S"), None);
        assert_eq!(inst(&mine_response(&t), "P", "S"), Some(1));
    }

    #[test]
    fn ranking() {
        let report = MiningReport {
            trace_label: "x".into(),
            alphabet: vec![id("A"), id("B"), id("C")],
            instances: vec![
                TreInstance { template: Template::Response, p: id("A"), s: id("B"), match_count: 5 },
                TreInstance { template: Template::Response, p: id("A"), s: id("C"), match_count: 3 },
                TreInstance { template: Template::Response, p: id("B"), s: id("C"), match_count: 9 },
            ],
        };
        let top: Vec<usize> = rank_dominant(&report, 2).instances.iter().map(|i| i.match_count).collect();
        assert_eq!(top, vec![9, 5]);
        assert_eq!(rank_dominant(&report, 10).instances.len(), 3);

        let mut tied = report.clone();
        for i in &mut tied.instances {
            i.match_count = 1;
        }
        tied.instances.reverse();
        let order: Vec<(String, String)> = rank_dominant(&tied, 3)
            .instances
            .iter()
            .map(|i| (i.p.to_string(), i.s.to_string()))
            .collect();
        assert_eq!(order[0], ("A".to_string(), "B".to_string()));
        assert_eq!(order[2], ("B".to_string(), "C".to_string()));
    }

    #[test]
    fn comparison() {
        let t = timed(&[("A", 0.0), ("B", 1.0), ("C", 2.0), ("A", 3.0), ("B", 4.0), ("C", 5.0)]);
        let r = MiningReport::mine(&t, None).unwrap();
        assert!(!r.instances.is_empty());
        assert_eq!(compare_reports(&r, &r).unwrap(), 0.0);
        let empty = MiningReport { instances: vec![], ..r.clone() };
        assert_eq!(compare_reports(&r, &empty).unwrap(), 100.0);
        assert!(matches!(compare_reports(&empty, &r), Err(Error::EmptyOriginal)));
        assert_eq!(pooled_decrease(&[(r.clone(), r.clone()), (r.clone(), empty)]).unwrap(), 50.0);
    }

    #[test]
    fn report_text_round_trip() {
        let t = timed(&[("A", 0.0), ("B", 1.0), ("A", 2.0), ("B", 3.0), ("C", 4.0)]);
        let r = MiningReport::mine(&t, None).unwrap();
        let text = r.format();
        assert!(text.starts_with("#! mining v1\n"));
        assert!(text.contains("response A B 2\n"));
        assert_eq!(MiningReport::parse(&text).unwrap(), r);
        assert!(matches!(
            MiningReport::parse("#! mining v7\n"),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    fn symbols(trace: &Trace, p: &EventId, s: &EventId) -> String {
        trace
            .ids()
            .map(|i| if i == p { 'p' } else if i == s { 's' } else { 'x' })
            .collect()
    }

    fn arb_trace() -> impl Strategy<Value = Trace> {
        proptest::collection::vec(0u8..4, 2..40).prop_map(|v| {
            let names = ["A", "B", "C", "D"];
            Trace::new(
                "p",
                v.iter().enumerate().map(|(i, &k)| Event::at(names[k as usize], i as f64)).collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn templates_match_symbol_regexes(trace in arb_trace()) {
            let response = Regex::new("^[^p]*(p[^ps]*s[^p]*)+$").unwrap();
            let alternating = Regex::new("^[^ps]*(p[^ps]*s[^ps]*)+$").unwrap();
            let t = standardize_time(&trace).unwrap();
            let resp = mine_response(&t);
            let alt = mine_alternating(&t);
            for p in trace_alphabet(&t) {
                for s in trace_alphabet(&t) {
                    if p == s { continue; }
                    let sym = symbols(&t, &p, &s);
                    prop_assert_eq!(response.is_match(&sym), inst(&resp, p.as_str(), s.as_str()).is_some());
                    prop_assert_eq!(alternating.is_match(&sym), inst(&alt, p.as_str(), s.as_str()).is_some());
                    if inst(&alt, p.as_str(), s.as_str()).is_some() {
                        prop_assert!(inst(&resp, p.as_str(), s.as_str()).is_some());
                    }
                }
            }
        }

        #[test]
        fn mining_is_idempotent_under_standardization(trace in arb_trace()) {
            let once = standardize_time(&trace).unwrap();
            let twice = standardize_time(&once).unwrap();
            prop_assert_eq!(MiningReport::mine(&once, None).unwrap(), MiningReport::mine(&twice, None).unwrap());
        }

        #[test]
        fn unrelated_events_leave_alternation_alone(trace in arb_trace(), at in 0usize..40) {
            let at = at % (trace.len() + 1);
            let mut events = trace.events.clone();
            let t = events.get(at).or(events.last()).and_then(|e| e.timestamp).unwrap();
            events.insert(at, Event::at("Z", t));
            let widened = Trace::new("w", events);
            for p in trace_alphabet(&trace) {
                for s in trace_alphabet(&trace) {
                    prop_assert_eq!(
                        match_pair(&trace, Template::Alternating, &p, &s).is_some(),
                        match_pair(&widened, Template::Alternating, &p, &s).is_some()
                    );
                }
            }
        }
    }
}
