//! Traces with marked gaps of known length, and controlled loss injection.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{format_event, parse_records, Record, FORMAT_VERSION};
use crate::trace::{Event, Trace};

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Known(Vec<Event>),
    /// Number of consecutive missing events.
    Gap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gap {
    /// Index in the original trace of the first missing event.
    pub position: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    Scattered,
    Burst(usize),
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Scattered => f.write_str("scattered"),
            LossMode::Burst(n) => write!(f, "burst:{n}"),
        }
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "scattered" => Ok(LossMode::Scattered),
            Some(("burst", n)) => n
                .parse()
                .ok()
                .filter(|&n: &usize| n >= 1)
                .map(LossMode::Burst)
                .ok_or_else(|| Error::Config(format!("bad burst length in {s:?}"))),
            _ => Err(Error::Config(format!(
                "loss mode must be `scattered` or `burst:<len>`, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub fraction: f64,
    pub mode: LossMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GappedTrace {
    pub label: String,
    segments: Vec<Segment>,
    pub provenance: Option<LossSpec>,
}

impl GappedTrace {
    /// Normalizes the segments: adjacent runs and adjacent gaps merge, empty
    /// runs disappear. Zero-length gaps are rejected.
    pub fn new(label: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
        for seg in segments {
            match (out.last_mut(), seg) {
                (_, Segment::Gap(0)) => {
                    return Err(Error::InvalidSpec("gap length must be >= 1".into()))
                }
                (_, Segment::Known(evs)) if evs.is_empty() => {}
                (Some(Segment::Known(prev)), Segment::Known(evs)) => prev.extend(evs),
                (Some(Segment::Gap(prev)), Segment::Gap(n)) => *prev += n,
                (_, seg) => out.push(seg),
            }
        }
        Ok(GappedTrace {
            label: label.into(),
            segments: out,
            provenance: None,
        })
    }

    pub fn from_trace(trace: &Trace) -> Self {
        GappedTrace::new(trace.label.clone(), vec![Segment::Known(trace.events.clone())])
            .expect("no gaps")
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn gaps(&self) -> Vec<Gap> {
        let mut pos = 0;
        let mut gaps = Vec::new();
        for seg in &self.segments {
            match seg {
                Segment::Known(evs) => pos += evs.len(),
                Segment::Gap(n) => {
                    gaps.push(Gap {
                        position: pos,
                        missing: *n,
                    });
                    pos += n;
                }
            }
        }
        gaps
    }

    pub fn missing_count(&self) -> usize {
        self.gaps().iter().map(|g| g.missing).sum()
    }

    /// Length of the trace before loss.
    pub fn original_len(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Known(evs) => evs.len(),
                Segment::Gap(n) => *n,
            })
            .sum()
    }

    /// The surviving events only, as a shorter trace.
    pub fn to_lossy_trace(&self) -> Trace {
        let events = self
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Known(evs) => Some(evs.iter().cloned()),
                Segment::Gap(_) => None,
            })
            .flatten()
            .collect();
        Trace::new(self.label.clone(), events)
    }

    pub fn format(&self) -> String {
        let mut out = format!("#! gapped v{FORMAT_VERSION}\n");
        if let Some(p) = &self.provenance {
            writeln!(
                out,
                "# provenance fraction={} mode={} seed={}",
                p.fraction, p.mode, p.seed
            )
            .unwrap();
        }
        for seg in &self.segments {
            match seg {
                Segment::Known(evs) => evs.iter().for_each(|e| format_event(&mut out, e)),
                Segment::Gap(n) => writeln!(out, "? {n}").unwrap(),
            }
        }
        out
    }

    pub fn parse(text: &str, label: &str) -> Result<Self> {
        let segments = parse_records(text, true)?
            .into_iter()
            .map(|r| match r {
                Record::Event(e) => Segment::Known(vec![e]),
                Record::Gap(n) => Segment::Gap(n),
            })
            .collect();
        let mut g = GappedTrace::new(label, segments)?;
        g.provenance = text.lines().find_map(parse_provenance);
        Ok(g)
    }
}

fn parse_provenance(line: &str) -> Option<LossSpec> {
    let rest = line.trim().strip_prefix("# provenance ")?;
    let mut fraction = None;
    let mut mode = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=')? {
            ("fraction", v) => fraction = v.parse().ok(),
            ("mode", v) => mode = v.parse().ok(),
            ("seed", v) => seed = v.parse().ok(),
            _ => return None,
        }
    }
    Some(LossSpec {
        fraction: fraction?,
        mode: mode?,
        seed: seed?,
    })
}

/// Removes exactly `round(fraction * len)` events. The original trace is left
/// untouched for scoring.
pub fn inject_loss(trace: &Trace, spec: &LossSpec) -> Result<GappedTrace> {
    if !(0.0..1.0).contains(&spec.fraction) {
        return Err(Error::InvalidFraction(spec.fraction));
    }
    if trace.is_empty() {
        return Err(Error::InvalidSpec("cannot inject loss into an empty trace".into()));
    }
    let n = trace.len();
    let budget = (spec.fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let removed: BTreeSet<usize> = match spec.mode {
        LossMode::Scattered => sample(&mut rng, n, budget).into_iter().collect(),
        LossMode::Burst(len) => burst_positions(&mut rng, n, budget, len),
    };
    debug_assert_eq!(removed.len(), budget);

    let segments = trace
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if removed.contains(&i) {
                Segment::Gap(1)
            } else {
                Segment::Known(vec![e.clone()])
            }
        })
        .collect();
    let mut g = GappedTrace::new(trace.label.clone(), segments)?;
    g.provenance = Some(*spec);
    Ok(g)
}

/// Picks contiguous runs of `len` free positions until `budget` are taken.
fn burst_positions(rng: &mut ChaCha8Rng, n: usize, budget: usize, len: usize) -> BTreeSet<usize> {
    let mut removed = BTreeSet::new();
    let mut attempts = 0;
    while removed.len() < budget {
        let run = len.min(budget - removed.len());
        let start = rng.gen_range(0..=n - run);
        if (start..start + run).all(|p| !removed.contains(&p)) {
            removed.extend(start..start + run);
            continue;
        }
        attempts += 1;
        if attempts > 64 * n {
            // Too fragmented for whole runs; finish with single free positions.
            let free: Vec<usize> = (0..n).filter(|p| !removed.contains(p)).collect();
            let need = budget - removed.len();
            removed.extend(sample(rng, free.len(), need).into_iter().map(|i| free[i]));
        }
    }
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn long_trace(n: usize) -> Trace {
        Trace::new(
            "t",
            (0..n)
                .map(|i| Event::at(["A", "B", "C"][i % 3], i as f64 * 0.001))
                .collect(),
        )
    }

    #[test]
    fn zero_fraction_is_identity() {
        let t = long_trace(50);
        let spec = LossSpec {
            fraction: 0.0,
            mode: LossMode::Scattered,
            seed: 1,
        };
        let g = inject_loss(&t, &spec).unwrap();
        assert!(g.gaps().is_empty());
        assert_eq!(g.to_lossy_trace(), t);
    }

    #[test]
    fn quarter_loss_removes_exactly_250_of_1000() {
        let t = long_trace(1000);
        for mode in [LossMode::Scattered, LossMode::Burst(7)] {
            let spec = LossSpec {
                fraction: 0.25,
                mode,
                seed: 3,
            };
            let g = inject_loss(&t, &spec).unwrap();
            assert_eq!(g.missing_count(), 250);
            assert_eq!(g.to_lossy_trace().len(), 750);
            assert_eq!(g.original_len(), 1000);
            assert_eq!(g, inject_loss(&t, &spec).unwrap());
        }
    }

    #[test]
    fn invalid_fraction() {
        let t = long_trace(10);
        for f in [-0.1, 1.0, f64::NAN] {
            let spec = LossSpec {
                fraction: f,
                mode: LossMode::Scattered,
                seed: 0,
            };
            assert!(matches!(inject_loss(&t, &spec), Err(Error::InvalidFraction(_))));
        }
    }

    #[test]
    fn segments_normalize() {
        let g = GappedTrace::new(
            "g",
            vec![
                Segment::Gap(1),
                Segment::Gap(2),
                Segment::Known(vec![]),
                Segment::Known(vec![Event::untimed("A")]),
                Segment::Known(vec![Event::untimed("B")]),
            ],
        )
        .unwrap();
        assert_eq!(g.segments().len(), 2);
        assert_eq!(g.gaps(), vec![Gap { position: 0, missing: 3 }]);
        assert!(GappedTrace::new("g", vec![Segment::Gap(0)]).is_err());
    }

    #[test]
    fn loss_mode_parsing() {
        assert_eq!("scattered".parse::<LossMode>().unwrap(), LossMode::Scattered);
        assert_eq!("burst:4".parse::<LossMode>().unwrap(), LossMode::Burst(4));
        assert!("burst:0".parse::<LossMode>().is_err());
        assert!("lots".parse::<LossMode>().is_err());
    }

    proptest! {
        #[test]
        fn file_form_round_trips(n in 1usize..200, frac in 0.0f64..0.9, seed in any::<u64>(), burst in 0usize..5) {
            let mode = if burst == 0 { LossMode::Scattered } else { LossMode::Burst(burst) };
            let g = inject_loss(&long_trace(n), &LossSpec { fraction: frac, mode, seed }).unwrap();
            let back = GappedTrace::parse(&g.format(), "t").unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
