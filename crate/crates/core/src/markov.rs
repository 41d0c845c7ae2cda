//! Order-n Markov benchmark with maximal k-gram backoff.
//!
//! Transition counts for every k-gram state with `1 <= k <= order` are kept in
//! a suffix trie: the path from the root spells the context backwards (most
//! recent event first), and each node holds the successor counts of the state
//! it spells. The root holds the global event frequencies used when no suffix
//! of the context has ever been observed. Only observed states are
//! materialized.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gapped::GappedTrace;
use crate::restore::{self, Predictor};
use crate::trace::{Dictionary, EventId, Trace};

/// Default order, matching the LSTM unroll length.
pub const DEFAULT_ORDER: usize = 40;

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &str = "#! markov";

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<usize, usize>,
    counts: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone)]
pub struct MarkovModel {
    order: usize,
    dict: Dictionary,
    nodes: Vec<Node>,
}

impl MarkovModel {
    /// Learns transition frequencies from each trace independently; no state
    /// spans a trace boundary.
    pub fn learn(traces: &[Trace], order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidSpec("markov order must be >= 1".into()));
        }
        let dict = Dictionary::build(traces)?;
        let mut model = MarkovModel {
            order,
            dict,
            nodes: vec![Node::default()],
        };
        for trace in traces {
            let seq = model.dict.indices(trace);
            for j in 0..seq.len() {
                model.observe(&seq[j.saturating_sub(order)..j], seq[j]);
            }
        }
        Ok(model)
    }

    /// Counts `next` after every suffix of `context` (and in the global table).
    fn observe(&mut self, context: &[usize], next: usize) {
        let mut node = 0;
        *self.nodes[0].counts.entry(next).or_default() += 1;
        for &sym in context.iter().rev() {
            node = self.child_or_insert(node, sym);
            *self.nodes[node].counts.entry(next).or_default() += 1;
        }
    }

    fn child_or_insert(&mut self, node: usize, sym: usize) -> usize {
        if let Some(&c) = self.nodes[node].children.get(&sym) {
            return c;
        }
        let c = self.nodes.len();
        self.nodes.push(Node::default());
        self.nodes[node].children.insert(sym, c);
        c
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    /// Number of materialized k-gram states (excluding the global table).
    pub fn state_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Successor counts of the state spelled by `state` (oldest first), if seen.
    pub fn successors(&self, state: &[EventId]) -> Option<BTreeMap<EventId, u64>> {
        let mut node = 0;
        for id in state.iter().rev() {
            node = *self.nodes[node].children.get(&self.dict.index_of(id))?;
        }
        Some(self.decode_counts(&self.nodes[node].counts))
    }

    pub fn global_frequencies(&self) -> BTreeMap<EventId, u64> {
        self.decode_counts(&self.nodes[0].counts)
    }

    fn decode_counts(&self, counts: &BTreeMap<usize, u64>) -> BTreeMap<EventId, u64> {
        counts
            .iter()
            .map(|(&i, &c)| (self.dict.decode(i).expect("trained index"), c))
            .collect()
    }

    /// Deepest trie node matching a suffix of `context`.
    fn deepest_match(&self, context: &[usize]) -> usize {
        let mut node = 0;
        for &sym in context.iter().rev().take(self.order) {
            match self.nodes[node].children.get(&sym) {
                Some(&c) => node = c,
                None => break,
            }
        }
        node
    }

    /// Most frequent successor of the longest known suffix of `context`.
    pub fn predict_next(&self, context: &[EventId]) -> Result<EventId> {
        let ctx: Vec<usize> = context.iter().map(|id| self.dict.index_of(id)).collect();
        let idx = self.predict_index(&ctx)?;
        self.dict.decode(idx)
    }

    /// Fills gaps left to right, feeding each imputed event back as context.
    pub fn impute_chronological(&self, gapped: &GappedTrace) -> Result<Trace> {
        restore::restore_trace(self, gapped)
    }

    /// Canonical `(state, successor, count)` triples, states oldest first.
    fn entries(&self) -> Vec<(Vec<usize>, usize, u64)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            for (&succ, &count) in &self.nodes[node].counts {
                out.push((path.clone(), succ, count));
            }
            for (&sym, &child) in &self.nodes[node].children {
                let mut p = Vec::with_capacity(path.len() + 1);
                p.push(sym);
                p.extend_from_slice(&path);
                stack.push((child, p));
            }
        }
        out.sort();
        out
    }

    /// Writes the versioned text form: one line per (state, successor, count),
    /// lexicographically sorted, followed by a SHA-256 checksum line.
    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut body = format!("{MAGIC} v{MODEL_VERSION}\norder {}\nids", self.order);
        for id in self.dict.ids() {
            write!(body, " {id}").unwrap();
        }
        body.push('\n');
        let name = |i: usize| self.dict.decode(i).expect("trained index");
        let mut lines: Vec<String> = self
            .entries()
            .into_iter()
            .map(|(state, succ, count)| {
                if state.is_empty() {
                    format!("global {} {count}", name(succ))
                } else {
                    let joined: Vec<String> = state.iter().map(|&i| name(i).to_string()).collect();
                    format!("state {} {} {count}", joined.join(","), name(succ))
                }
            })
            .collect();
        lines.sort();
        for line in lines {
            body.push_str(&line);
            body.push('\n');
        }
        let digest = hex(&Sha256::digest(body.as_bytes()));
        writeln!(body, "checksum {digest}").unwrap();
        sink.write_all(body.as_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut text = String::new();
        source
            .read_to_string(&mut text)
            .map_err(|e| Error::CorruptModel(e.to_string()))?;
        let corrupt = |m: &str| Error::CorruptModel(m.to_string());

        let first = text.lines().next().ok_or_else(|| corrupt("empty file"))?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| corrupt("missing markov header"))?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_VERSION,
            });
        }

        let trimmed = text.strip_suffix('\n').ok_or_else(|| corrupt("truncated"))?;
        let split = trimmed.rfind('\n').ok_or_else(|| corrupt("truncated"))?;
        let (body, last) = (&text[..=split], &trimmed[split + 1..]);
        let stored = last
            .strip_prefix("checksum ")
            .ok_or_else(|| corrupt("missing checksum"))?;
        if stored != hex(&Sha256::digest(body.as_bytes())) {
            return Err(corrupt("checksum mismatch"));
        }

        let mut order = None;
        let mut dict = None;
        let mut pending: Vec<(Vec<EventId>, EventId, u64)> = Vec::new();
        for line in body.lines().skip(1) {
            let mut f = line.split(' ');
            match f.next() {
                Some("order") => {
                    order = f.next().and_then(|v| v.parse::<usize>().ok());
                }
                Some("ids") => {
                    let ids = f
                        .map(|s| EventId::new(s).ok_or_else(|| corrupt("bad id")))
                        .collect::<Result<Vec<_>>>()?;
                    dict = Some(Dictionary::from_ids(ids).map_err(|_| corrupt("bad dictionary"))?);
                }
                Some(kind @ ("global" | "state")) => {
                    let state = if kind == "state" {
                        f.next()
                            .ok_or_else(|| corrupt("missing state"))?
                            .split(',')
                            .map(|s| EventId::new(s).ok_or_else(|| corrupt("bad id")))
                            .collect::<Result<Vec<_>>>()?
                    } else {
                        Vec::new()
                    };
                    let succ = f.next().and_then(EventId::new).ok_or_else(|| corrupt("bad successor"))?;
                    let count = f
                        .next()
                        .and_then(|c| c.parse::<u64>().ok())
                        .filter(|&c| c >= 1)
                        .ok_or_else(|| corrupt("bad count"))?;
                    pending.push((state, succ, count));
                }
                _ => return Err(corrupt("unknown line")),
            }
        }
        let order = order.filter(|&o| o >= 1).ok_or_else(|| corrupt("missing order"))?;
        let dict = dict.ok_or_else(|| corrupt("missing ids"))?;
        let mut model = MarkovModel {
            order,
            dict,
            nodes: vec![Node::default()],
        };
        for (state, succ, count) in pending {
            if state.len() > order {
                return Err(corrupt("state longer than order"));
            }
            let mut node = 0;
            for id in state.iter().rev() {
                if !model.dict.contains(id) {
                    return Err(corrupt("state uses unknown id"));
                }
                node = model.child_or_insert(node, model.dict.index_of(id));
            }
            if !model.dict.contains(&succ) {
                return Err(corrupt("successor uses unknown id"));
            }
            model.nodes[node]
                .counts
                .insert(model.dict.index_of(&succ), count);
        }
        Ok(model)
    }
}

impl PartialEq for MarkovModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.dict == other.dict && self.entries() == other.entries()
    }
}

impl Predictor for MarkovModel {
    fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    fn context_len(&self) -> usize {
        self.order
    }

    fn predict_index(&self, context: &[usize]) -> Result<usize> {
        let node = &self.nodes[self.deepest_match(context)];
        // BTreeMap iterates ascending, so strict `>` keeps the lowest index on ties.
        let mut best: Option<(usize, u64)> = None;
        for (&sym, &count) in &node.counts {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((sym, count));
            }
        }
        best.map(|(sym, _)| sym).ok_or(Error::UntrainedModel)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}
