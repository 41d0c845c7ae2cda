//! Events, traces, the event dictionary and one-hot encoding.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token used when decoding the reserved catch-all index.
pub const OTHER_TOKEN: &str = "OTHER";

/// A message identifier, stored uppercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventId(String);

impl EventId {
    /// Returns `None` for empty or whitespace-containing tokens.
    pub fn new(raw: &str) -> Option<Self> {
        if raw.is_empty() || raw.chars().any(char::is_whitespace) {
            return None;
        }
        Some(EventId(raw.to_ascii_uppercase()))
    }

    pub fn other() -> Self {
        EventId(OTHER_TOKEN.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Convenience for literals in tests and fixtures. Panics on an invalid token.
impl From<&str> for EventId {
    fn from(raw: &str) -> Self {
        EventId::new(raw).unwrap_or_else(|| panic!("invalid event id {raw:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub timestamp: Option<f64>,
}

impl Event {
    pub fn new(id: EventId, timestamp: Option<f64>) -> Self {
        debug_assert!(timestamp.is_none_or(|t| t.is_finite() && t >= 0.0));
        Event { id, timestamp }
    }

    pub fn at(id: impl Into<EventId>, timestamp: f64) -> Self {
        Event::new(id.into(), Some(timestamp))
    }

    pub fn untimed(id: impl Into<EventId>) -> Self {
        Event::new(id.into(), None)
    }
}

/// An ordered recording of events from one session.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub label: String,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(label: impl Into<String>, events: Vec<Event>) -> Self {
        Trace {
            label: label.into(),
            events,
        }
    }

    /// Builds an untimed trace from id tokens.
    pub fn from_ids<I, S>(label: impl Into<String>, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let events = ids
            .into_iter()
            .map(|s| Event::untimed(EventId::from(s.as_ref())))
            .collect();
        Trace::new(label, events)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &EventId> + '_ {
        self.events.iter().map(|e| &e.id)
    }

    /// All timestamps, failing on the first event without one.
    pub fn timestamps(&self) -> Result<Vec<f64>> {
        self.events
            .iter()
            .enumerate()
            .map(|(index, e)| e.timestamp.ok_or(Error::MissingTimestamp { index }))
            .collect()
    }

    /// Index of the first event whose timestamp goes backwards.
    pub fn first_non_monotonic(&self) -> Option<usize> {
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if let Some(t) = e.timestamp {
                if t < last {
                    return Some(i);
                }
                last = t;
            }
        }
        None
    }
}

/// Bijection between observed ids and dense indices, with a trailing OTHER slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EventId>", into = "Vec<EventId>")]
pub struct Dictionary {
    ids: Vec<EventId>,
    lookup: HashMap<EventId, usize>,
}

impl Dictionary {
    /// Fails if `ids` contains duplicates.
    pub fn from_ids(ids: Vec<EventId>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.as_str() == OTHER_TOKEN {
                return Err(Error::InvalidSpec(format!(
                    "{OTHER_TOKEN} is reserved and cannot be a dictionary entry"
                )));
            }
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate dictionary id {id}")));
            }
        }
        Ok(Dictionary { ids, lookup })
    }

    /// Unique ids in first-occurrence order over the concatenated traces.
    pub fn build<'a, I>(traces: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Trace>,
    {
        let mut ids = Vec::new();
        let mut lookup = HashMap::new();
        for trace in traces {
            for id in trace.ids() {
                if !lookup.contains_key(id) {
                    lookup.insert(id.clone(), ids.len());
                    ids.push(id.clone());
                }
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(Dictionary { ids, lookup })
    }

    pub fn ids(&self) -> &[EventId] {
        &self.ids
    }

    /// Vocabulary size including the OTHER slot.
    pub fn vocab_size(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn other_index(&self) -> usize {
        self.ids.len()
    }

    /// Index of `id`, or the OTHER index when unseen.
    pub fn index_of(&self, id: &EventId) -> usize {
        self.lookup.get(id).copied().unwrap_or(self.ids.len())
    }

    pub fn contains(&self, id: &EventId) -> bool {
        self.lookup.contains_key(id)
    }

    pub fn decode(&self, index: usize) -> Result<EventId> {
        match index.cmp(&self.ids.len()) {
            std::cmp::Ordering::Less => Ok(self.ids[index].clone()),
            std::cmp::Ordering::Equal => Ok(EventId::other()),
            std::cmp::Ordering::Greater => Err(Error::IndexOutOfRange {
                index,
                size: self.vocab_size(),
            }),
        }
    }

    pub fn encode(&self, id: &EventId) -> EncodedVector {
        EncodedVector::one_hot(self.index_of(id), self.vocab_size())
    }

    /// Dense indices for every event of `trace`.
    pub fn indices(&self, trace: &Trace) -> Vec<usize> {
        trace.ids().map(|id| self.index_of(id)).collect()
    }
}

impl TryFrom<Vec<EventId>> for Dictionary {
    type Error = Error;

    fn try_from(ids: Vec<EventId>) -> Result<Self> {
        Dictionary::from_ids(ids)
    }
}

impl From<Dictionary> for Vec<EventId> {
    fn from(dict: Dictionary) -> Self {
        dict.ids
    }
}

/// A dense real vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector(pub Vec<f64>);

impl EncodedVector {
    pub fn one_hot(index: usize, len: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        EncodedVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Position of the largest element; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Lowest index of the maximum element. Returns 0 for an empty slice.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
