//! Self-feeding prediction and gap restoration for any next-event predictor.

use crate::error::{Error, Result};
use crate::gapped::{GappedTrace, Segment};
use crate::lstm::LstmModel;
use crate::trace::{argmax, Dictionary, Event, EventId, Trace};

/// A model that predicts the next dictionary index from preceding indices.
pub trait Predictor: Sync {
    fn dictionary(&self) -> &Dictionary;

    /// How many trailing context events the model looks at.
    fn context_len(&self) -> usize;

    /// Next index given `context` (oldest first). An empty context yields the
    /// model's prior choice.
    fn predict_index(&self, context: &[usize]) -> Result<usize>;
}

/// Continues `context` by `horizon` events, feeding every prediction back in.
pub fn continue_indices<P: Predictor + ?Sized>(
    model: &P,
    context: &[usize],
    horizon: usize,
) -> Result<Vec<usize>> {
    let keep = model.context_len();
    let mut window: Vec<usize> = context[context.len().saturating_sub(keep)..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = model.predict_index(&window)?;
        out.push(next);
        window.push(next);
        if window.len() > keep {
            window.remove(0);
        }
    }
    Ok(out)
}

/// Step-by-step prediction of `horizon` events following `seed_events`.
pub fn predict_step_by_step<P: Predictor + ?Sized>(
    model: &P,
    seed_events: &[EventId],
    horizon: usize,
) -> Result<Vec<EventId>> {
    if horizon == 0 {
        return Ok(Vec::new());
    }
    if seed_events.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let dict = model.dictionary();
    let ctx: Vec<usize> = seed_events.iter().map(|id| dict.index_of(id)).collect();
    continue_indices(model, &ctx, horizon)?
        .into_iter()
        .map(|i| dict.decode(i))
        .collect()
}

/// One forward pass of a direct n-forward model, decoded block by block.
pub fn predict_direct(model: &LstmModel, window: &[EventId], n: usize) -> Result<Vec<EventId>> {
    if model.config().direct_horizon != n {
        return Err(Error::HorizonMismatch {
            model: model.config().direct_horizon,
            requested: n,
        });
    }
    let dict = model.dictionary();
    let idx: Vec<usize> = window.iter().map(|id| dict.index_of(id)).collect();
    let out = model.forward_window(&idx)?;
    out.chunks(dict.vocab_size())
        .map(|block| dict.decode(argmax(block)))
        .collect()
}

/// Fills every gap left to right with exactly its missing count of predicted
/// events. Known events are copied verbatim; restored events take timestamps
/// interpolated between the flanking known events.
pub fn restore_trace<P: Predictor + ?Sized>(model: &P, gapped: &GappedTrace) -> Result<Trace> {
    let dict = model.dictionary();
    let keep = model.context_len();
    let segments = gapped.segments();
    let mut events: Vec<Event> = Vec::with_capacity(gapped.original_len());
    let mut context: Vec<usize> = Vec::with_capacity(gapped.original_len());

    for (s, seg) in segments.iter().enumerate() {
        match seg {
            Segment::Known(evs) => {
                context.extend(evs.iter().map(|e| dict.index_of(&e.id)));
                events.extend(evs.iter().cloned());
            }
            Segment::Gap(missing) => {
                let left = events.last().and_then(|e| e.timestamp);
                let right = segments.get(s + 1).and_then(|next| match next {
                    Segment::Known(evs) => evs.first().and_then(|e| e.timestamp),
                    Segment::Gap(_) => None,
                });
                let start = context.len().saturating_sub(keep);
                let filled = continue_indices(model, &context[start..], *missing)?;
                for (j, idx) in filled.into_iter().enumerate() {
                    let ts = interpolate(left, right, j + 1, missing + 1);
                    events.push(Event::new(dict.decode(idx)?, ts));
                    context.push(idx);
                }
            }
        }
    }
    Ok(Trace::new(gapped.label.clone(), events))
}

fn interpolate(left: Option<f64>, right: Option<f64>, step: usize, steps: usize) -> Option<f64> {
    match (left, right) {
        (Some(a), Some(b)) => Some(a + (b - a) * step as f64 / steps as f64),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}

/// Restores many traces concurrently.
pub fn restore_all<P: Predictor + ?Sized>(model: &P, gapped: &[GappedTrace]) -> Result<Vec<Trace>> {
    crate::par::map(gapped, |g| restore_trace(model, g))
        .into_iter()
        .collect()
}
