//! Prediction quality measures: n-forward accuracy, the independence-based
//! expected accuracy, alignment scoring, and one-hot raster images.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::restore::{continue_indices, Predictor};
use crate::trace::{Dictionary, EventId, Trace};

/// Fraction of steps whose `n` predictions are all correct.
pub fn n_forward_accuracy<T: PartialEq>(predictions: &[Vec<T>], truth: &[Vec<T>], n: usize) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: n });
    }
    let mut correct = 0usize;
    for (p, t) in predictions.iter().zip(truth) {
        if p.len() != n || t.len() != n {
            return Err(Error::LengthMismatch {
                left: p.len(),
                right: t.len(),
            });
        }
        if p == t {
            correct += 1;
        }
    }
    Ok(correct as f64 / predictions.len() as f64)
}

/// Accuracy of an n-step chain if a single mistake derails everything after it.
pub fn expected_accuracy(acc1: f64, n: u32) -> f64 {
    acc1.powi(n as i32)
}

/// Which positions of a trace serve as prediction starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    /// Minimum context length before the first start.
    pub warmup: usize,
    /// Distance between consecutive starts.
    pub stride: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { warmup: 1, stride: 1 }
    }
}

/// `n` consecutive dictionary indices.
pub type Tuple = Vec<usize>;

/// Self-fed n-step predictions and the matching truth at every sampled start
/// of `trace`, as dictionary indices.
pub fn step_by_step_tuples<P: Predictor + ?Sized>(
    model: &P,
    trace: &Trace,
    n: usize,
    sampling: Sampling,
) -> Result<(Vec<Tuple>, Vec<Tuple>)> {
    let seq = model.dictionary().indices(trace);
    let keep = model.context_len();
    let stride = sampling.stride.max(1);
    let starts: Vec<usize> = (sampling.warmup.max(1)..)
        .step_by(stride)
        .take_while(|&s| s + n <= seq.len())
        .collect();
    let preds = crate::par::map(&starts, |&s| continue_indices(model, &seq[s.saturating_sub(keep)..s], n));
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    let truth = starts.iter().map(|&s| seq[s..s + n].to_vec()).collect();
    Ok((preds, truth))
}

/// Pooled step-by-step n-forward accuracy over several traces.
pub fn step_by_step_accuracy<P: Predictor + ?Sized>(
    model: &P,
    traces: &[Trace],
    n: usize,
    sampling: Sampling,
) -> Result<f64> {
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for t in traces {
        let (p, q) = step_by_step_tuples(model, t, n, sampling)?;
        preds.extend(p);
        truth.extend(q);
    }
    n_forward_accuracy(&preds, &truth, n)
}

/// Step-by-step accuracy at every horizon in `horizons`, pooled over
/// `traces`. Each start is predicted once to the longest horizon and every
/// shorter horizon is scored on a prefix, so all horizons share the same starts.
pub fn horizon_accuracies<P: Predictor + ?Sized>(
    model: &P,
    traces: &[Trace],
    horizons: &[usize],
    sampling: Sampling,
) -> Result<Vec<f64>> {
    let longest = horizons.iter().copied().max().unwrap_or(0);
    if longest == 0 {
        return Err(Error::InvalidSpec("horizons must be positive".into()));
    }
    let mut hits = vec![0usize; horizons.len()];
    let mut steps = 0usize;
    for t in traces {
        let (preds, truth) = step_by_step_tuples(model, t, longest, sampling)?;
        steps += preds.len();
        for (p, q) in preds.iter().zip(&truth) {
            let first_miss = p.iter().zip(q).position(|(a, b)| a != b).unwrap_or(longest);
            for (h, &n) in hits.iter_mut().zip(horizons) {
                if first_miss >= n {
                    *h += 1;
                }
            }
        }
    }
    if steps == 0 {
        return Err(Error::LengthMismatch { left: 0, right: longest });
    }
    Ok(hits.iter().map(|&h| h as f64 / steps as f64).collect())
}

/// Alignment counts of self-fed segments of `len` events against the truth,
/// pooled over non-overlapping segments of every trace.
pub fn segment_alignment<P: Predictor + ?Sized>(
    model: &P,
    traces: &[Trace],
    len: usize,
    warmup: usize,
    opts: AlignOptions,
) -> Result<AlignmentReport> {
    let sampling = Sampling {
        warmup,
        stride: len,
    };
    let mut sum = AlignmentReport::from_counts(0, 0, 0, 0);
    for t in traces {
        let (preds, truth) = step_by_step_tuples(model, t, len, sampling)?;
        let reports = crate::par::map_range(preds.len(), |i| align_and_classify(&preds[i], &truth[i], opts));
        for r in reports {
            let r = r?;
            sum = AlignmentReport::from_counts(
                sum.correct + r.correct,
                sum.omissions + r.omissions,
                sum.ordering_mistakes + r.ordering_mistakes,
                sum.substitutions + r.substitutions,
            );
        }
    }
    Ok(sum)
}

/// Outcome counts of [`align_and_classify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    /// Number of alignment decisions (sum of the four counts).
    pub total: usize,
    pub correct: usize,
    pub omissions: usize,
    pub ordering_mistakes: usize,
    pub substitutions: usize,
    pub omission_rate: f64,
    /// `None` when no ordering mistake occurred.
    pub events_per_ordering_mistake: Option<f64>,
}

impl AlignmentReport {
    fn from_counts(correct: usize, omissions: usize, ordering_mistakes: usize, substitutions: usize) -> Self {
        let total = correct + omissions + ordering_mistakes + substitutions;
        AlignmentReport {
            total,
            correct,
            omissions,
            ordering_mistakes,
            substitutions,
            omission_rate: if total == 0 { 0.0 } else { omissions as f64 / total as f64 },
            events_per_ordering_mistake: (ordering_mistakes > 0).then(|| total as f64 / ordering_mistakes as f64),
        }
    }

    /// Fraction of decisions that were plain matches.
    pub fn aligned_accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        writeln!(s, "total={}", self.total).unwrap();
        writeln!(s, "correct={}", self.correct).unwrap();
        writeln!(s, "omissions={}", self.omissions).unwrap();
        writeln!(s, "ordering_mistakes={}", self.ordering_mistakes).unwrap();
        writeln!(s, "substitutions={}", self.substitutions).unwrap();
        writeln!(s, "omission_rate={}", self.omission_rate).unwrap();
        match self.events_per_ordering_mistake {
            Some(v) => writeln!(s, "events_per_ordering_mistake={v}").unwrap(),
            None => writeln!(s, "events_per_ordering_mistake=none").unwrap(),
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignOptions {
    /// Events that must agree after a repair for it to be accepted.
    pub lookahead: usize,
    /// Displaced events are searched up to `depth - 1` positions ahead.
    pub depth: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions { lookahead: 3, depth: 10 }
    }
}

/// Greedy left-to-right scoring of a predicted sequence against the truth.
///
/// At each mismatch the repairs are tried in order:
/// 1. the true event shows up later in the prediction: move it there
///    (ordering mistake);
/// 2. the predicted event shows up later in the truth: move that true event
///    here (ordering mistake);
/// 3. the prediction continues with the next true events: skip the true
///    event (omission);
/// 4. otherwise a substitution, and both sides advance.
///
/// A move is accepted only if the prediction then agrees with the truth
/// through the moved event and `lookahead` events beyond it; a skip only if
/// the next `lookahead` events agree. A moved event is counted once, as the
/// ordering mistake. Unmatched tails after either sequence ends are not scored.
pub fn align_and_classify<T: PartialEq + Clone>(
    predicted: &[T],
    truth: &[T],
    opts: AlignOptions,
) -> Result<AlignmentReport> {
    let w = opts.lookahead;
    for len in [predicted.len(), truth.len()] {
        if len < w + 1 {
            return Err(Error::DegenerateInput { needed: w + 1, got: len });
        }
    }
    // Working copy of the truth; the flag marks events already charged to a move.
    let mut work: Vec<(T, bool)> = truth.iter().cloned().map(|t| (t, false)).collect();
    let (mut p, mut t) = (0usize, 0usize);
    let (mut correct, mut omissions, mut ordering, mut substitutions) = (0, 0, 0, 0);

    let agrees = |work: &[(T, bool)], p: usize, t: usize, len: usize| -> bool {
        let n = len.min(predicted.len() - p).min(work.len().saturating_sub(t));
        n > 0 && (0..n).all(|k| predicted[p + k] == work[t + k].0)
    };

    while p < predicted.len() && t < work.len() {
        if predicted[p] == work[t].0 {
            if !work[t].1 {
                correct += 1;
            }
            p += 1;
            t += 1;
            continue;
        }

        // 1. the true event was predicted late
        let late = (1..opts.depth)
            .take_while(|d| p + d < predicted.len() && t + d < work.len())
            .find(|&d| predicted[p + d] == work[t].0);
        if let Some(d) = late {
            let mut trial = work.clone();
            let moved = trial.remove(t);
            trial.insert(t + d, (moved.0, true));
            if agrees(&trial, p, t, d + 1 + w) {
                work = trial;
                ordering += 1;
                continue;
            }
        }

        // 2. a later true event was predicted early
        let early = (1..opts.depth)
            .take_while(|d| t + d < work.len())
            .find(|&d| work[t + d].0 == predicted[p]);
        if let Some(d) = early {
            let mut trial = work.clone();
            let moved = trial.remove(t + d);
            trial.insert(t, (moved.0, true));
            if agrees(&trial, p, t, d + 1 + w) {
                work = trial;
                ordering += 1;
                continue;
            }
        }

        // 3. the true event was skipped
        if t + 1 < work.len() && agrees(&work, p, t + 1, w) {
            omissions += 1;
            t += 1;
            continue;
        }

        substitutions += 1;
        p += 1;
        t += 1;
    }
    Ok(AlignmentReport::from_counts(correct, omissions, ordering, substitutions))
}

/// Writes a plain (P2) portable graymap: one row per dictionary index, one
/// column per event, white where the event's one-hot element is active.
pub fn render_onehot_image<W: Write>(events: &[EventId], dict: &Dictionary, mut sink: W) -> Result<()> {
    if events.is_empty() {
        return Err(Error::InvalidSpec("cannot render an empty sequence".into()));
    }
    let rows = dict.vocab_size();
    let active: Vec<usize> = events.iter().map(|id| dict.index_of(id)).collect();
    let mut out = format!("P2\n{} {}\n255\n", events.len(), rows);
    for r in 0..rows {
        let line: Vec<&str> = active.iter().map(|&a| if a == r { "255" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    sink.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(s: &str) -> Vec<EventId> {
        s.split_whitespace().map(EventId::from).collect()
    }

    #[test]
    fn n_forward_examples() {
        let all = vec![vec![1, 2], vec![3, 4]];
        assert_eq!(n_forward_accuracy(&all, &all, 2).unwrap(), 1.0);
        let pred = vec![vec![1, 2], vec![3, 4], vec![5, 6]];
        let truth = vec![vec![1, 2], vec![3, 4], vec![5, 0]];
        assert!((n_forward_accuracy(&pred, &truth, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            n_forward_accuracy(&pred, &truth[..2], 2),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(n_forward_accuracy(&pred, &truth, 3).is_err());
    }

    #[test]
    fn expected_accuracy_power_law() {
        assert!((expected_accuracy(0.895, 10) - 0.330).abs() <= 0.0005);
        assert!((expected_accuracy(0.895, 20) - 0.109).abs() <= 0.0005);
        assert_eq!(expected_accuracy(0.42, 1), 0.42);
    }

    #[test]
    fn proper_alignment_fixture() {
        let seq = ids("2C6 5D7 B0 224 B2 20 B4 25 22 23");
        let r = align_and_classify(&seq, &seq, AlignOptions::default()).unwrap();
        assert_eq!((r.correct, r.omissions, r.ordering_mistakes, r.substitutions), (10, 0, 0, 0));
    }

    #[test]
    fn omitted_rare_event_fixture() {
        let pred = ids("B4 25 22 23 B0 320 B2 2D0 2C4");
        let truth = ids("B4 25 22 23 340 B0 320 B2 2D0 2C4");
        let r = align_and_classify(&pred, &truth, AlignOptions::default()).unwrap();
        assert_eq!((r.correct, r.omissions, r.ordering_mistakes, r.substitutions), (9, 1, 0, 0));
        assert!((r.omission_rate - 0.1).abs() < 1e-15);
    }

    #[test]
    fn local_ordering_mistake_fixture() {
        let pred = ids("25 22 23 2C6 B0 320 B2 2C4 20 223");
        let truth = ids("25 22 23 2C4 2C6 B0 320 B2 20 223");
        let r = align_and_classify(&pred, &truth, AlignOptions::default()).unwrap();
        assert_eq!((r.correct, r.omissions, r.ordering_mistakes, r.substitutions), (9, 0, 1, 0));
        assert_eq!(r.events_per_ordering_mistake, Some(10.0));
    }

    #[test]
    fn substitution_and_degenerate_input() {
        let r = align_and_classify(&ids("A B X D E F"), &ids("A B C D E F"), AlignOptions::default()).unwrap();
        assert_eq!((r.correct, r.substitutions), (5, 1));
        assert!(matches!(
            align_and_classify(&ids("A B"), &ids("A B C D"), AlignOptions::default()),
            Err(Error::DegenerateInput { needed: 4, got: 2 })
        ));
    }

    #[test]
    fn report_text_form() {
        let r = AlignmentReport::from_counts(9, 1, 0, 0);
        let text = r.to_key_value();
        assert!(text.contains("omissions=1\n"));
        assert!(text.contains("events_per_ordering_mistake=none\n"));
    }

    #[test]
    fn raster_image() {
        let dict = Dictionary::from_ids(vec!["A".into(), "B".into()]).unwrap();
        let mut buf = Vec::new();
        render_onehot_image(&ids("A"), &dict, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "P2\n1 3\n255\n255\n0\n0\n");

        let seq = ids("A B ZZ A");
        let mut a = Vec::new();
        let mut b = Vec::new();
        render_onehot_image(&seq, &dict, &mut a).unwrap();
        render_onehot_image(&seq, &dict, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().ends_with("0 0 255 0\n"));
        assert!(render_onehot_image(&[], &dict, Vec::new()).is_err());
    }

    /// Sequences over distinct symbols, so every repair is unambiguous.
    fn distinct(len: usize) -> Vec<u32> {
        (0..len as u32).collect()
    }

    proptest! {
        #[test]
        fn self_alignment_is_clean(seq in proptest::collection::vec(0u8..4, 4..60)) {
            let r = align_and_classify(&seq, &seq, AlignOptions::default()).unwrap();
            prop_assert_eq!((r.omissions, r.ordering_mistakes, r.substitutions), (0, 0, 0));
            prop_assert_eq!(r.correct, seq.len());
        }

        #[test]
        fn single_deletion_is_one_omission(len in 8usize..60, at in 0usize..60) {
            let truth = distinct(len);
            let at = at % (len - 3);
            let mut pred = truth.clone();
            pred.remove(at);
            let r = align_and_classify(&pred, &truth, AlignOptions::default()).unwrap();
            prop_assert_eq!((r.omissions, r.ordering_mistakes, r.substitutions), (1, 0, 0));
            prop_assert_eq!(r.correct, len - 1);
        }

        #[test]
        fn forward_move_is_one_ordering_mistake(len in 16usize..60, at in 0usize..60, by in 1usize..10) {
            let truth = distinct(len);
            let at = at % (len - by - 4);
            let mut pred = truth.clone();
            let e = pred.remove(at);
            pred.insert(at + by, e);
            let r = align_and_classify(&pred, &truth, AlignOptions::default()).unwrap();
            prop_assert_eq!((r.omissions, r.ordering_mistakes, r.substitutions), (0, 1, 0));
            prop_assert_eq!(r.correct, len - 1);
        }

        #[test]
        fn accuracy_ignores_step_order(mut steps in proptest::collection::vec((proptest::collection::vec(0u8..3, 2), proptest::collection::vec(0u8..3, 2)), 1..30)) {
            let (p, t): (Vec<_>, Vec<_>) = steps.iter().cloned().unzip();
            let a = n_forward_accuracy(&p, &t, 2).unwrap();
            steps.reverse();
            let (p, t): (Vec<_>, Vec<_>) = steps.into_iter().unzip();
            prop_assert_eq!(a, n_forward_accuracy(&p, &t, 2).unwrap());
        }
    }
}
