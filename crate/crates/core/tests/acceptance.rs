//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line to stdout
//! (bypassing test capture) and then asserts.
//!
//! Trained fixtures are built once and shared. Their configurations use
//! reduced widths and short traces so that the whole suite runs on one core.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trace_restore::config::RunConfig;
use trace_restore::ingest::split_traces;
use trace_restore::lstm::{backward, forward, logloss, target_vector, DropoutMasks, Layout, Parameters};
use trace_restore::par::{self, ExecMode};
use trace_restore::pipeline::{evaluate_model, mining_experiment, run_report, train_lstm, MiningRow, ModelEvaluation};
use trace_restore::synth::generate_traces;
use trace_restore::{
    align_and_classify, expected_accuracy, AlignOptions, Error, EventId, LstmModel, MarkovModel, NetworkConfig,
    Predictor, Trace, TrainingSchedule,
};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id} [{name}]: {status} ({detail})").unwrap();
    assert!(pass, "criterion {id} [{name}] failed: {detail}");
}

/// Jitter-free periodic messages with a 6-event cycle.
const PERIODIC: &str = "#! config v1
seed = 1
synth.periodic = A:0.01:0, B:0.02:0, C:0.03:0
synth.duration = 2
synth.traces = 20
split.train = 15
split.test = 5
lstm.lstm_width = 16
lstm.unroll_steps = 20
train.rounds = 5
eval.warmup = 40
eval.horizons = 1, 20
";

/// Periodic messages, two chained event-triggered messages and a rare one.
const STOCHASTIC: &str = "#! config v1
seed = 1
synth.periodic = A:0.01:0, C:0.05:0, B:0.15:0
synth.triggered = T:A:0.05:0.003, U:T:0.5:0.002
synth.rare = R:2
synth.duration = 3
synth.traces = 20
split.train = 15
split.test = 5
lstm.lstm_width = 32
lstm.unroll_steps = 20
lstm.input_dropout = 0
lstm.hidden_dropout = 0
lstm.recurrent_dropout = 0
train.rounds = 8
train.max_validation_windows = 200
eval.warmup = 40
eval.stride = 3
eval.horizons = 1, 20
";

/// Periodic messages with one coin-flip triggered message.
const MINING: &str = "#! config v1
seed = 1
synth.periodic = A:0.01:0, B:0.02:0, C:0.03:0
synth.triggered = T:C:0.5:0.002
synth.duration = 2
synth.traces = 20
split.train = 15
split.test = 5
lstm.lstm_width = 32
lstm.unroll_steps = 20
lstm.input_dropout = 0
lstm.hidden_dropout = 0
lstm.recurrent_dropout = 0
train.rounds = 8
train.max_validation_windows = 200
eval.warmup = 40
eval.stride = 3
eval.horizons = 1, 20
loss.fractions = 0.05, 0.10, 0.15, 0.20, 0.25
";

/// Small enough for two complete runs in a few seconds.
const DETERMINISM: &str = "#! config v1
seed = 5
synth.periodic = A:0.01:0.05, C:0.05:0.05, B:0.15:0
synth.triggered = T:A:0.05:0.003
synth.rare = R:2
synth.duration = 1
synth.traces = 6
split.train = 4
split.test = 2
lstm.lstm_width = 8
lstm.unroll_steps = 8
train.rounds = 2
train.epochs_flat = 2
train.epochs_decay = 2
eval.warmup = 10
";

struct Trained {
    cfg: RunConfig,
    test: Vec<Trace>,
    markov: MarkovModel,
    lstm: LstmModel,
    training_time: Duration,
}

fn train(text: &str) -> Trained {
    let cfg = RunConfig::parse(text).unwrap();
    let traces = generate_traces(&cfg.generator, cfg.trace_count, "trace").unwrap();
    let (train, test) = split_traces(&traces, &cfg.split_spec()).unwrap();
    let markov = MarkovModel::learn(&train, cfg.markov_order).unwrap();
    let start = Instant::now();
    let (lstm, _) = train_lstm(&cfg, &train).unwrap();
    Trained {
        training_time: start.elapsed(),
        cfg,
        test,
        markov,
        lstm,
    }
}

fn fixture(cell: &'static OnceLock<Trained>, text: &str) -> &'static Trained {
    cell.get_or_init(|| train(text))
}

static PERIODIC_FIXTURE: OnceLock<Trained> = OnceLock::new();
static STOCHASTIC_FIXTURE: OnceLock<Trained> = OnceLock::new();
static MINING_FIXTURE: OnceLock<Trained> = OnceLock::new();

fn evaluations(f: &Trained) -> (ModelEvaluation, ModelEvaluation) {
    (
        evaluate_model("markov", &f.markov, &f.test, &f.cfg).unwrap(),
        evaluate_model("lstm", &f.lstm, &f.test, &f.cfg).unwrap(),
    )
}

/// Central differences at `h = 1e-5` carry roughly 1e-10 of absolute roundoff,
/// so per-component relative errors are only meaningful above this magnitude.
const RESOLUTION_FLOOR: f64 = 1e-6;

#[test]
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_vector, mut worst_component): (f64, f64) = (0.0, 0.0);
    let (mut compared, mut below_floor) = (0usize, 0usize);
    let configs = 20;
    for trial in 0..configs {
        // Widths start at 2: a single-unit layer norm is constant and has no
        // meaningful gradient.
        let cfg = NetworkConfig {
            input_dropout: rng.gen_range(0.0..0.5),
            hidden_dropout: rng.gen_range(0.0..0.5),
            recurrent_dropout: rng.gen_range(0.0..0.5),
            direct_horizon: rng.gen_range(1..=2),
            ..NetworkConfig::tiny(
                rng.gen_range(2..=6),
                rng.gen_range(2..=8),
                rng.gen_range(2..=8),
                rng.gen_range(1..=6),
            )
        };
        let layout = Layout::new(&cfg);
        let mut params = Parameters::init(&layout, trial);
        for v in params.as_mut_slice() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let window: Vec<usize> = (0..cfg.unroll_steps).map(|_| rng.gen_range(0..cfg.vocab)).collect();
        let targets: Vec<usize> = (0..cfg.direct_horizon).map(|_| rng.gen_range(0..cfg.vocab)).collect();
        let masks = DropoutMasks::sample(&cfg, window.len(), &mut rng);
        let pass = forward(&layout, &params, &window, Some(&masks));
        let mut grad = vec![0.0; layout.total];
        backward(&layout, &params, &pass, &targets, Some(&masks), &mut grad);

        let target = target_vector(cfg.vocab, &targets);
        let loss_at = |p: &Parameters| logloss(&forward(&layout, p, &window, Some(&masks)).output, &target);
        let h = 1e-5;
        let mut numeric = vec![0.0; layout.total];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = params.as_slice()[i];
            params.as_mut_slice()[i] = orig + h;
            let up = loss_at(&params);
            params.as_mut_slice()[i] = orig - h;
            let down = loss_at(&params);
            params.as_mut_slice()[i] = orig;
            *n = (up - down) / (2.0 * h);
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut grad.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(&mut grad.iter().copied()) + norm(&mut numeric.iter().copied());
        worst_vector = worst_vector.max(diff / scale.max(f64::MIN_POSITIVE));
        for (a, n) in grad.iter().zip(&numeric) {
            if a.abs() + n.abs() < RESOLUTION_FLOOR {
                below_floor += 1;
            } else {
                compared += 1;
                worst_component = worst_component.max((a - n).abs() / (a.abs() + n.abs()));
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient oracle",
        worst_vector < 1e-4 && worst_component < 1e-4 && elapsed < Duration::from_secs(60),
        &format!(
            "{configs} configs, max gradient relative error {worst_vector:.2e}, max component relative error \
             {worst_component:.2e} over {compared} components ({below_floor} below {RESOLUTION_FLOOR:e}), {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_expected_accuracy_law() {
    let a10 = expected_accuracy(0.895, 10);
    let a20 = expected_accuracy(0.895, 20);
    verdict(
        2,
        "expected-accuracy law",
        (a10 - 0.330).abs() <= 0.0005 && (a20 - 0.109).abs() <= 0.0005,
        &format!("0.895^10 = {a10:.4}, 0.895^20 = {a20:.4}"),
    );
}

/// Most frequent successor of the longest context suffix seen in `seq`,
/// ties to the id seen first; global frequencies when no suffix was seen.
fn history_search(seq: &[EventId], order: usize, context: &[EventId]) -> EventId {
    let first_seen = |id: &EventId| seq.iter().position(|x| x == id).unwrap();
    for k in (0..=order.min(context.len())).rev() {
        let suffix = &context[context.len() - k..];
        let mut counts: BTreeMap<&EventId, usize> = BTreeMap::new();
        for j in k..seq.len() {
            if &seq[j - k..j] == suffix {
                *counts.entry(&seq[j]).or_default() += 1;
            }
        }
        if let Some(best) = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| first_seen(b.0).cmp(&first_seen(a.0))))
        {
            return best.0.clone();
        }
    }
    unreachable!("k = 0 always matches a non-empty sequence")
}

#[test]
fn criterion_3_markov_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let letters = ["A", "B", "C", "D", "E", "F"];
    let (mut queries, mut agree) = (0usize, 0usize);
    for s in 0..100 {
        let alphabet = rng.gen_range(1..=6);
        let len = rng.gen_range(1..=200);
        let order = rng.gen_range(1..=3);
        let seq: Vec<EventId> = (0..len).map(|_| EventId::from(letters[rng.gen_range(0..alphabet)])).collect();
        let trace = Trace::from_ids(format!("s{s}"), seq.iter().map(EventId::as_str));
        let model = MarkovModel::learn(&[trace], order).unwrap();
        let mut contexts: Vec<Vec<EventId>> = (0..=len).map(|j| seq[..j].to_vec()).collect();
        for _ in 0..50 {
            let n = rng.gen_range(0..=order + 2);
            contexts.push((0..n).map(|_| EventId::from(letters[rng.gen_range(0..alphabet)])).collect());
        }
        for ctx in &contexts {
            queries += 1;
            if model.predict_next(ctx).unwrap() == history_search(&seq, order, ctx) {
                agree += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "markov oracle equivalence",
        agree == queries && elapsed < Duration::from_secs(60),
        &format!("{agree}/{queries} queries agree, {:.1}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_4_periodic_mastery() {
    let f = fixture(&PERIODIC_FIXTURE, PERIODIC);
    let (markov, lstm) = evaluations(f);
    let (m1, l1) = (markov.accuracy_at(1).unwrap(), lstm.accuracy_at(1).unwrap());
    verdict(
        4,
        "periodic mastery",
        m1 == 1.0 && l1 >= 0.99 && f.training_time < Duration::from_secs(30 * 60),
        &format!(
            "markov acc1 {m1:.4}, lstm acc1 {l1:.4}, lstm training {:.0}s",
            f.training_time.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_robustness_gap() {
    let f = fixture(&STOCHASTIC_FIXTURE, STOCHASTIC);
    let (markov, lstm) = evaluations(f);
    let m20 = markov.accuracy_at(20).unwrap();
    let l1 = lstm.accuracy_at(1).unwrap();
    let l20 = lstm.accuracy_at(20).unwrap();
    let predicted = expected_accuracy(l1, 20);
    verdict(
        5,
        "robustness gap",
        l20 > m20 && l20 > predicted,
        &format!(
            "lstm acc20 {l20:.4} vs markov acc20 {m20:.4}; lstm acc1 {l1:.4}, acc1^20 {predicted:.4}; markov acc1 {:.4}",
            markov.accuracy_at(1).unwrap()
        ),
    );
}

#[test]
fn criterion_6_alignment_fixtures() {
    let ids = |s: &str| -> Vec<EventId> { s.split_whitespace().map(EventId::from).collect() };
    let classify = |pred: &str, truth: &str| {
        let r = align_and_classify(&ids(pred), &ids(truth), AlignOptions::default()).unwrap();
        (r.omissions, r.ordering_mistakes)
    };
    let proper = classify("2C6 5D7 B0 224 B2 20 B4 25 22 23", "2C6 5D7 B0 224 B2 20 B4 25 22 23");
    let omitted = classify("B4 25 22 23 B0 320 B2 2D0 2C4", "B4 25 22 23 340 B0 320 B2 2D0 2C4");
    let ordering = classify("25 22 23 2C6 B0 320 B2 2C4 20 223", "25 22 23 2C4 2C6 B0 320 B2 20 223");
    verdict(
        6,
        "alignment fixtures",
        proper == (0, 0) && omitted == (1, 0) && ordering == (0, 1),
        &format!("(omissions, ordering) = {proper:?}, {omitted:?}, {ordering:?}"),
    );
}

#[test]
fn criterion_7_downstream_mining_direction() {
    let f = fixture(&MINING_FIXTURE, MINING);
    let rows = mining_experiment(&f.lstm, &f.test, &f.cfg, None).unwrap();
    let again = mining_experiment(&f.lstm, &f.test, &f.cfg, None).unwrap();
    let ordered = rows.iter().all(|r| r.restored_decrease <= r.lossy_decrease);
    let last: &MiningRow = rows.last().unwrap();
    let strict_at_25 = (last.fraction - 0.25).abs() < 1e-12 && last.restored_decrease < last.lossy_decrease;
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.0}%: lossy {:.1} restored {:.1}", r.fraction * 100.0, r.lossy_decrease, r.restored_decrease))
        .collect();
    verdict(
        7,
        "downstream mining direction",
        ordered && strict_at_25 && rows == again,
        &table.join("; "),
    );
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, fs::read(&path).unwrap());
        }
    }
}

#[test]
fn criterion_8_determinism() {
    let cfg = RunConfig::parse(DETERMINISM).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (name, mode) in [("parallel", ExecMode::Parallel), ("sequential", ExecMode::Sequential)] {
        par::set_mode(mode);
        let out = dir.path().join(name);
        run_report(&cfg, &out).unwrap();
        let mut files = BTreeMap::new();
        collect_files(&out, &out, &mut files);
        runs.push(files);
    }
    par::set_mode(ExecMode::Parallel);
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let kinds = ["traces/", "markov.model", "lstm.model", "report.txt", "images/"];
    let covered = kinds.iter().all(|k| a.keys().any(|f| f.starts_with(k)));
    verdict(
        8,
        "determinism",
        a.len() == b.len() && differing.is_empty() && covered,
        &format!("{} artifacts compared across two runs, {} differ", a.len(), differing.len()),
    );
}

#[test]
fn criterion_9_serialization() {
    let traces = generate_traces(&RunConfig::parse(DETERMINISM).unwrap().generator, 3, "s").unwrap();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let markov = MarkovModel::learn(&traces, 5).unwrap();
    let mut text = Vec::new();
    markov.save(&mut text).unwrap();
    let loaded = MarkovModel::load(text.as_slice()).unwrap();
    let mut resaved = Vec::new();
    loaded.save(&mut resaved).unwrap();
    checks.push(("markov round trip", loaded == markov && resaved == text));
    let s = String::from_utf8(text.clone()).unwrap();
    let pos = s.find("\nglobal ").unwrap() + 1;
    let mut tampered = text.clone();
    let digit = tampered[pos..].iter().position(u8::is_ascii_digit).unwrap() + pos;
    tampered[digit] = if tampered[digit] == b'9' { b'8' } else { tampered[digit] + 1 };
    checks.push((
        "markov corruption",
        matches!(MarkovModel::load(tampered.as_slice()), Err(Error::CorruptModel(_))),
    ));
    let bumped = s.replacen("#! markov v1", "#! markov v2", 1);
    checks.push((
        "markov version",
        matches!(MarkovModel::load(bumped.as_bytes()), Err(Error::VersionMismatch { found: 2, .. })),
    ));

    let dict = markov.dictionary().clone();
    let cfg = NetworkConfig::tiny(dict.vocab_size(), 6, 5, 6);
    let mut lstm = LstmModel::new(cfg, dict, 3).unwrap();
    let schedule = TrainingSchedule {
        epochs_flat: 1,
        epochs_decay: 1,
        max_validation_windows: Some(32),
        seed: 4,
        ..Default::default()
    };
    lstm.train(&traces, &schedule).unwrap();
    let bytes = lstm.to_bytes();
    let back = LstmModel::from_bytes(&bytes).unwrap();
    let bitwise = back
        .params()
        .as_slice()
        .iter()
        .zip(lstm.params().as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    checks.push((
        "lstm round trip",
        bitwise && back.config() == lstm.config() && back.prior() == lstm.prior() && back.to_bytes() == bytes,
    ));
    let ctx: Vec<usize> = back.dictionary().indices(&traces[0])[..6].to_vec();
    checks.push(("lstm prediction", back.predict_index(&ctx).unwrap() == lstm.predict_index(&ctx).unwrap()));
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x01;
    checks.push(("lstm corruption", matches!(LstmModel::from_bytes(&flipped), Err(Error::CorruptModel(_)))));
    checks.push((
        "lstm truncation",
        matches!(LstmModel::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::CorruptModel(_))),
    ));
    let mut versioned = bytes.clone();
    versioned[8..12].copy_from_slice(&2u32.to_le_bytes());
    checks.push((
        "lstm version",
        matches!(LstmModel::from_bytes(&versioned), Err(Error::VersionMismatch { found: 2, .. })),
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        9,
        "serialization",
        failed.is_empty(),
        &if failed.is_empty() {
            format!("{} checks", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    );
}
