//! Stage functions and artifact files for a full experiment run.
//!
//! A run directory produced by [`run_report`]:
//!
//! ```text
//! config.cfg            canonical configuration
//! traces/*.trace        generated traces
//! split.txt             train and test labels
//! dictionary.txt        ids of the training pool
//! markov.model          order-n Markov model
//! lstm.model            trained network
//! training.json         per-epoch losses
//! evaluation.{txt,json} step-by-step accuracy and alignment for both models
//! images/*.pgm          one-hot rasters of truth and predictions
//! loss/<pct>/           gapped, lossy and restored traces with mining reports
//! mining.txt            percent decrease per loss level
//! report.txt            headline numbers
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{RestoreWith, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    align_and_classify, expected_accuracy, horizon_accuracies, render_onehot_image, segment_alignment,
    AlignOptions, AlignmentReport, Sampling,
};
use crate::gapped::{inject_loss, GappedTrace, LossSpec};
use crate::ingest::{format_trace, read_trace_dir, split_traces, TRACE_EXTENSION};
use crate::lstm::{LstmModel, RoundMetrics};
use crate::markov::MarkovModel;
use crate::restore::{continue_indices, restore_all, Predictor};
use crate::synth::generate_traces;
use crate::trace::{Dictionary, EventId, Trace};
use crate::trem::{pooled_decrease, rank_dominant, MiningReport};

pub const ARTIFACT_VERSION: u32 = 1;
pub const GAPPED_EXTENSION: &str = "gapped";
pub const MINING_EXTENSION: &str = "mining";

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn check_version(text: &str, kind: &str) -> Result<()> {
    let first = text.lines().next().unwrap_or("");
    let version = first
        .strip_prefix("#! ")
        .and_then(|rest| rest.strip_prefix(kind))
        .and_then(|rest| rest.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::MalformedLine {
            line: 1,
            reason: format!("expected `#! {kind} v<N>` header"),
        })?;
    if version != ARTIFACT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: ARTIFACT_VERSION,
        });
    }
    Ok(())
}

fn body_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn format_dictionary(dict: &Dictionary) -> String {
    let mut out = format!("#! dictionary v{ARTIFACT_VERSION}\n");
    for id in dict.ids() {
        writeln!(out, "{id}").unwrap();
    }
    out
}

pub fn parse_dictionary(text: &str) -> Result<Dictionary> {
    check_version(text, "dictionary")?;
    let ids = body_lines(text)
        .map(|(line, l)| {
            EventId::new(l).ok_or_else(|| Error::MalformedLine {
                line,
                reason: format!("bad id {l:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dictionary::from_ids(ids)
}

/// `train <label>` and `test <label>` lines.
pub fn format_split(train: &[Trace], test: &[Trace]) -> String {
    let mut out = format!("#! split v{ARTIFACT_VERSION}\n");
    for t in train {
        writeln!(out, "train {}", t.label).unwrap();
    }
    for t in test {
        writeln!(out, "test {}", t.label).unwrap();
    }
    out
}

pub fn write_trace_dir(dir: &Path, traces: &[Trace]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in traces {
        write_file(&dir.join(format!("{}.{TRACE_EXTENSION}", t.label)), format_trace(t))?;
    }
    Ok(())
}

pub fn write_gapped_dir(dir: &Path, gapped: &[GappedTrace]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for g in gapped {
        write_file(&dir.join(format!("{}.{GAPPED_EXTENSION}", g.label)), g.format())?;
    }
    Ok(())
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == ext));
    paths.sort();
    Ok(paths)
}

fn file_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn read_gapped_file(path: &Path) -> Result<GappedTrace> {
    GappedTrace::parse(&fs::read_to_string(path)?, &file_label(path))
}

pub fn read_gapped_dir(dir: &Path) -> Result<Vec<GappedTrace>> {
    sorted_files(dir, GAPPED_EXTENSION)?.iter().map(|p| read_gapped_file(p)).collect()
}

/// Reads a single trace file or every trace in a directory.
pub fn read_traces(path: &Path) -> Result<Vec<Trace>> {
    if path.is_dir() {
        read_trace_dir(path)
    } else {
        Ok(vec![crate::ingest::read_trace_file(path)?])
    }
}

/// Either predictor, recognized from its file's magic bytes.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Markov(MarkovModel),
    Lstm(Box<LstmModel>),
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Markov(_) => "markov",
            AnyModel::Lstm(_) => "lstm",
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            AnyModel::Markov(m) => save_markov(path, m),
            AnyModel::Lstm(m) => save_lstm(path, m),
        }
    }
}

impl Predictor for AnyModel {
    fn dictionary(&self) -> &Dictionary {
        match self {
            AnyModel::Markov(m) => Predictor::dictionary(m),
            AnyModel::Lstm(m) => Predictor::dictionary(m.as_ref()),
        }
    }

    fn context_len(&self) -> usize {
        match self {
            AnyModel::Markov(m) => m.context_len(),
            AnyModel::Lstm(m) => m.context_len(),
        }
    }

    fn predict_index(&self, context: &[usize]) -> Result<usize> {
        match self {
            AnyModel::Markov(m) => m.predict_index(context),
            AnyModel::Lstm(m) => m.predict_index(context),
        }
    }
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"#! markov") {
        Ok(AnyModel::Markov(MarkovModel::load(bytes.as_slice())?))
    } else {
        Ok(AnyModel::Lstm(Box::new(LstmModel::from_bytes(&bytes)?)))
    }
}

pub fn save_markov(path: &Path, model: &MarkovModel) -> Result<()> {
    let mut buf = Vec::new();
    model.save(&mut buf)?;
    write_file(path, buf)
}

pub fn save_lstm(path: &Path, model: &LstmModel) -> Result<()> {
    write_file(path, model.to_bytes())
}

/// Builds the network for `train`'s dictionary and trains it per `cfg`.
pub fn train_lstm(cfg: &RunConfig, train: &[Trace]) -> Result<(LstmModel, Vec<RoundMetrics>)> {
    let dict = Dictionary::build(train.iter())?;
    let net = cfg.network.resolve(dict.vocab_size());
    let mut model = LstmModel::new(net, dict, cfg.lstm_init_seed())?;
    let metrics = model.train(train, &cfg.schedule)?;
    Ok((model, metrics))
}

#[derive(Serialize)]
struct TrainingLog<'a> {
    version: u32,
    rounds: &'a [RoundMetrics],
}

pub fn training_json(metrics: &[RoundMetrics]) -> String {
    let log = TrainingLog {
        version: ARTIFACT_VERSION,
        rounds: metrics,
    };
    let mut s = serde_json::to_string_pretty(&log).expect("metrics serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonScore {
    pub n: usize,
    pub accuracy: f64,
    /// One-step accuracy raised to the power `n`.
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub horizons: Vec<HorizonScore>,
    /// Self-fed segments of the longest horizon aligned against the truth.
    pub alignment: AlignmentReport,
}

impl ModelEvaluation {
    pub fn accuracy_at(&self, n: usize) -> Option<f64> {
        self.horizons.iter().find(|h| h.n == n).map(|h| h.accuracy)
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for h in &self.horizons {
            writeln!(s, "{}.acc{}={}", self.model, h.n, h.accuracy).unwrap();
            writeln!(s, "{}.expected{}={}", self.model, h.n, h.expected).unwrap();
        }
        for line in self.alignment.to_key_value().lines() {
            writeln!(s, "{}.alignment.{line}", self.model).unwrap();
        }
        writeln!(s, "{}.alignment.aligned_accuracy={}", self.model, self.alignment.aligned_accuracy()).unwrap();
        s
    }
}

fn sampling(cfg: &RunConfig) -> Sampling {
    Sampling {
        warmup: cfg.eval_warmup,
        stride: cfg.eval_stride,
    }
}

/// Step-by-step accuracy at every configured horizon plus segment alignment.
pub fn evaluate_model<P: Predictor + ?Sized>(
    name: &str,
    model: &P,
    tests: &[Trace],
    cfg: &RunConfig,
) -> Result<ModelEvaluation> {
    let mut horizons = cfg.horizons.clone();
    if !horizons.contains(&1) {
        horizons.insert(0, 1);
    }
    let acc = horizon_accuracies(model, tests, &horizons, sampling(cfg))?;
    let acc1 = acc[0];
    let scores = horizons
        .iter()
        .zip(&acc)
        .filter(|(n, _)| cfg.horizons.contains(n))
        .map(|(&n, &a)| HorizonScore {
            n,
            accuracy: a,
            expected: expected_accuracy(acc1, n as u32),
        })
        .collect();
    let opts = AlignOptions::default();
    let longest = horizons.iter().copied().max().unwrap_or(1).max(opts.lookahead + 1);
    let alignment = segment_alignment(model, tests, longest, cfg.eval_warmup, opts)?;
    Ok(ModelEvaluation {
        model: name.to_string(),
        horizons: scores,
        alignment,
    })
}

/// Scores a predicted trace against the true one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceComparison {
    /// Fraction of truth positions holding the same id in the prediction.
    pub positional_accuracy: f64,
    pub alignment: AlignmentReport,
}

impl TraceComparison {
    pub fn to_key_value(&self) -> String {
        let mut s = format!("#! evaluation v{ARTIFACT_VERSION}\n");
        writeln!(s, "accuracy={}", self.positional_accuracy).unwrap();
        s.push_str(&self.alignment.to_key_value());
        writeln!(s, "aligned_accuracy={}", self.alignment.aligned_accuracy()).unwrap();
        s
    }
}

pub fn compare_traces(pred: &Trace, truth: &Trace) -> Result<TraceComparison> {
    if truth.is_empty() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: 0,
        });
    }
    let p: Vec<&EventId> = pred.ids().collect();
    let t: Vec<&EventId> = truth.ids().collect();
    let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
    Ok(TraceComparison {
        positional_accuracy: hits as f64 / t.len() as f64,
        alignment: align_and_classify(&p, &t, AlignOptions::default())?,
    })
}

/// Self-fed continuation of `trace` after its first `warmup` events, as ids.
pub fn predicted_ids<P: Predictor + ?Sized>(model: &P, trace: &Trace, warmup: usize, n: usize) -> Result<Vec<EventId>> {
    let dict = model.dictionary();
    let seq = dict.indices(trace);
    let warm = warmup.min(seq.len());
    if warm == 0 {
        return Err(Error::EmptyWindow);
    }
    continue_indices(model, &seq[..warm], n)?
        .into_iter()
        .map(|i| dict.decode(i))
        .collect()
}

/// Loss injected into every trace with seeds derived per trace and fraction.
pub fn inject_all(cfg: &RunConfig, traces: &[Trace], fraction: f64) -> Result<Vec<GappedTrace>> {
    crate::par::map(traces, |t| {
        let spec = LossSpec {
            fraction,
            mode: cfg.loss_mode,
            seed: cfg.loss_seed(&t.label, fraction),
        };
        inject_loss(t, &spec)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiningRow {
    pub fraction: f64,
    /// Pooled percent of dominant original instances lost on the lossy traces.
    pub lossy_decrease: f64,
    /// The same for the restored traces.
    pub restored_decrease: f64,
}

/// Directory name of a loss level, e.g. `05` for 5%.
pub fn loss_dir_name(fraction: f64) -> String {
    format!("{:02}", (fraction * 100.0).round() as u64)
}

fn mine_all(traces: &[Trace], dict: &Dictionary) -> Result<Vec<MiningReport>> {
    crate::par::map(traces, |t| MiningReport::mine(t, Some(dict)))
        .into_iter()
        .collect()
}

fn write_reports(dir: &Path, reports: &[MiningReport]) -> Result<()> {
    for r in reports {
        write_file(&dir.join(format!("{}.{MINING_EXTENSION}", r.trace_label)), r.format())?;
    }
    Ok(())
}

/// Mines the original, lossy and restored versions of `tests` at every loss
/// level of `cfg` and reports how many dominant original instances each loses.
/// When `dir` is given, every intermediate file is written under it.
pub fn mining_experiment<P: Predictor + ?Sized>(
    model: &P,
    tests: &[Trace],
    cfg: &RunConfig,
    dir: Option<&Path>,
) -> Result<Vec<MiningRow>> {
    let dict = model.dictionary();
    let originals = mine_all(tests, dict)?;
    let dominant: Vec<MiningReport> = originals.iter().map(|r| rank_dominant(r, cfg.top_k)).collect();
    if let Some(d) = dir {
        write_reports(&d.join("original"), &originals)?;
    }
    let mut rows = Vec::with_capacity(cfg.loss_fractions.len());
    for &fraction in &cfg.loss_fractions {
        let gapped = inject_all(cfg, tests, fraction)?;
        let lossy: Vec<Trace> = gapped.iter().map(GappedTrace::to_lossy_trace).collect();
        let restored = restore_all(model, &gapped)?;
        let lossy_reports = mine_all(&lossy, dict)?;
        let restored_reports = mine_all(&restored, dict)?;
        if let Some(d) = dir {
            let level = d.join(loss_dir_name(fraction));
            write_gapped_dir(&level.join("gapped"), &gapped)?;
            write_trace_dir(&level.join("lossy"), &lossy)?;
            write_trace_dir(&level.join("restored"), &restored)?;
            write_reports(&level.join("mining-lossy"), &lossy_reports)?;
            write_reports(&level.join("mining-restored"), &restored_reports)?;
        }
        let pair = |other: &[MiningReport]| -> Vec<(MiningReport, MiningReport)> {
            dominant.iter().cloned().zip(other.iter().cloned()).collect()
        };
        rows.push(MiningRow {
            fraction,
            lossy_decrease: pooled_decrease(&pair(&lossy_reports))?,
            restored_decrease: pooled_decrease(&pair(&restored_reports))?,
        });
    }
    Ok(rows)
}

pub fn format_mining_rows(rows: &[MiningRow]) -> String {
    let mut s = format!("#! mining-summary v{ARTIFACT_VERSION}\n# fraction lossy_decrease restored_decrease\n");
    for r in rows {
        writeln!(s, "{} {} {}", r.fraction, r.lossy_decrease, r.restored_decrease).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub markov: ModelEvaluation,
    pub lstm: ModelEvaluation,
    pub mining: Vec<MiningRow>,
}

impl ReportSummary {
    pub fn to_key_value(&self, cfg: &RunConfig) -> String {
        let mut s = format!("#! report v{ARTIFACT_VERSION}\n");
        writeln!(s, "seed={}", cfg.seed).unwrap();
        for eval in [&self.markov, &self.lstm] {
            for h in &eval.horizons {
                writeln!(s, "{}.acc{}={}", eval.model, h.n, h.accuracy).unwrap();
            }
            writeln!(s, "{}.omission_rate={}", eval.model, eval.alignment.omission_rate).unwrap();
        }
        writeln!(s, "restore.model={}", cfg.restore_with).unwrap();
        for r in &self.mining {
            let pct = loss_dir_name(r.fraction);
            writeln!(s, "mining.{pct}.lossy_decrease={}", r.lossy_decrease).unwrap();
            writeln!(s, "mining.{pct}.restored_decrease={}", r.restored_decrease).unwrap();
        }
        s
    }
}

#[derive(Serialize)]
struct EvaluationJson<'a> {
    version: u32,
    models: [&'a ModelEvaluation; 2],
}

/// Every stage under one seed, writing all artifacts into `out`.
pub fn run_report(cfg: &RunConfig, out: &Path) -> Result<ReportSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    write_file(&out.join("config.cfg"), cfg.to_text())?;

    let traces = generate_traces(&cfg.generator, cfg.trace_count, "trace")?;
    write_trace_dir(&out.join("traces"), &traces)?;
    let (train, test) = split_traces(&traces, &cfg.split_spec())?;
    write_file(&out.join("split.txt"), format_split(&train, &test))?;
    let dict = Dictionary::build(train.iter())?;
    write_file(&out.join("dictionary.txt"), format_dictionary(&dict))?;

    let markov = MarkovModel::learn(&train, cfg.markov_order)?;
    save_markov(&out.join("markov.model"), &markov)?;
    let (lstm, metrics) = train_lstm(cfg, &train)?;
    save_lstm(&out.join("lstm.model"), &lstm)?;
    write_file(&out.join("training.json"), training_json(&metrics))?;

    let markov_eval = evaluate_model("markov", &markov, &test, cfg)?;
    let lstm_eval = evaluate_model("lstm", &lstm, &test, cfg)?;
    let mut text = format!("#! evaluation v{ARTIFACT_VERSION}\n");
    text.push_str(&markov_eval.to_key_value());
    text.push_str(&lstm_eval.to_key_value());
    write_file(&out.join("evaluation.txt"), text)?;
    let json = EvaluationJson {
        version: ARTIFACT_VERSION,
        models: [&markov_eval, &lstm_eval],
    };
    let mut json = serde_json::to_string_pretty(&json).expect("evaluation serializes");
    json.push('\n');
    write_file(&out.join("evaluation.json"), json)?;

    if let Some(first) = test.first() {
        let warm = cfg.eval_warmup.min(first.len().saturating_sub(1)).max(1);
        let truth: Vec<EventId> = first.ids().skip(warm).take(cfg.image_events).cloned().collect();
        if !truth.is_empty() {
            let images = out.join("images");
            fs::create_dir_all(&images)?;
            let render = |name: &str, ids: &[EventId]| -> Result<()> {
                let mut buf = Vec::new();
                render_onehot_image(ids, &dict, &mut buf)?;
                write_file(&images.join(format!("{}.{name}.pgm", first.label)), buf)
            };
            render("truth", &truth)?;
            render("markov", &predicted_ids(&markov, first, warm, truth.len())?)?;
            render("lstm", &predicted_ids(&lstm, first, warm, truth.len())?)?;
        }
    }

    let loss_dir = out.join("loss");
    let mining = match cfg.restore_with {
        RestoreWith::Lstm => mining_experiment(&lstm, &test, cfg, Some(&loss_dir))?,
        RestoreWith::Markov => mining_experiment(&markov, &test, cfg, Some(&loss_dir))?,
    };
    write_file(&out.join("mining.txt"), format_mining_rows(&mining))?;

    let summary = ReportSummary {
        markov: markov_eval,
        lstm: lstm_eval,
        mining,
    };
    write_file(&out.join("report.txt"), summary.to_key_value(cfg))?;
    Ok(summary)
}
