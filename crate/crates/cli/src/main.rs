//! Command-line front end: one subcommand per pipeline stage plus `report`,
//! which runs all of them under one seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trace_restore::config::RunConfig;
use trace_restore::eval::render_onehot_image;
use trace_restore::ingest::{format_trace, read_trace_file, split_traces};
use trace_restore::pipeline::{self, AnyModel};
use trace_restore::restore::restore_all;
use trace_restore::trem::{compare_reports, rank_dominant};
use trace_restore::{Dictionary, EventId, MarkovModel, MiningReport, Trace};

#[derive(Parser)]
#[command(name = "trace-restore", version, about = "Restore lossy event traces with Markov and LSTM predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic traces.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate trace files and write them in canonical form.
    Ingest {
        /// A trace file or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle traces into train and test directories.
    Split {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the event dictionary of a training pool.
    Dict {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn an order-n Markov model.
    TrainMarkov {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the LSTM predictor.
    TrainLstm {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write per-epoch losses as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Remove a fraction of events from every trace.
    InjectLoss {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a trace step by step after its first events.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Number of leading events used as context.
        #[arg(long, default_value_t = 40)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill the gaps of gapped traces.
    Restore {
        #[arg(long)]
        model: PathBuf,
        /// A gapped file or a directory of them.
        #[arg(long)]
        gapped: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted trace against the truth, or a model on test traces.
    Evaluate {
        #[arg(long, requires = "truth", conflicts_with = "model")]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, requires = "traces")]
        model: Option<PathBuf>,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a trace as a one-hot PGM image.
    Render {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// Only the first N events.
        #[arg(long)]
        events: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine response and alternating instances of a trace.
    Mine {
        #[arg(long)]
        trace: PathBuf,
        /// Candidate alphabet; defaults to the trace's own ids.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Percent of the original's dominant instances missing from another report.
    Compare {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        other: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
    /// Run every stage and write all artifacts.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Wrong or missing arguments, as opposed to a failing stage.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, args.seed) {
        (Some(path), _) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(seed)) => RunConfig::parse(&format!("#! config v1\nseed = {seed}\n"))?,
        (None, None) => return Err(usage("either --config or --seed is required")),
    };
    if let Some(seed) = args.seed {
        cfg.reseed(seed);
    }
    Ok(cfg)
}

fn out_dir(out: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    out.clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| usage("--out is required when the configuration sets no `out`"))
}

fn read_traces(path: &Path) -> Result<Vec<Trace>> {
    let traces = pipeline::read_traces(path).with_context(|| format!("reading traces from {}", path.display()))?;
    if traces.is_empty() {
        bail!("no .trace files in {}", path.display());
    }
    Ok(traces)
}

fn read_dict(path: &Path) -> Result<Dictionary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(pipeline::parse_dictionary(&text)?)
}

fn load_model(path: &Path) -> Result<AnyModel> {
    pipeline::load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Synth { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let out = out_dir(&out, &cfg)?;
            let traces = trace_restore::synth::generate_traces(&cfg.generator, cfg.trace_count, "trace")?;
            pipeline::write_trace_dir(&out, &traces)?;
            let events: usize = traces.iter().map(Trace::len).sum();
            Ok(format!("synth: {} traces, {events} events -> {}", traces.len(), out.display()))
        }
        Command::Ingest { input, out } => {
            let traces = read_traces(&input)?;
            pipeline::write_trace_dir(&out, &traces)?;
            Ok(format!("ingest: {} traces validated -> {}", traces.len(), out.display()))
        }
        Command::Split { cfg, traces, out } => {
            let cfg = load_config(&cfg)?;
            let all = read_traces(&traces)?;
            let (train, test) = split_traces(&all, &cfg.split_spec())?;
            pipeline::write_trace_dir(&out.join("train"), &train)?;
            pipeline::write_trace_dir(&out.join("test"), &test)?;
            pipeline::write_file(&out.join("split.txt"), pipeline::format_split(&train, &test))?;
            Ok(format!("split: {} train, {} test -> {}", train.len(), test.len(), out.display()))
        }
        Command::Dict { traces, out } => {
            let traces = read_traces(&traces)?;
            let dict = Dictionary::build(traces.iter())?;
            pipeline::write_file(&out, pipeline::format_dictionary(&dict))?;
            Ok(format!("dict: {} ids -> {}", dict.ids().len(), out.display()))
        }
        Command::TrainMarkov { cfg, traces, out } => {
            let cfg = load_config(&cfg)?;
            let traces = read_traces(&traces)?;
            let model = MarkovModel::learn(&traces, cfg.markov_order)?;
            pipeline::save_markov(&out, &model)?;
            Ok(format!(
                "train-markov: order {}, {} states -> {}",
                model.order(),
                model.state_count(),
                out.display()
            ))
        }
        Command::TrainLstm { cfg, traces, out, log } => {
            let cfg = load_config(&cfg)?;
            let traces = read_traces(&traces)?;
            let (model, metrics) = pipeline::train_lstm(&cfg, &traces)?;
            pipeline::save_lstm(&out, &model)?;
            if let Some(log) = log {
                pipeline::write_file(&log, pipeline::training_json(&metrics))?;
            }
            let last = metrics.last().and_then(|r| r.epochs.last()).map(|e| e.validation_loss);
            Ok(format!(
                "train-lstm: {} rounds, final validation loss {} -> {}",
                metrics.len(),
                last.map_or("n/a".to_string(), |v| format!("{v:.4}")),
                out.display()
            ))
        }
        Command::InjectLoss { cfg, traces, fraction, out } => {
            let cfg = load_config(&cfg)?;
            let traces = read_traces(&traces)?;
            let gapped = pipeline::inject_all(&cfg, &traces, fraction)?;
            pipeline::write_gapped_dir(&out, &gapped)?;
            let missing: usize = gapped.iter().map(|g| g.missing_count()).sum();
            Ok(format!("inject-loss: {missing} events removed from {} traces -> {}", gapped.len(), out.display()))
        }
        Command::Predict { model, trace, warmup, horizon, out } => {
            let model = load_model(&model)?;
            let trace = read_trace_file(&trace)?;
            if warmup == 0 || warmup > trace.len() {
                return Err(usage(format!("--warmup must be in 1..={}", trace.len())));
            }
            let ids = pipeline::predicted_ids(&model, &trace, warmup, horizon)?;
            let joined: Vec<&str> = ids.iter().map(EventId::as_str).collect();
            if let Some(out) = out {
                let predicted = Trace::new(trace.label.clone(), ids.iter().cloned().map(trace_restore::Event::untimed).collect());
                pipeline::write_file(&out, format_trace(&predicted))?;
            }
            Ok(format!("predict ({}): {}", model.kind(), joined.join(" ")))
        }
        Command::Restore { model, gapped, out } => {
            let model = load_model(&model)?;
            let gapped = if gapped.is_dir() {
                pipeline::read_gapped_dir(&gapped)?
            } else {
                vec![pipeline::read_gapped_file(&gapped)?]
            };
            let restored = restore_all(&model, &gapped)?;
            pipeline::write_trace_dir(&out, &restored)?;
            let filled: usize = gapped.iter().map(|g| g.missing_count()).sum();
            Ok(format!(
                "restore ({}): {filled} events filled in {} traces -> {}",
                model.kind(),
                restored.len(),
                out.display()
            ))
        }
        Command::Evaluate { pred, truth, model, traces, cfg, out } => match (pred, truth, model, traces) {
            (Some(pred), Some(truth), None, _) => {
                let comparison = pipeline::compare_traces(&read_trace_file(&pred)?, &read_trace_file(&truth)?)?;
                if let Some(out) = out {
                    pipeline::write_file(&out, comparison.to_key_value())?;
                }
                let a = &comparison.alignment;
                Ok(format!(
                    "evaluate: accuracy {} omissions {} ordering {} substitutions {}",
                    comparison.positional_accuracy, a.omissions, a.ordering_mistakes, a.substitutions
                ))
            }
            (None, None, Some(model), Some(traces)) => {
                let cfg = load_config(&cfg)?;
                let model = load_model(&model)?;
                let traces = read_traces(&traces)?;
                let eval = pipeline::evaluate_model(model.kind(), &model, &traces, &cfg)?;
                if let Some(out) = out {
                    pipeline::write_file(&out, format!("#! evaluation v1\n{}", eval.to_key_value()))?;
                }
                let scores: Vec<String> = eval.horizons.iter().map(|h| format!("acc{}={:.4}", h.n, h.accuracy)).collect();
                Ok(format!(
                    "evaluate ({}): {} omission_rate={:.4}",
                    model.kind(),
                    scores.join(" "),
                    eval.alignment.omission_rate
                ))
            }
            _ => Err(usage("evaluate needs either --pred and --truth, or --model and --traces")),
        },
        Command::Render { trace, dict, events, out } => {
            let trace = read_trace_file(&trace)?;
            let dict = read_dict(&dict)?;
            let ids: Vec<EventId> = trace.ids().take(events.unwrap_or(usize::MAX)).cloned().collect();
            let mut buf = Vec::new();
            render_onehot_image(&ids, &dict, &mut buf)?;
            pipeline::write_file(&out, buf)?;
            Ok(format!("render: {}x{} image -> {}", ids.len(), dict.vocab_size(), out.display()))
        }
        Command::Mine { trace, dict, out } => {
            let trace = read_trace_file(&trace)?;
            let dict = dict.as_deref().map(read_dict).transpose()?;
            let report = MiningReport::mine(&trace, dict.as_ref())?;
            pipeline::write_file(&out, report.format())?;
            Ok(format!("mine: {} instances -> {}", report.instances.len(), out.display()))
        }
        Command::Compare { original, other, top_k } => {
            let read = |p: &Path| -> Result<MiningReport> {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(MiningReport::parse(&text)?)
            };
            let dominant = rank_dominant(&read(&original)?, top_k);
            let decrease = compare_reports(&dominant, &read(&other)?)?;
            Ok(format!("compare: {decrease:.2}% of {} dominant instances lost", dominant.instances.len()))
        }
        Command::Report { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let out = out_dir(&out, &cfg)?;
            let s = pipeline::run_report(&cfg, &out)?;
            let acc = |e: &pipeline::ModelEvaluation| {
                e.horizons
                    .iter()
                    .map(|h| format!("acc{}={:.4}", h.n, h.accuracy))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            Ok(format!(
                "report: markov {} | lstm {} | {} loss levels -> {}",
                acc(&s.markov),
                acc(&s.lstm),
                s.mining.len(),
                out.display()
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
