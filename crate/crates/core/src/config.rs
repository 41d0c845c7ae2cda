//! Run configuration as `key = value` text.
//!
//! ```text
//! #! config v1
//! seed = 7
//! synth.periodic = A:0.01:0, B:0.05:0.02     # id:period:jitter_fraction
//! synth.triggered = T:A:0.05:0.003           # id:trigger:probability:delay
//! synth.rare = R:2                           # id:rate_per_1000_events
//! synth.duration = 3
//! synth.traces = 20
//! split.train = 15
//! split.test = 5
//! lstm.lstm_width = 32
//! train.rounds = 4
//! loss.fractions = 0.05, 0.1, 0.15, 0.2, 0.25
//! ```
//!
//! Every key except `seed` has a default. Unknown and repeated keys are
//! rejected. All randomness derives from `seed`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gapped::LossMode;
use crate::ingest::SplitSpec;
use crate::lstm::{NetworkConfig, TrainingSchedule};
use crate::markov::DEFAULT_ORDER;
use crate::seed::derive;
use crate::synth::{GeneratorSpec, Periodic, Rare, Triggered};
use crate::trace::EventId;

pub const CONFIG_VERSION: u32 = 1;

/// Which model fills the gaps of lossy traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestoreWith {
    Lstm,
    Markov,
}

impl FromStr for RestoreWith {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(RestoreWith::Lstm),
            "markov" => Ok(RestoreWith::Markov),
            _ => Err(Error::Config(format!("restore.model must be `lstm` or `markov`, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for RestoreWith {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RestoreWith::Lstm => "lstm",
            RestoreWith::Markov => "markov",
        })
    }
}

/// Network settings; unset widths follow the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSettings {
    pub dense_width: Option<usize>,
    pub lstm_width: Option<usize>,
    pub unroll_steps: usize,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    pub recurrent_dropout: f64,
    pub direct_horizon: usize,
}

impl NetworkSettings {
    pub fn resolve(&self, vocab: usize) -> NetworkConfig {
        let base = NetworkConfig::for_vocab(vocab);
        NetworkConfig {
            vocab,
            dense_width: self.dense_width.unwrap_or(base.dense_width),
            lstm_width: self.lstm_width.unwrap_or(base.lstm_width),
            unroll_steps: self.unroll_steps,
            input_dropout: self.input_dropout,
            hidden_dropout: self.hidden_dropout,
            recurrent_dropout: self.recurrent_dropout,
            direct_horizon: self.direct_horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Generator with its seed already derived from `seed`.
    pub generator: GeneratorSpec,
    pub trace_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub markov_order: usize,
    pub network: NetworkSettings,
    /// Schedule with its seed already derived from `seed`.
    pub schedule: TrainingSchedule,
    pub loss_fractions: Vec<f64>,
    pub loss_mode: LossMode,
    pub restore_with: RestoreWith,
    pub top_k: usize,
    pub horizons: Vec<usize>,
    pub eval_warmup: usize,
    pub eval_stride: usize,
    pub image_events: usize,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_count: self.train_count,
            test_count: self.test_count,
            shuffle_seed: derive(self.seed, "split"),
        }
    }

    pub fn lstm_init_seed(&self) -> u64 {
        derive(self.seed, "lstm-init")
    }

    pub fn loss_seed(&self, label: &str, fraction: f64) -> u64 {
        derive(self.seed, &format!("loss-{label}-{fraction}"))
    }

    /// Replaces the global seed and everything derived from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.generator.seed = derive(seed, "synth");
        self.schedule.seed = derive(seed, "lstm-train");
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if let Some(rest) = line.trim().strip_prefix("#!") {
                let version = rest
                    .trim()
                    .strip_prefix("config v")
                    .and_then(|v| v.parse::<u32>().ok())
                    .ok_or_else(|| Error::MalformedLine {
                        line: line_no,
                        reason: "bad version header".into(),
                    })?;
                if version != CONFIG_VERSION {
                    return Err(Error::VersionMismatch {
                        found: version,
                        expected: CONFIG_VERSION,
                    });
                }
                continue;
            }
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::MalformedLine {
                line: line_no,
                reason: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            if raw.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("key `{key}` given twice")));
            }
        }
        let mut fields = Fields(raw);
        let cfg = Self::from_fields(&mut fields)?;
        if let Some(key) = fields.0.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_fields(f: &mut Fields) -> Result<Self> {
        let seed: u64 = f.take("seed")?.ok_or_else(|| Error::Config("`seed` is required".into()))?;
        let defaults = TrainingSchedule::default();
        let mut cfg = RunConfig {
            seed,
            generator: GeneratorSpec {
                periodic: f.list("synth.periodic", parse_periodic)?.unwrap_or_else(default_periodic),
                triggered: f.list("synth.triggered", parse_triggered)?.unwrap_or_default(),
                rare: f.list("synth.rare", parse_rare)?.unwrap_or_default(),
                duration: f.take("synth.duration")?.unwrap_or(10.0),
                seed: 0,
            },
            trace_count: f.take("synth.traces")?.unwrap_or(20),
            train_count: f.take("split.train")?.unwrap_or(15),
            test_count: f.take("split.test")?.unwrap_or(5),
            markov_order: f.take("markov.order")?.unwrap_or(DEFAULT_ORDER),
            network: NetworkSettings {
                dense_width: f.take("lstm.dense_width")?,
                lstm_width: f.take("lstm.lstm_width")?,
                unroll_steps: f.take("lstm.unroll_steps")?.unwrap_or(40),
                input_dropout: f.take("lstm.input_dropout")?.unwrap_or(0.2),
                hidden_dropout: f.take("lstm.hidden_dropout")?.unwrap_or(0.4),
                recurrent_dropout: f.take("lstm.recurrent_dropout")?.unwrap_or(0.4),
                direct_horizon: f.take("lstm.direct_horizon")?.unwrap_or(1),
            },
            schedule: TrainingSchedule {
                rounds: f.take("train.rounds")?.unwrap_or(defaults.rounds),
                epochs_flat: f.take("train.epochs_flat")?.unwrap_or(defaults.epochs_flat),
                epochs_decay: f.take("train.epochs_decay")?.unwrap_or(defaults.epochs_decay),
                learning_rate: f.take("train.learning_rate")?.unwrap_or(defaults.learning_rate),
                decay: f.take("train.decay")?.unwrap_or(defaults.decay),
                batch_size: f.take("train.batch_size")?.unwrap_or(defaults.batch_size),
                clip_norm: f.take("train.clip_norm")?.unwrap_or(defaults.clip_norm),
                max_validation_windows: f.take("train.max_validation_windows")?,
                seed: 0,
            },
            loss_fractions: f
                .list("loss.fractions", |s| parse_num::<f64>("loss.fractions", s))?
                .unwrap_or_else(|| vec![0.05, 0.10, 0.15, 0.20, 0.25]),
            loss_mode: f.take("loss.mode")?.unwrap_or(LossMode::Scattered),
            restore_with: f.take("restore.model")?.unwrap_or(RestoreWith::Lstm),
            top_k: f.take("mining.top_k")?.unwrap_or(20),
            horizons: f
                .list("eval.horizons", |s| parse_num::<usize>("eval.horizons", s))?
                .unwrap_or_else(|| vec![1, 10, 20]),
            eval_warmup: f.take("eval.warmup")?.unwrap_or(40),
            eval_stride: f.take("eval.stride")?.unwrap_or(1),
            image_events: f.take("eval.image_events")?.unwrap_or(100),
            out: f.take::<String>("out")?.map(PathBuf::from),
        };
        cfg.reseed(seed);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.schedule.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.train_count < 2 {
            return bad("split.train must be at least 2");
        }
        if self.test_count < 1 {
            return bad("split.test must be at least 1");
        }
        if self.train_count + self.test_count > self.trace_count {
            return bad("split.train + split.test exceeds synth.traces");
        }
        if self.markov_order == 0 {
            return bad("markov.order must be at least 1");
        }
        if self.top_k == 0 {
            return bad("mining.top_k must be at least 1");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("eval.horizons must be positive");
        }
        if self.eval_stride == 0 || self.image_events == 0 {
            return bad("eval.stride and eval.image_events must be positive");
        }
        if let Some(&f) = self.loss_fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return Err(Error::InvalidFraction(f));
        }
        self.network.resolve(2).validate()
    }

    /// Canonical text form; parsing it gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let mut s = format!("#! config v{CONFIG_VERSION}\n");
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        let g = &self.generator;
        kv("seed", self.seed.to_string());
        kv(
            "synth.periodic",
            join(g.periodic.iter().map(|p| format!("{}:{}:{}", p.id, p.period, p.jitter_fraction))),
        );
        if !g.triggered.is_empty() {
            kv(
                "synth.triggered",
                join(g.triggered.iter().map(|t| format!("{}:{}:{}:{}", t.id, t.trigger_id, t.probability, t.delay))),
            );
        }
        if !g.rare.is_empty() {
            kv("synth.rare", join(g.rare.iter().map(|r| format!("{}:{}", r.id, r.rate_per_1000_events))));
        }
        kv("synth.duration", g.duration.to_string());
        kv("synth.traces", self.trace_count.to_string());
        kv("split.train", self.train_count.to_string());
        kv("split.test", self.test_count.to_string());
        kv("markov.order", self.markov_order.to_string());
        let n = &self.network;
        if let Some(w) = n.dense_width {
            kv("lstm.dense_width", w.to_string());
        }
        if let Some(w) = n.lstm_width {
            kv("lstm.lstm_width", w.to_string());
        }
        kv("lstm.unroll_steps", n.unroll_steps.to_string());
        kv("lstm.input_dropout", n.input_dropout.to_string());
        kv("lstm.hidden_dropout", n.hidden_dropout.to_string());
        kv("lstm.recurrent_dropout", n.recurrent_dropout.to_string());
        kv("lstm.direct_horizon", n.direct_horizon.to_string());
        let t = &self.schedule;
        kv("train.rounds", t.rounds.to_string());
        kv("train.epochs_flat", t.epochs_flat.to_string());
        kv("train.epochs_decay", t.epochs_decay.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.decay", t.decay.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.clip_norm", t.clip_norm.to_string());
        if let Some(m) = t.max_validation_windows {
            kv("train.max_validation_windows", m.to_string());
        }
        kv("loss.fractions", join(self.loss_fractions.iter().map(f64::to_string)));
        kv("loss.mode", self.loss_mode.to_string());
        kv("restore.model", self.restore_with.to_string());
        kv("mining.top_k", self.top_k.to_string());
        kv("eval.horizons", join(self.horizons.iter().map(usize::to_string)));
        kv("eval.warmup", self.eval_warmup.to_string());
        kv("eval.stride", self.eval_stride.to_string());
        kv("eval.image_events", self.image_events.to_string());
        if let Some(out) = &self.out {
            kv("out", out.display().to_string());
        }
        s
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(", ")
}

fn default_periodic() -> Vec<Periodic> {
    vec![Periodic {
        id: EventId::from("A"),
        period: 0.01,
        jitter_fraction: 0.0,
    }]
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value {v:?} for `{key}`"))),
        }
    }

    fn list<T>(&mut self, key: &str, item: impl Fn(&str) -> Result<T>) -> Result<Option<Vec<T>>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(Some(Vec::new())),
            Some(v) => v.split(',').map(|s| item(s.trim())).collect::<Result<_>>().map(Some),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("bad value {s:?} in `{key}`")))
}

fn parse_id(s: &str) -> Result<EventId> {
    EventId::new(s).ok_or_else(|| Error::Config(format!("bad event id {s:?}")))
}

fn split_entry<'a>(key: &str, s: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = s.split(':').collect();
    if f.len() != n {
        return Err(Error::Config(format!("`{key}` entries need {n} `:`-separated fields, got {s:?}")));
    }
    Ok(f)
}

fn parse_periodic(s: &str) -> Result<Periodic> {
    let f = split_entry("synth.periodic", s, 3)?;
    Ok(Periodic {
        id: parse_id(f[0])?,
        period: parse_num("synth.periodic", f[1])?,
        jitter_fraction: parse_num("synth.periodic", f[2])?,
    })
}

fn parse_triggered(s: &str) -> Result<Triggered> {
    let f = split_entry("synth.triggered", s, 4)?;
    Ok(Triggered {
        id: parse_id(f[0])?,
        trigger_id: parse_id(f[1])?,
        probability: parse_num("synth.triggered", f[2])?,
        delay: parse_num("synth.triggered", f[3])?,
    })
}

fn parse_rare(s: &str) -> Result<Rare> {
    let f = split_entry("synth.rare", s, 2)?;
    Ok(Rare {
        id: parse_id(f[0])?,
        rate_per_1000_events: parse_num("synth.rare", f[1])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "#! config v1
seed = 7
synth.periodic = A:0.01:0, C:0.05:0.02   # clock and a jittered message
synth.triggered = T:A:0.05:0.003
synth.rare = R:2
synth.duration = 3
lstm.lstm_width = 32
train.rounds = 4
loss.fractions = 0.05, 0.25
";

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.generator.periodic.len(), 2);
        assert_eq!(cfg.generator.triggered[0].trigger_id, EventId::from("A"));
        assert_eq!(cfg.network.lstm_width, Some(32));
        assert_eq!(cfg.network.resolve(5).dense_width, 10);
        assert_eq!(cfg.loss_fractions, vec![0.05, 0.25]);
        assert_eq!(cfg.generator.seed, derive(7, "synth"));
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_text(), cfg.to_text());
    }

    #[test]
    fn rejections() {
        assert!(matches!(RunConfig::parse("synth.traces = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("seed = 1\nfoo = 2\n"), Err(Error::Config(m)) if m.contains("foo")));
        assert!(matches!(RunConfig::parse("seed = 1\nseed = 2\n"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::parse("#! config v3\nseed = 1\n"),
            Err(Error::VersionMismatch { found: 3, .. })
        ));
        assert!(RunConfig::parse("seed = 1\nsynth.periodic = A:0.1\n").is_err());
        assert!(matches!(
            RunConfig::parse("seed = 1\nloss.fractions = 1.5\n"),
            Err(Error::InvalidFraction(_))
        ));
        assert!(RunConfig::parse("seed = 1\nsplit.train = 30\n").is_err());
    }

    #[test]
    fn reseeding_changes_derived_streams() {
        let mut cfg = RunConfig::parse("seed = 1\n").unwrap();
        let before = (cfg.generator.seed, cfg.schedule.seed, cfg.split_spec().shuffle_seed);
        cfg.reseed(2);
        let after = (cfg.generator.seed, cfg.schedule.seed, cfg.split_spec().shuffle_seed);
        assert_ne!(before.0, after.0);
        assert_ne!(before.1, after.1);
        assert_ne!(before.2, after.2);
    }
}
