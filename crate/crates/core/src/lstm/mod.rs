//! Layer-normalized LSTM next-event model, written from scratch.

mod io;
pub mod layer_norm;
pub mod network;
pub mod params;
pub mod train;

pub use io::MODEL_VERSION;
pub use layer_norm::layer_norm;
pub use network::{backward, forward, logloss, target_vector, CellState, DropoutMasks, ForwardPass, LstmLayer};
pub use params::{Layout, Parameters};
pub use train::{EpochMetrics, RoundMetrics, TrainingSchedule};

use crate::error::{Error, Result};
use crate::restore::Predictor;
use crate::trace::{argmax, Dictionary};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Input width, including the OTHER slot.
    pub vocab: usize,
    pub dense_width: usize,
    pub lstm_width: usize,
    pub unroll_steps: usize,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    pub recurrent_dropout: f64,
    /// Events predicted per forward pass; the output layer has `n * vocab` nodes.
    pub direct_horizon: usize,
}

impl NetworkConfig {
    /// Full-size configuration: dense layers twice and recurrent layers eight
    /// times the vocabulary, 40 unrolled steps.
    pub fn for_vocab(vocab: usize) -> Self {
        NetworkConfig {
            vocab,
            dense_width: 2 * vocab,
            lstm_width: 8 * vocab,
            unroll_steps: 40,
            input_dropout: 0.2,
            hidden_dropout: 0.4,
            recurrent_dropout: 0.4,
            direct_horizon: 1,
        }
    }

    /// Dropout-free configuration with explicit widths.
    pub fn tiny(vocab: usize, dense: usize, lstm: usize, unroll: usize) -> Self {
        NetworkConfig {
            vocab,
            dense_width: dense,
            lstm_width: lstm,
            unroll_steps: unroll,
            input_dropout: 0.0,
            hidden_dropout: 0.0,
            recurrent_dropout: 0.0,
            direct_horizon: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.vocab,
            self.dense_width,
            self.lstm_width,
            self.unroll_steps,
            self.direct_horizon,
        ];
        if widths.contains(&0) {
            return Err(Error::InvalidSpec("network widths must be >= 1".into()));
        }
        if self.vocab < 2 || self.lstm_width < 2 {
            return Err(Error::InvalidSpec(
                "vocabulary and recurrent width must be >= 2 for layer normalization".into(),
            ));
        }
        for rate in [self.input_dropout, self.hidden_dropout, self.recurrent_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidSpec(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Configuration, dictionary, learned parameters and training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    config: NetworkConfig,
    layout: Layout,
    dict: Dictionary,
    params: Parameters,
    /// Event frequencies of the training pool, used when there is no context.
    prior: Vec<u64>,
    rounds_trained: usize,
}

impl LstmModel {
    /// Fresh model with seeded uniform initialization.
    pub fn new(config: NetworkConfig, dict: Dictionary, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab != dict.vocab_size() {
            return Err(Error::InvalidSpec(format!(
                "config vocabulary {} does not match dictionary size {}",
                config.vocab,
                dict.vocab_size()
            )));
        }
        let layout = Layout::new(&config);
        let params = Parameters::init(&layout, seed);
        Ok(LstmModel {
            prior: vec![0; config.vocab],
            config,
            layout,
            dict,
            params,
            rounds_trained: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn prior(&self) -> &[u64] {
        &self.prior
    }

    pub fn set_prior(&mut self, prior: Vec<u64>) -> Result<()> {
        if prior.len() != self.config.vocab {
            return Err(Error::LengthMismatch {
                left: prior.len(),
                right: self.config.vocab,
            });
        }
        self.prior = prior;
        Ok(())
    }

    pub fn rounds_trained(&self) -> usize {
        self.rounds_trained
    }

    /// Inference over at most `unroll_steps` trailing events of `window`.
    pub fn forward_window(&self, window: &[usize]) -> Result<Vec<f64>> {
        if window.is_empty() {
            return Err(Error::EmptyWindow);
        }
        if let Some(&bad) = window.iter().find(|&&i| i >= self.config.vocab) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                size: self.config.vocab,
            });
        }
        let start = window.len().saturating_sub(self.config.unroll_steps);
        Ok(forward(&self.layout, &self.params, &window[start..], None).output)
    }
}

impl Predictor for LstmModel {
    fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    fn context_len(&self) -> usize {
        self.config.unroll_steps
    }

    fn predict_index(&self, context: &[usize]) -> Result<usize> {
        if self.rounds_trained == 0 && self.prior.iter().all(|&c| c == 0) {
            return Err(Error::UntrainedModel);
        }
        if context.is_empty() {
            let prior: Vec<f64> = self.prior.iter().map(|&c| c as f64).collect();
            return Ok(argmax(&prior));
        }
        let out = self.forward_window(context)?;
        Ok(argmax(&out[..self.config.vocab]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::EventId;

    fn dict(n: usize) -> Dictionary {
        Dictionary::from_ids((0..n).map(|i| EventId::from(format!("{i:X}").as_str())).collect())
            .unwrap()
    }

    #[test]
    fn paper_scale_widths() {
        let cfg = NetworkConfig::for_vocab(44);
        assert_eq!((cfg.dense_width, cfg.lstm_width, cfg.unroll_steps), (88, 352, 40));
        assert_eq!((cfg.input_dropout, cfg.hidden_dropout, cfg.recurrent_dropout), (0.2, 0.4, 0.4));
    }

    #[test]
    fn window_of_forty_on_vocab_44() {
        let cfg = NetworkConfig {
            dense_width: 8,
            lstm_width: 8,
            ..NetworkConfig::for_vocab(44)
        };
        let m = LstmModel::new(cfg, dict(43), 1).unwrap();
        let window: Vec<usize> = (0..40).map(|i| i % 44).collect();
        let out = m.forward_window(&window).unwrap();
        assert_eq!(out.len(), 44);
        assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(out, m.forward_window(&window).unwrap());
    }

    #[test]
    fn direct_output_width() {
        let cfg = NetworkConfig {
            direct_horizon: 10,
            ..NetworkConfig::tiny(44, 4, 4, 5)
        };
        let m = LstmModel::new(cfg, dict(43), 1).unwrap();
        assert_eq!(m.forward_window(&[0, 1]).unwrap().len(), 440);
    }

    #[test]
    fn empty_window_and_untrained_errors() {
        let m = LstmModel::new(NetworkConfig::tiny(3, 2, 2, 2), dict(2), 0).unwrap();
        assert!(matches!(m.forward_window(&[]), Err(Error::EmptyWindow)));
        assert!(matches!(m.predict_index(&[0]), Err(Error::UntrainedModel)));
        assert!(LstmModel::new(NetworkConfig::tiny(4, 2, 2, 2), dict(2), 0).is_err());
        let bad = NetworkConfig {
            hidden_dropout: 1.0,
            ..NetworkConfig::tiny(3, 2, 2, 2)
        };
        assert!(LstmModel::new(bad, dict(2), 0).is_err());
    }
}
