//! Restoration of lossy discrete event traces.
//!
//! An order-n Markov model and a layer-normalized LSTM learn next-event
//! structure from complete traces, fill the gaps of lossy ones, and are
//! scored directly (accuracy, alignment) and downstream (mined properties).

pub mod config;
pub mod error;
pub mod eval;
pub mod gapped;
pub mod ingest;
pub mod lstm;
pub mod markov;
pub mod par;
pub mod pipeline;
pub mod restore;
pub mod seed;
pub mod synth;
pub mod trace;
pub mod trem;

pub use error::{Error, Result};
pub use eval::{align_and_classify, expected_accuracy, n_forward_accuracy, AlignOptions, AlignmentReport};
pub use gapped::{inject_loss, GappedTrace, LossMode, LossSpec};
pub use lstm::{LstmModel, NetworkConfig, TrainingSchedule};
pub use markov::MarkovModel;
pub use restore::{predict_step_by_step, restore_trace, Predictor};
pub use trace::{Dictionary, EncodedVector, Event, EventId, Trace};
pub use trem::{compare_reports, rank_dominant, MiningReport, Template, TreInstance};
