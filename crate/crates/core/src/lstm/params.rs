//! Flat parameter storage and its layout.
//!
//! All learned values live in one `Vec<f64>`; [`Layout`] records where each
//! tensor sits. Gradients use the same layout, which keeps updates, clipping,
//! checksums and finite-difference checks simple loops over one slice.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::NetworkConfig;

/// Number of stacked recurrent layers.
pub const LSTM_LAYERS: usize = 2;

/// Gate blocks inside one recurrent layer's pre-activation vector.
pub const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmLayout {
    pub input_dim: usize,
    pub hidden: usize,
    /// `4H x input_dim`, row-major; gate order input, candidate, forget, output.
    pub w_in: Range<usize>,
    /// `4H x H`, row-major.
    pub w_rec: Range<usize>,
    pub bias: Range<usize>,
    pub gate_gain: Range<usize>,
    pub gate_offset: Range<usize>,
    pub state_gain: Range<usize>,
    pub state_offset: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub vocab: usize,
    pub dense: usize,
    pub hidden: usize,
    pub outputs: usize,
    /// `D x V`
    pub dense1_w: Range<usize>,
    pub dense1_b: Range<usize>,
    /// `D x D`
    pub dense2_w: Range<usize>,
    pub dense2_b: Range<usize>,
    pub lstm: [LstmLayout; LSTM_LAYERS],
    /// `nV x H`
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let (v, d, h) = (cfg.vocab, cfg.dense_width, cfg.lstm_width);
        let outputs = cfg.direct_horizon * v;
        let mut c = Cursor(0);
        let dense1_w = c.take(d * v);
        let dense1_b = c.take(d);
        let dense2_w = c.take(d * d);
        let dense2_b = c.take(d);
        let mut layer = |input_dim: usize| LstmLayout {
            input_dim,
            hidden: h,
            w_in: c.take(GATES * h * input_dim),
            w_rec: c.take(GATES * h * h),
            bias: c.take(GATES * h),
            gate_gain: c.take(GATES * h),
            gate_offset: c.take(GATES * h),
            state_gain: c.take(h),
            state_offset: c.take(h),
        };
        let lstm = [layer(d), layer(h)];
        let out_w = c.take(outputs * h);
        let out_b = c.take(outputs);
        Layout {
            vocab: v,
            dense: d,
            hidden: h,
            outputs,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
            lstm,
            out_w,
            out_b,
            total: c.0,
        }
    }
}

/// Learned values of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub(crate) values: Vec<f64>,
}

impl Parameters {
    pub fn zeros(layout: &Layout) -> Self {
        Parameters {
            values: vec![0.0; layout.total],
        }
    }

    /// Weights uniform in `[-s, s]` with `s = 1/sqrt(fan_in)`, biases and
    /// layer-norm offsets zero, layer-norm gains one.
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Parameters::zeros(layout);
        let mut fill = |range: &Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.values[range.clone()] {
                *v = rng.gen_range(-s..=s);
            }
        };
        fill(&layout.dense1_w, layout.vocab, &mut rng);
        fill(&layout.dense2_w, layout.dense, &mut rng);
        for l in &layout.lstm {
            // The cell sees input and recurrent state as one concatenated vector.
            let fan_in = l.input_dim + l.hidden;
            fill(&l.w_in, fan_in, &mut rng);
            fill(&l.w_rec, fan_in, &mut rng);
        }
        fill(&layout.out_w, layout.hidden, &mut rng);
        for l in &layout.lstm {
            p.values[l.gate_gain.clone()].fill(1.0);
            p.values[l.state_gain.clone()].fill(1.0);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the little-endian bytes of every value.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let cfg = NetworkConfig::for_vocab(44);
        let l = Layout::new(&cfg);
        assert_eq!(l.dense, 88);
        assert_eq!(l.hidden, 352);
        assert_eq!(l.outputs, 44);
        assert_eq!(l.dense1_w.start, 0);
        assert_eq!(l.out_b.end, l.total);
        assert_eq!(l.lstm[0].w_in.len(), 4 * 352 * 88);
        assert_eq!(l.lstm[1].w_in.len(), 4 * 352 * 352);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = NetworkConfig::tiny(5, 4, 6, 3);
        let layout = Layout::new(&cfg);
        let a = Parameters::init(&layout, 9);
        assert_eq!(a, Parameters::init(&layout, 9));
        assert_ne!(a, Parameters::init(&layout, 10));
        let s = 1.0 / 5f64.sqrt();
        assert!(a.values[layout.dense1_w.clone()].iter().all(|v| v.abs() <= s));
        assert!(a.values[layout.lstm[0].gate_gain.clone()].iter().all(|&v| v == 1.0));
        assert!(a.values[layout.out_b.clone()].iter().all(|&v| v == 0.0));
    }
}
