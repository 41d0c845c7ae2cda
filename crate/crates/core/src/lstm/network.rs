//! Forward and backward passes of the full stack:
//! one-hot input -> dropout -> dense tanh -> dense tanh -> two layer-normalized
//! LSTM layers unrolled over the window -> dense sigmoid head on the last step.

use std::ops::Range;

use rand::Rng;

use super::layer_norm::{layer_norm_backward, layer_norm_into, LayerNormCache};
use super::params::{Layout, LstmLayout, Parameters, GATES, LSTM_LAYERS};
use super::NetworkConfig;

/// Added to the forget-gate pre-activation after normalization.
pub const FORGET_BIAS: f64 = 1.0;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside the loss.
pub const CLAMP: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W x` for a row-major `rows x x.len()` matrix.
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += W^T dz` and `dW += dz x^T`.
fn matvec_backward(w: &[f64], dw: &mut [f64], x: &[f64], dz: &[f64], dx: &mut [f64]) {
    let cols = x.len();
    for ((&d, row), drow) in dz.iter().zip(w.chunks_exact(cols)).zip(dw.chunks_exact_mut(cols)) {
        if d == 0.0 {
            continue;
        }
        for (dxi, &wi) in dx.iter_mut().zip(row) {
            *dxi += d * wi;
        }
        for (dwi, &xi) in drow.iter_mut().zip(x) {
            *dwi += d * xi;
        }
    }
}

/// Mutable views of two disjoint ranges, `a` before `b`.
fn two_mut(buf: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

/// Inverted-dropout multipliers for one sequence. A multiplier is either 0 or
/// `1 / (1 - rate)`; the recurrent masks are shared by every step.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// Per step, the multiplier of the active one-hot element.
    pub input: Vec<f64>,
    pub dense1: Vec<Vec<f64>>,
    pub dense2: Vec<Vec<f64>>,
    /// Per recurrent layer, applied to the candidate vector.
    pub recurrent: [Vec<f64>; LSTM_LAYERS],
}

impl DropoutMasks {
    pub fn sample<R: Rng>(cfg: &NetworkConfig, steps: usize, rng: &mut R) -> Self {
        fn draw<R: Rng>(rate: f64, n: usize, rng: &mut R) -> Vec<f64> {
            if rate <= 0.0 {
                return vec![1.0; n];
            }
            let keep = 1.0 / (1.0 - rate);
            (0..n)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect()
        }
        DropoutMasks {
            input: draw(cfg.input_dropout, steps, rng),
            dense1: (0..steps).map(|_| draw(cfg.hidden_dropout, cfg.dense_width, rng)).collect(),
            dense2: (0..steps).map(|_| draw(cfg.hidden_dropout, cfg.dense_width, rng)).collect(),
            recurrent: [
                draw(cfg.recurrent_dropout, cfg.lstm_width, rng),
                draw(cfg.recurrent_dropout, cfg.lstm_width, rng),
            ],
        }
    }
}

/// Hidden output and cell contents of one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(width: usize) -> Self {
        CellState {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }
}

/// Read-only view of one recurrent layer's parameters.
#[derive(Clone, Copy)]
pub struct LstmLayer<'a> {
    layout: &'a LstmLayout,
    p: &'a [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gate_ln: Vec<LayerNormCache>,
    ig: Vec<f64>,
    g: Vec<f64>,
    fg: Vec<f64>,
    og: Vec<f64>,
    gd: Vec<f64>,
    state_ln: LayerNormCache,
    tanh_c: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl<'a> LstmLayer<'a> {
    pub fn new(layout: &'a LstmLayout, params: &'a Parameters) -> Self {
        LstmLayer {
            layout,
            p: params.as_slice(),
        }
    }

    fn slice(&self, r: &Range<usize>) -> &'a [f64] {
        &self.p[r.clone()]
    }

    fn forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], rmask: Option<&[f64]>) -> CellCache {
        let l = self.layout;
        let h = l.hidden;
        let mut z = self.slice(&l.bias).to_vec();
        matvec_add(self.slice(&l.w_in), x, &mut z);
        matvec_add(self.slice(&l.w_rec), h_prev, &mut z);

        let gain = self.slice(&l.gate_gain);
        let offset = self.slice(&l.gate_offset);
        let mut zn = vec![0.0; GATES * h];
        let gate_ln: Vec<LayerNormCache> = (0..GATES)
            .map(|q| {
                let r = q * h..(q + 1) * h;
                layer_norm_into(&z[r.clone()], &gain[r.clone()], &offset[r.clone()], &mut zn[r])
            })
            .collect();

        let ig: Vec<f64> = zn[..h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = zn[h..2 * h].iter().map(|v| v.tanh()).collect();
        let fg: Vec<f64> = zn[2 * h..3 * h].iter().map(|&v| sigmoid(v + FORGET_BIAS)).collect();
        let og: Vec<f64> = zn[3 * h..].iter().map(|&v| sigmoid(v)).collect();
        let gd: Vec<f64> = match rmask {
            Some(m) => g.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => g.clone(),
        };
        let c_raw: Vec<f64> = (0..h).map(|k| c_prev[k] * fg[k] + ig[k] * gd[k]).collect();
        let mut c = vec![0.0; h];
        let state_ln = layer_norm_into(
            &c_raw,
            self.slice(&l.state_gain),
            self.slice(&l.state_offset),
            &mut c,
        );
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let hout: Vec<f64> = tanh_c.iter().zip(&og).map(|(a, b)| a * b).collect();
        CellCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gate_ln,
            ig,
            g,
            fg,
            og,
            gd,
            state_ln,
            tanh_c,
            c,
            h: hout,
        }
    }

    /// Returns `(dx, dh_prev, dc_prev)` and accumulates parameter gradients.
    fn backward(
        &self,
        cache: &CellCache,
        dh: &[f64],
        dc_next: &[f64],
        rmask: Option<&[f64]>,
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let h = l.hidden;
        let mut dog = vec![0.0; h];
        let mut dc = vec![0.0; h];
        for k in 0..h {
            dog[k] = dh[k] * cache.tanh_c[k];
            dc[k] = dh[k] * cache.og[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]) + dc_next[k];
        }
        let (dsg, dso) = two_mut(grad, l.state_gain.clone(), l.state_offset.clone());
        let dc_raw = layer_norm_backward(&cache.state_ln, self.slice(&l.state_gain), &dc, dsg, dso);

        let mut dzn = vec![0.0; GATES * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let d = dc_raw[k];
            dc_prev[k] = d * cache.fg[k];
            let dfg = d * cache.c_prev[k];
            let dig = d * cache.gd[k];
            let dg = d * cache.ig[k] * rmask.map_or(1.0, |m| m[k]);
            let (ig, g, fg, og) = (cache.ig[k], cache.g[k], cache.fg[k], cache.og[k]);
            dzn[k] = dig * ig * (1.0 - ig);
            dzn[h + k] = dg * (1.0 - g * g);
            dzn[2 * h + k] = dfg * fg * (1.0 - fg);
            dzn[3 * h + k] = dog[k] * og * (1.0 - og);
        }

        let gain = self.slice(&l.gate_gain);
        let mut dz = vec![0.0; GATES * h];
        {
            let (dgain, doffset) = two_mut(grad, l.gate_gain.clone(), l.gate_offset.clone());
            for q in 0..GATES {
                let r = q * h..(q + 1) * h;
                let d = layer_norm_backward(
                    &cache.gate_ln[q],
                    &gain[r.clone()],
                    &dzn[r.clone()],
                    &mut dgain[r.clone()],
                    &mut doffset[r.clone()],
                );
                dz[r].copy_from_slice(&d);
            }
        }
        for (gb, d) in grad[l.bias.clone()].iter_mut().zip(&dz) {
            *gb += d;
        }
        let mut dx = vec![0.0; l.input_dim];
        let mut dh_prev = vec![0.0; h];
        matvec_backward(self.slice(&l.w_in), &mut grad[l.w_in.clone()], &cache.x, &dz, &mut dx);
        matvec_backward(
            self.slice(&l.w_rec),
            &mut grad[l.w_rec.clone()],
            &cache.h_prev,
            &dz,
            &mut dh_prev,
        );
        (dx, dh_prev, dc_prev)
    }

    /// One recurrent step. `rmask` is the recurrent-dropout multiplier on the
    /// candidate vector, `None` at inference.
    pub fn step(&self, state: &CellState, x: &[f64], rmask: Option<&[f64]>) -> (Vec<f64>, CellState) {
        let cache = self.forward(x, &state.h, &state.c, rmask);
        let y = cache.h.clone();
        (
            y,
            CellState {
                h: cache.h,
                c: cache.c,
            },
        )
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    index: usize,
    in_scale: f64,
    a1: Vec<f64>,
    a1d: Vec<f64>,
    a2: Vec<f64>,
    cells: Vec<CellCache>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    steps: Vec<StepCache>,
    pub output: Vec<f64>,
}

/// Runs the network over `window` (dictionary indices, oldest first) from a
/// zero recurrent state.
pub fn forward(
    layout: &Layout,
    params: &Parameters,
    window: &[usize],
    masks: Option<&DropoutMasks>,
) -> ForwardPass {
    let p = params.as_slice();
    let (v, d, h) = (layout.vocab, layout.dense, layout.hidden);
    let layers = [
        LstmLayer::new(&layout.lstm[0], params),
        LstmLayer::new(&layout.lstm[1], params),
    ];
    let mut state = [CellState::zeros(h), CellState::zeros(h)];
    let mut steps = Vec::with_capacity(window.len());

    for (t, &index) in window.iter().enumerate() {
        let in_scale = masks.map_or(1.0, |m| m.input[t]);
        let w1 = &p[layout.dense1_w.clone()];
        let b1 = &p[layout.dense1_b.clone()];
        let a1: Vec<f64> = (0..d)
            .map(|r| (w1[r * v + index] * in_scale + b1[r]).tanh())
            .collect();
        let a1d: Vec<f64> = match masks {
            Some(m) => a1.iter().zip(&m.dense1[t]).map(|(a, b)| a * b).collect(),
            None => a1.clone(),
        };
        let mut a2 = p[layout.dense2_b.clone()].to_vec();
        matvec_add(&p[layout.dense2_w.clone()], &a1d, &mut a2);
        a2.iter_mut().for_each(|x| *x = x.tanh());
        let a2d: Vec<f64> = match masks {
            Some(m) => a2.iter().zip(&m.dense2[t]).map(|(a, b)| a * b).collect(),
            None => a2.clone(),
        };

        let mut cells = Vec::with_capacity(LSTM_LAYERS);
        let mut x = a2d;
        for (l, layer) in layers.iter().enumerate() {
            let rmask = masks.map(|m| m.recurrent[l].as_slice());
            let cache = layer.forward(&x, &state[l].h, &state[l].c, rmask);
            state[l] = CellState {
                h: cache.h.clone(),
                c: cache.c.clone(),
            };
            x = cache.h.clone();
            cells.push(cache);
        }
        steps.push(StepCache {
            index,
            in_scale,
            a1,
            a1d,
            a2,
            cells,
        });
    }

    let top = &state[LSTM_LAYERS - 1].h;
    let mut z = p[layout.out_b.clone()].to_vec();
    matvec_add(&p[layout.out_w.clone()], top, &mut z);
    let output = z.into_iter().map(sigmoid).collect();
    ForwardPass { steps, output }
}

/// Summed per-node binary cross-entropy, probabilities clamped away from 0 and 1.
pub fn logloss(prediction: &[f64], target: &[f64]) -> f64 {
    prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

/// Concatenated one-hot blocks for the `n` target indices.
pub fn target_vector(vocab: usize, targets: &[usize]) -> Vec<f64> {
    let mut t = vec![0.0; vocab * targets.len()];
    for (k, &i) in targets.iter().enumerate() {
        t[k * vocab + i] = 1.0;
    }
    t
}

/// Accumulates the gradient of the logloss of `pass` against `targets` into
/// `grad` and returns the loss.
pub fn backward(
    layout: &Layout,
    params: &Parameters,
    pass: &ForwardPass,
    targets: &[usize],
    masks: Option<&DropoutMasks>,
    grad: &mut [f64],
) -> f64 {
    let p = params.as_slice();
    let (v, d, h) = (layout.vocab, layout.dense, layout.hidden);
    let target = target_vector(v, targets);
    debug_assert_eq!(target.len(), pass.output.len());
    let loss = logloss(&pass.output, &target);

    let dz: Vec<f64> = pass.output.iter().zip(&target).map(|(p, t)| p - t).collect();
    let last = pass.steps.last().expect("non-empty window");
    let top = &last.cells[LSTM_LAYERS - 1].h;
    let mut dh_out = vec![0.0; h];
    for (gb, d) in grad[layout.out_b.clone()].iter_mut().zip(&dz) {
        *gb += d;
    }
    matvec_backward(&p[layout.out_w.clone()], &mut grad[layout.out_w.clone()], top, &dz, &mut dh_out);

    let layers = [
        LstmLayer::new(&layout.lstm[0], params),
        LstmLayer::new(&layout.lstm[1], params),
    ];
    let mut dh_next = [vec![0.0; h], vec![0.0; h]];
    let mut dc_next = [vec![0.0; h], vec![0.0; h]];
    let last_t = pass.steps.len() - 1;

    for (t, step) in pass.steps.iter().enumerate().rev() {
        let mut from_above = if t == last_t { dh_out.clone() } else { vec![0.0; h] };
        for l in (0..LSTM_LAYERS).rev() {
            let dh: Vec<f64> = from_above.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
            let rmask = masks.map(|m| m.recurrent[l].as_slice());
            let (dx, dh_prev, dc_prev) = layers[l].backward(&step.cells[l], &dh, &dc_next[l], rmask, grad);
            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            from_above = dx;
        }

        // dense2 (input to the first recurrent layer is the dropped-out a2)
        let mut dpre2 = from_above;
        for k in 0..d {
            let m = masks.map_or(1.0, |m| m.dense2[t][k]);
            dpre2[k] *= m * (1.0 - step.a2[k] * step.a2[k]);
        }
        for (gb, x) in grad[layout.dense2_b.clone()].iter_mut().zip(&dpre2) {
            *gb += x;
        }
        let mut da1d = vec![0.0; d];
        matvec_backward(
            &p[layout.dense2_w.clone()],
            &mut grad[layout.dense2_w.clone()],
            &step.a1d,
            &dpre2,
            &mut da1d,
        );

        // dense1 sees a scaled one-hot, so only one weight column is touched.
        let w1 = layout.dense1_w.start;
        let b1 = layout.dense1_b.start;
        for k in 0..d {
            let m = masks.map_or(1.0, |m| m.dense1[t][k]);
            let dpre1 = da1d[k] * m * (1.0 - step.a1[k] * step.a1[k]);
            grad[w1 + k * v + step.index] += dpre1 * step.in_scale;
            grad[b1 + k] += dpre1;
        }
    }
    loss
}
