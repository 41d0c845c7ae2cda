/// Stabilizer added to the variance.
pub const LN_EPSILON: f64 = 1e-5;

/// Normalized input and inverse standard deviation kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: f64,
}

/// `(x - mean) / sqrt(var + eps) * gain + offset` with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], offset: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, gain, offset, &mut out);
    out
}

pub(crate) fn layer_norm_into(
    x: &[f64],
    gain: &[f64],
    offset: &[f64],
    out: &mut [f64],
) -> LayerNormCache {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPSILON).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    for (((o, &xh), &g), &b) in out.iter_mut().zip(&xhat).zip(gain).zip(offset) {
        *o = xh * g + b;
    }
    LayerNormCache { xhat, inv_std }
}

/// Back-propagates `dy` through a layer norm. Accumulates gain and offset
/// gradients and returns the input gradient.
pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    doffset: &mut [f64],
) -> Vec<f64> {
    let n = dy.len() as f64;
    let mut dxhat = vec![0.0; dy.len()];
    let mut sum = 0.0;
    let mut sum_xhat = 0.0;
    for i in 0..dy.len() {
        dgain[i] += dy[i] * cache.xhat[i];
        doffset[i] += dy[i];
        dxhat[i] = dy[i] * gain[i];
        sum += dxhat[i];
        sum_xhat += dxhat[i] * cache.xhat[i];
    }
    dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(&d, &xh)| cache.inv_std / n * (n * d - sum - xh * sum_xhat))
        .collect()
}
