//! Forward and backward passes over a flat `f64` parameter vector.
//!
//! Activations are CHW. Convolutions go through im2col so the inner loops
//! run over contiguous output positions.

use super::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Conv {
    in_c: usize,
    in_side: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_side: usize,
    w: usize,
    b: usize,
    pool: Option<Pool>,
}

#[derive(Debug, Clone)]
struct Pool {
    size: usize,
    stride: usize,
    out_side: usize,
}

#[derive(Debug, Clone)]
struct Dense {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

/// Layer plan derived from a validated [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Network {
    side: usize,
    input_len: usize,
    convs: Vec<Conv>,
    denses: Vec<Dense>,
    param_count: usize,
}

struct ConvCache {
    col: Vec<f64>,
    /// Post-ReLU activations before pooling.
    act: Vec<f64>,
    /// Index into `act` of each pooled maximum.
    argmax: Vec<u32>,
}

struct Trace {
    convs: Vec<ConvCache>,
    /// Input to each dense layer; hidden ones are post-ReLU.
    dense_in: Vec<Vec<f64>>,
    z: f64,
}

impl Network {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = config.layer_params();
        let mut convs = Vec::new();
        let mut in_c = config.channels;
        let mut side = config.side;
        for (spec, lp) in config.conv.iter().zip(&params) {
            let out_side = (side + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            let pool = spec.pool.map(|p| Pool {
                size: p.size,
                stride: p.stride,
                out_side: (out_side - p.size) / p.stride + 1,
            });
            convs.push(Conv {
                in_c,
                in_side: side,
                out_c: spec.out_channels,
                kernel: spec.kernel,
                stride: spec.stride,
                pad: spec.padding,
                out_side,
                w: lp.weight_offset,
                b: lp.bias_offset,
                pool,
            });
            in_c = spec.out_channels;
            side = convs.last().unwrap().final_side();
        }
        let denses = params[config.conv.len()..]
            .iter()
            .map(|lp| Dense {
                inputs: lp.fan_in,
                outputs: lp.bias_len,
                w: lp.weight_offset,
                b: lp.bias_offset,
            })
            .collect();
        Ok(Self {
            side: config.side,
            input_len: config.input_len(),
            convs,
            denses,
            param_count: config.param_count(),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Sigmoid output, clamped so it stays strictly inside (0, 1).
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<f64> {
        let z = self.run(params, input, false)?.z;
        Ok(output(z))
    }

    /// Output together with the piecewise-linear region it lies in: every
    /// active ReLU and every pooling winner. Two points with equal patterns
    /// lie on the same smooth piece of the network.
    pub fn activation_pattern(&self, params: &[f64], input: &[f64]) -> Result<(f64, Vec<u32>)> {
        let trace = self.run(params, input, true)?;
        let mut pattern = Vec::new();
        for c in &trace.convs {
            pattern.extend(c.act.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i as u32));
            pattern.push(u32::MAX);
            pattern.extend_from_slice(&c.argmax);
            pattern.push(u32::MAX);
        }
        for x in trace.dense_in.iter().skip(1) {
            pattern.extend(x.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i as u32));
            pattern.push(u32::MAX);
        }
        Ok((output(trace.z), pattern))
    }

    /// Adds the gradient of `scale * (pred - target)^2` to `grad`; returns
    /// the unscaled loss.
    pub fn accumulate_gradient(&self, params: &[f64], input: &[f64], target: f64, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let trace = self.run(params, input, true)?;
        let s = sigmoid(trace.z);
        let pred = output(trace.z);
        let err = pred - target;
        let dz = scale * 2.0 * err * s * (1.0 - s);
        self.backprop(params, &trace, dz, grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalOverflow);
        }
        Ok(err * err)
    }

    fn run(&self, params: &[f64], input: &[f64], keep: bool) -> Result<Trace> {
        assert_eq!(params.len(), self.param_count, "parameter vector length");
        assert_eq!(input.len(), self.input_len, "input length");
        let mut convs = Vec::with_capacity(if keep { self.convs.len() } else { 0 });
        let mut x: Vec<f64> = input.to_vec();
        for conv in &self.convs {
            let col = conv.im2col(&x);
            let mut act = conv.apply(params, &col);
            for v in &mut act {
                *v = v.max(0.0);
            }
            let (pooled, argmax) = match &conv.pool {
                Some(p) => p.forward(&act, conv.out_c, conv.out_side),
                None => (act.clone(), Vec::new()),
            };
            if keep {
                convs.push(ConvCache { col, act, argmax });
            }
            x = pooled;
        }
        let mut dense_in = Vec::with_capacity(self.denses.len());
        let last = self.denses.len() - 1;
        let mut z = 0.0;
        for (i, d) in self.denses.iter().enumerate() {
            let mut y = d.apply(params, &x);
            if i == last {
                z = y[0];
            } else {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            if keep {
                dense_in.push(std::mem::take(&mut x));
            }
            x = y;
        }
        if !z.is_finite() {
            return Err(Error::NumericalOverflow);
        }
        Ok(Trace { convs, dense_in, z })
    }

    fn backprop(&self, params: &[f64], trace: &Trace, dz: f64, grad: &mut [f64]) {
        let mut dy = vec![dz];
        for (i, d) in self.denses.iter().enumerate().rev() {
            let x = &trace.dense_in[i];
            let mut dx = d.backward(params, x, &dy, grad);
            if i > 0 {
                // Hidden inputs are post-ReLU: zero activations pass no gradient.
                for (g, &v) in dx.iter_mut().zip(x) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            dy = dx;
        }
        // dy is now the gradient w.r.t. the flattened last conv output.
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let cache = &trace.convs[i];
            let mut dact = match &conv.pool {
                Some(_) => {
                    let mut d = vec![0.0; cache.act.len()];
                    for (&idx, &g) in cache.argmax.iter().zip(&dy) {
                        d[idx as usize] += g;
                    }
                    d
                }
                None => dy,
            };
            for (g, &a) in dact.iter_mut().zip(&cache.act) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            dy = conv.backward(params, &cache.col, &dact, grad, i > 0);
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn output(z: f64) -> f64 {
    sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize; order is fixed, so results are reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Conv {
    fn final_side(&self) -> usize {
        self.pool.as_ref().map_or(self.out_side, |p| p.out_side)
    }

    fn patch(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_side * self.out_side
    }

    /// `[patch x positions]` matrix of input taps.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (k, s, n, p) = (self.kernel, self.in_side, self.out_side, self.positions());
        let mut col = vec![0.0; self.patch() * p];
        for c in 0..self.in_c {
            let plane = &x[c * s * s..(c + 1) * s * s];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..n {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= s as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * s..][..s];
                        let dst = &mut row[oy * n..][..n];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < s as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &[f64]) -> Vec<f64> {
        let (k, s, n, p) = (self.kernel, self.in_side, self.out_side, self.positions());
        let mut dx = vec![0.0; self.in_c * s * s];
        for c in 0..self.in_c {
            let plane = &mut dx[c * s * s..(c + 1) * s * s];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &dcol[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..n {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= s as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * s..][..s];
                        for (ox, &g) in row[oy * n..][..n].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < s as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, params: &[f64], col: &[f64]) -> Vec<f64> {
        let (kk, p) = (self.patch(), self.positions());
        let mut out = vec![0.0; self.out_c * p];
        for o in 0..self.out_c {
            let row = &mut out[o * p..][..p];
            row.fill(params[self.b + o]);
            let w = &params[self.w + o * kk..][..kk];
            for (j, &wj) in w.iter().enumerate() {
                axpy(row, wj, &col[j * p..][..p]);
            }
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient if asked.
    fn backward(&self, params: &[f64], col: &[f64], dout: &[f64], grad: &mut [f64], want_input: bool) -> Vec<f64> {
        let (kk, p) = (self.patch(), self.positions());
        let mut dcol = if want_input { vec![0.0; kk * p] } else { Vec::new() };
        for o in 0..self.out_c {
            let d = &dout[o * p..][..p];
            grad[self.b + o] += d.iter().sum::<f64>();
            let gw = &mut grad[self.w + o * kk..][..kk];
            for (j, g) in gw.iter_mut().enumerate() {
                *g += dot(d, &col[j * p..][..p]);
            }
            if want_input {
                let w = &params[self.w + o * kk..][..kk];
                for (j, &wj) in w.iter().enumerate() {
                    axpy(&mut dcol[j * p..][..p], wj, d);
                }
            }
        }
        if want_input {
            self.col2im(&dcol)
        } else {
            Vec::new()
        }
    }
}

impl Pool {
    fn forward(&self, x: &[f64], channels: usize, side: usize) -> (Vec<f64>, Vec<u32>) {
        let n = self.out_side;
        let mut out = Vec::with_capacity(channels * n * n);
        let mut argmax = Vec::with_capacity(channels * n * n);
        for c in 0..channels {
            let base = c * side * side;
            for oy in 0..n {
                for ox in 0..n {
                    let mut best = base + oy * self.stride * side + ox * self.stride;
                    for ky in 0..self.size {
                        for kx in 0..self.size {
                            let i = base + (oy * self.stride + ky) * side + ox * self.stride + kx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        (out, argmax)
    }
}

impl Dense {
    fn apply(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| params[self.b + o] + dot(&params[self.w + o * self.inputs..][..self.inputs], x))
            .collect()
    }

    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[self.b + o] += g;
            axpy(&mut grad[self.w + o * self.inputs..][..self.inputs], g, x);
            axpy(&mut dx, g, &params[self.w + o * self.inputs..][..self.inputs]);
        }
        dx
    }
}

/// Gradient accumulator over a batch.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub loss_sum: f64,
    pub samples: usize,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            loss_sum: 0.0,
            samples: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvSpec, ModelConfig};

    fn unpadded() -> ModelConfig {
        ModelConfig {
            conv: vec![ConvSpec::new(2, 3, 2, 0)],
            fc: vec![1],
            ..ModelConfig::tiny()
        }
    }

    #[test]
    fn conv_matches_direct_loops() {
        let cfg = ModelConfig {
            conv: vec![ConvSpec::new(3, 5, 2, 2)],
            fc: vec![1],
            ..ModelConfig::tiny()
        };
        let net = Network::new(&cfg).unwrap();
        let conv = &net.convs[0];
        let params: Vec<f64> = (0..net.param_count()).map(|i| ((i * 37 % 101) as f64 - 50.0) / 100.0).collect();
        let x: Vec<f64> = (0..net.input_len()).map(|i| ((i * 13 % 29) as f64) / 29.0).collect();
        let got = conv.apply(&params, &conv.im2col(&x));
        let (s, n, k) = (conv.in_side as isize, conv.out_side, conv.kernel);
        for o in 0..conv.out_c {
            for oy in 0..n {
                for ox in 0..n {
                    let mut acc = params[conv.b + o];
                    for c in 0..conv.in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * 2 + ky) as isize - 2;
                                let ix = (ox * 2 + kx) as isize - 2;
                                if iy >= 0 && iy < s && ix >= 0 && ix < s {
                                    let w = params[conv.w + ((o * conv.in_c + c) * k + ky) * k + kx];
                                    acc += w * x[(c as isize * s * s + iy * s + ix) as usize];
                                }
                            }
                        }
                    }
                    let v = got[(o * n + oy) * n + ox];
                    assert!((v - acc).abs() < 1e-12, "{v} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for any x, c.
        let net = Network::new(&unpadded()).unwrap();
        let conv = &net.convs[0];
        let x: Vec<f64> = (0..net.input_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let col = conv.im2col(&x);
        let c: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs = dot(&col, &c);
        let rhs = dot(&x, &conv.col2im(&c));
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn pool_picks_window_max() {
        let p = Pool {
            size: 2,
            stride: 2,
            out_side: 2,
        };
        let x = [1.0, 2.0, 0.0, 0.0, 4.0, 3.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 6.0];
        let (out, arg) = p.forward(&x, 1, 4);
        assert_eq!(out, vec![4.0, 5.0, 0.0, 6.0]);
        assert_eq!(arg, vec![4, 7, 8, 15]);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (1..=7).map(|v| v as f64).collect();
        assert_eq!(dot(&a, &a), 140.0);
    }
}
