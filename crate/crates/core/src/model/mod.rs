//! CNN affect regressor: a four-channel AlexNet-style network with a
//! sigmoid head, trained with momentum SGD on MSE.

mod io;
mod network;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{Gradient, Network};
pub use train::{train, train_with_progress};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::ingest::Frame;
use crate::{Error, Result, STACK_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Max pooling applied after the ReLU.
    pub pool: Option<PoolSpec>,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
            pool: None,
        }
    }

    pub const fn pooled(mut self, size: usize, stride: usize) -> Self {
        self.pool = Some(PoolSpec { size, stride });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub side: usize,
    pub channels: usize,
    pub conv: Vec<ConvSpec>,
    /// Fully connected widths, ending with the single output unit.
    pub fc: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::alexnet(256)
    }
}

impl ModelConfig {
    /// AlexNet layout with four input channels.
    pub fn alexnet(side: usize) -> Self {
        Self {
            side,
            channels: STACK_DEPTH,
            conv: vec![
                ConvSpec::new(96, 11, 4, 0).pooled(3, 2),
                ConvSpec::new(256, 5, 1, 2).pooled(3, 2),
                ConvSpec::new(384, 3, 1, 1),
                ConvSpec::new(384, 3, 1, 1),
                ConvSpec::new(256, 3, 1, 1).pooled(3, 2),
            ],
            fc: vec![4096, 4096, 1],
            lr: 1e-4,
            momentum: 0.9,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }

    /// Scaled-down variant for 32-64 px inputs.
    pub fn compact(side: usize) -> Self {
        Self {
            conv: vec![ConvSpec::new(16, 5, 2, 2).pooled(2, 2), ConvSpec::new(32, 3, 1, 1).pooled(2, 2)],
            fc: vec![256, 1],
            // At lr 1e-4 a 32-sample batch leaves too few updates at this scale.
            batch_size: 2,
            ..Self::alexnet(side)
        }
    }

    /// Two conv layers at 32 px; small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            conv: vec![ConvSpec::new(4, 5, 2, 2).pooled(2, 2), ConvSpec::new(6, 3, 1, 1).pooled(2, 2)],
            fc: vec![8, 1],
            ..Self::alexnet(32)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.channels != STACK_DEPTH {
            return bad(format!("channels must be {STACK_DEPTH}, got {}", self.channels));
        }
        if self.side < 32 {
            return bad(format!("side must be at least 32, got {}", self.side));
        }
        if self.fc.last() != Some(&1) {
            return bad("final fully connected width must be 1".into());
        }
        if self.fc.contains(&0) {
            return bad("fully connected widths must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        let mut side = self.side;
        for (i, c) in self.conv.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return bad(format!("conv{}: channels, kernel and stride must be positive", i + 1));
            }
            if side + 2 * c.padding < c.kernel {
                return bad(format!("conv{}: kernel {} larger than padded input {}", i + 1, c.kernel, side + 2 * c.padding));
            }
            side = (side + 2 * c.padding - c.kernel) / c.stride + 1;
            if let Some(p) = c.pool {
                if p.size == 0 || p.stride == 0 || p.size > side {
                    return bad(format!("conv{}: pool {}x{} does not fit {side}x{side}", i + 1, p.size, p.stride));
                }
                side = (side - p.size) / p.stride + 1;
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.side, self.side]
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    /// Spatial side and channel count after each conv block.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut side = self.side;
        self.conv
            .iter()
            .map(|c| {
                side = (side + 2 * c.padding - c.kernel) / c.stride + 1;
                if let Some(p) = c.pool {
                    side = (side - p.size) / p.stride + 1;
                }
                (c.out_channels, side)
            })
            .collect()
    }

    pub fn layer_params(&self) -> Vec<LayerParams> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut in_c = self.channels;
        for (i, c) in self.conv.iter().enumerate() {
            let weights = c.out_channels * in_c * c.kernel * c.kernel;
            out.push(LayerParams {
                name: format!("conv{}", i + 1),
                weight_offset: offset,
                weight_len: weights,
                bias_offset: offset + weights,
                bias_len: c.out_channels,
                fan_in: in_c * c.kernel * c.kernel,
            });
            offset += weights + c.out_channels;
            in_c = c.out_channels;
        }
        let mut width = self.conv_shapes().last().map_or(self.input_len(), |&(c, s)| c * s * s);
        for (i, &n) in self.fc.iter().enumerate() {
            out.push(LayerParams {
                name: format!("fc{}", i + 1),
                weight_offset: offset,
                weight_len: n * width,
                bias_offset: offset + n * width,
                bias_len: n,
                fan_in: width,
            });
            offset += n * width + n;
            width = n;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_params().iter().map(|l| l.weight_len + l.bias_len).sum()
    }

    /// Canonical JSON text; field order is fixed by the struct definition.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// 64-bit FNV-1a of [`canonical_json`](Self::canonical_json).
    pub fn arch_hash(&self) -> u64 {
        fnv1a(self.canonical_json().as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Location of one layer's parameters in the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub name: String,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
    pub fan_in: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-sample loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Worker threads used for gradient accumulation.
    pub threads: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub weights: Vec<f32>,
    pub train_log: TrainLog,
}

impl ModelBundle {
    /// Kaiming-uniform (fan-in) weights and zero biases from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = vec![0.0f32; config.param_count()];
        for layer in config.layer_params() {
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut weights[layer.weight_offset..layer.weight_offset + layer.weight_len] {
                *w = dist.sample(&mut rng) as f32;
            }
        }
        Ok(Self {
            config,
            weights,
            train_log: TrainLog::default(),
        })
    }

    pub fn from_weights(config: ModelConfig, weights: Vec<f32>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.param_count() {
            return Err(Error::ShapeMismatch {
                expected: vec![config.param_count()],
                actual: vec![weights.len()],
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericalOverflow);
        }
        Ok(Self {
            config,
            weights,
            train_log: TrainLog::default(),
        })
    }

    /// Zeroes the output layer so every prediction is exactly 0.5.
    pub fn zero_head(&mut self) {
        if let Some(last) = self.config.layer_params().last() {
            self.weights[last.weight_offset..last.bias_offset + last.bias_len].fill(0.0);
        }
    }

    pub fn predictor(&self) -> Result<Predictor> {
        Predictor::new(self)
    }
}

/// Immutable inference handle; cheap to clone and share across threads.
#[derive(Debug, Clone)]
pub struct Predictor {
    network: Arc<Network>,
    params: Arc<[f64]>,
}

impl Predictor {
    pub fn new(bundle: &ModelBundle) -> Result<Self> {
        let network = Network::new(&bundle.config)?;
        if bundle.weights.len() != network.param_count() {
            return Err(Error::ShapeMismatch {
                expected: vec![network.param_count()],
                actual: vec![bundle.weights.len()],
            });
        }
        Ok(Self {
            network: Arc::new(network),
            params: bundle.weights.iter().map(|&w| w as f64).collect(),
        })
    }

    pub fn side(&self) -> usize {
        self.network.side()
    }

    /// Affect in (0, 1) for a `4 x side x side` stack.
    pub fn predict(&self, stack: &[f32]) -> Result<f64> {
        self.check_shape(stack.len())?;
        let input: Vec<f64> = stack.iter().map(|&v| v as f64).collect();
        self.network.forward(&self.params, &input)
    }

    pub fn predict_frames(&self, frames: &[&[f32]]) -> Result<f64> {
        let plane = self.side() * self.side();
        if frames.len() != STACK_DEPTH || frames.iter().any(|f| f.len() != plane) {
            return Err(Error::ShapeMismatch {
                expected: vec![STACK_DEPTH, self.side(), self.side()],
                actual: frames.iter().map(|f| f.len()).collect(),
            });
        }
        let input: Vec<f64> = frames.iter().flat_map(|f| f.iter().map(|&v| v as f64)).collect();
        self.network.forward(&self.params, &input)
    }

    fn check_shape(&self, len: usize) -> Result<()> {
        let side = self.side();
        if len != STACK_DEPTH * side * side {
            return Err(Error::ShapeMismatch {
                expected: vec![STACK_DEPTH, side, side],
                actual: vec![len],
            });
        }
        Ok(())
    }
}

/// Squared error of one prediction.
pub fn loss(pred: f64, target: f64) -> f64 {
    (pred - target) * (pred - target)
}

/// Mean squared error over `(pred, target)` pairs.
pub fn batch_loss(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(p, t)| loss(p, t)).sum::<f64>() / pairs.len() as f64
}

pub fn forward(bundle: &ModelBundle, stack: &[f32]) -> Result<f64> {
    bundle.predictor()?.predict(stack)
}

/// Gradient of `(pred - target)^2` w.r.t. every parameter.
pub fn backward(bundle: &ModelBundle, stack: &[f32], target: f64) -> Result<Vec<f64>> {
    backward_scaled(bundle, stack, target, 1.0)
}

/// Gradient of `scale * (pred - target)^2`.
pub fn backward_scaled(bundle: &ModelBundle, stack: &[f32], target: f64, scale: f64) -> Result<Vec<f64>> {
    let network = Network::new(&bundle.config)?;
    let side = network.side();
    if stack.len() != network.input_len() {
        return Err(Error::ShapeMismatch {
            expected: vec![STACK_DEPTH, side, side],
            actual: vec![stack.len()],
        });
    }
    let params: Vec<f64> = bundle.weights.iter().map(|&w| w as f64).collect();
    let input: Vec<f64> = stack.iter().map(|&v| v as f64).collect();
    let mut grad = vec![0.0; params.len()];
    network.accumulate_gradient(&params, &input, target, scale, &mut grad)?;
    Ok(grad)
}

/// Per-window predictions over a frame sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectTrace {
    /// Index of the last frame of each window.
    pub frame_index: Vec<usize>,
    pub timestamp_ms: Vec<u64>,
    pub values: Vec<f64>,
}

impl AffectTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "frame_index,timestamp_ms,affect")?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{:.6}", self.frame_index[i], self.timestamp_ms[i], self.values[i])?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let mut trace = AffectTrace {
            frame_index: vec![],
            timestamp_ms: vec![],
            values: vec![],
        };
        for rec in reader.deserialize::<(usize, u64, f64)>() {
            let (i, t, v) = rec?;
            trace.frame_index.push(i);
            trace.timestamp_ms.push(t);
            trace.values.push(v);
        }
        Ok(trace)
    }
}

pub fn predict_video(bundle: &ModelBundle, frames: &[Frame]) -> Result<AffectTrace> {
    predict_frames(&bundle.predictor()?, frames)
}

pub fn predict_frames(predictor: &Predictor, frames: &[Frame]) -> Result<AffectTrace> {
    if frames.len() < STACK_DEPTH {
        return Err(Error::TooFewFrames {
            needed: STACK_DEPTH,
            got: frames.len(),
        });
    }
    let side = predictor.side();
    if let Some(f) = frames.iter().find(|f| f.width != side || f.height != side) {
        return Err(Error::ShapeMismatch {
            expected: vec![side, side],
            actual: vec![f.height, f.width],
        });
    }
    let windows = frames.len() - STACK_DEPTH + 1;
    let mut trace = AffectTrace {
        frame_index: Vec::with_capacity(windows),
        timestamp_ms: Vec::with_capacity(windows),
        values: Vec::with_capacity(windows),
    };
    for end in STACK_DEPTH - 1..frames.len() {
        let window = &frames[end + 1 - STACK_DEPTH..=end];
        let planes: Vec<&[f32]> = window.iter().map(|f| f.pixels.as_slice()).collect();
        trace.values.push(predictor.predict_frames(&planes)?);
        trace.frame_index.push(end);
        trace.timestamp_ms.push(frames[end].timestamp_ms);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack(side: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(0.0f32, 1.0).unwrap();
        (0..STACK_DEPTH * side * side).map(|_| u.sample(&mut rng)).collect()
    }

    #[test]
    fn default_parameter_count() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.conv_shapes(), vec![(96, 30), (256, 14), (384, 14), (384, 14), (256, 6)]);
        let per_layer: Vec<usize> = c.layer_params().iter().map(|l| l.weight_len + l.bias_len).collect();
        assert_eq!(per_layer, vec![46_560, 614_656, 885_120, 1_327_488, 884_992, 37_752_832, 16_781_312, 4_097]);
        assert_eq!(c.param_count(), 58_297_057);
    }

    #[test]
    fn config_validation() {
        ModelConfig::tiny().validate().unwrap();
        ModelConfig::compact(64).validate().unwrap();
        let mut c = ModelConfig::tiny();
        c.channels = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.fc = vec![8, 2];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.side = 16;
        assert!(c.validate().is_err());
        // AlexNet pools collapse below ~67 px.
        assert!(ModelConfig::alexnet(64).validate().is_err());
    }

    #[test]
    fn arch_hash_tracks_config() {
        let a = ModelConfig::tiny();
        let mut b = a.clone();
        assert_eq!(a.arch_hash(), b.arch_hash());
        b.fc[0] = 9;
        assert_ne!(a.arch_hash(), b.arch_hash());
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn zero_head_gives_half() {
        let mut b = ModelBundle::init(ModelConfig::tiny()).unwrap();
        b.zero_head();
        assert_eq!(forward(&b, &stack(32, 1)).unwrap(), 0.5);
        assert_eq!(forward(&b, &vec![0.0; 4 * 32 * 32]).unwrap(), 0.5);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let b = ModelBundle::init(ModelConfig::tiny()).unwrap();
        let s = stack(32, 2);
        let p = forward(&b, &s).unwrap();
        assert_eq!(p, forward(&b, &s).unwrap());
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn shape_mismatch_reports_shapes() {
        let b = ModelBundle::init(ModelConfig::tiny()).unwrap();
        match forward(&b, &[0.0; 10]) {
            Err(Error::ShapeMismatch { expected, actual }) => {
                assert_eq!(expected, vec![4, 32, 32]);
                assert_eq!(actual, vec![10]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(0.5, 0.5), 0.0);
        assert_eq!(loss(1.0, 0.0), 1.0);
        let expected = (0.2f64 * 0.2 + 0.2 * 0.2) / 2.0;
        assert!((batch_loss(&[(0.2, 0.0), (0.8, 1.0)]) - expected).abs() < 1e-15);
        assert!((batch_loss(&[(0.2, 0.0), (0.8, 1.0)]) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn zero_error_zero_gradient() {
        let b = ModelBundle::init(ModelConfig::tiny()).unwrap();
        let s = stack(32, 3);
        let p = forward(&b, &s).unwrap();
        let g = backward(&b, &s, p).unwrap();
        assert_eq!(g.len(), b.weights.len());
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_scale_is_linear() {
        let b = ModelBundle::init(ModelConfig::tiny()).unwrap();
        let s = stack(32, 4);
        let g1 = backward(&b, &s, 0.9).unwrap();
        let g2 = backward_scaled(&b, &s, 0.9, 2.0).unwrap();
        assert!(g1.iter().any(|&v| v != 0.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    fn frames(n: usize, side: usize, f: impl Fn(usize) -> f32) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame {
                pixels: vec![f(i); side * side],
                width: side,
                height: side,
                timestamp_ms: i as u64 * 250,
            })
            .collect()
    }

    #[test]
    fn video_trace_lengths() {
        let b = ModelBundle::init(ModelConfig::tiny()).unwrap();
        let t = predict_video(&b, &frames(4, 32, |_| 0.3)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.timestamp_ms, vec![750]);
        let t = predict_video(&b, &frames(10, 32, |i| i as f32 / 10.0)).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.frame_index, (3..10).collect::<Vec<_>>());
        let t = predict_video(&b, &frames(10, 32, |_| 0.7)).unwrap();
        assert!(t.values.iter().all(|&v| v == t.values[0]));
        assert!(matches!(predict_video(&b, &frames(3, 32, |_| 0.0)), Err(Error::TooFewFrames { needed: 4, got: 3 })));
    }

    #[test]
    fn trace_csv_round_trip() {
        let t = AffectTrace {
            frame_index: vec![3, 4],
            timestamp_ms: vec![750, 1000],
            values: vec![0.25, 0.5],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "frame_index,timestamp_ms,affect\n3,750,0.250000\n4,1000,0.500000\n");
        std::fs::write(&p, buf).unwrap();
        assert_eq!(AffectTrace::read_csv(&p).unwrap(), t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn output_strictly_inside_unit_interval(seed in 0u64..1000, scale in -1e3f32..1e3) {
            let mut c = ModelConfig::tiny();
            c.seed = seed;
            let b = ModelBundle::init(c).unwrap();
            let s: Vec<f32> = stack(32, seed).iter().map(|v| v * scale).collect();
            let p = forward(&b, &s).unwrap();
            prop_assert!(p > 0.0 && p < 1.0, "{}", p);
        }
    }
}
