use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::network::{Gradient, Network};
use super::{ModelBundle, ModelConfig, TrainLog};
use crate::dataset::{Dataset, FrameStackSample};
use crate::{Error, Result};

pub fn train(ds: &Dataset, config: &ModelConfig) -> Result<ModelBundle> {
    train_with_progress(ds, config, |_, _| {})
}

/// Momentum SGD on per-batch mean squared error.
///
/// Each batch is split into one contiguous chunk per rayon worker; chunk
/// gradients are summed in chunk order, so a run is reproducible for a
/// fixed thread count.
pub fn train_with_progress(ds: &Dataset, config: &ModelConfig, mut on_epoch: impl FnMut(usize, f64)) -> Result<ModelBundle> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let init = ModelBundle::init(config.clone())?;
    let network = Network::new(config)?;
    if ds.side != config.side {
        return Err(Error::ShapeMismatch {
            expected: vec![config.side, config.side],
            actual: vec![ds.side, ds.side],
        });
    }
    let threads = rayon::current_num_threads().max(1);
    let mut params: Vec<f64> = init.weights.iter().map(|&w| w as f64).collect();
    let mut velocity = vec![0.0f64; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut log = TrainLog {
        epoch_loss: Vec::with_capacity(config.epochs),
        threads: threads as u32,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let g = batch_gradient(&network, &params, &ds.samples, batch, threads).map_err(|e| match e {
                Error::NumericalOverflow => Error::Diverged { epoch },
                e => e,
            })?;
            loss_sum += g.loss_sum;
            let inv = 1.0 / batch.len() as f64;
            for ((p, v), &gi) in params.iter_mut().zip(velocity.iter_mut()).zip(&g.values) {
                *v = config.momentum * *v + gi * inv;
                *p -= config.lr * *v;
            }
        }
        let mean = loss_sum / ds.len() as f64;
        if !mean.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        log::info!("epoch {}/{}: mse {mean:.6}", epoch + 1, config.epochs);
        on_epoch(epoch, mean);
        log.epoch_loss.push(mean);
    }

    let weights: Vec<f32> = params.iter().map(|&p| p as f32).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NumericalOverflow);
    }
    Ok(ModelBundle {
        config: config.clone(),
        weights,
        train_log: log,
    })
}

fn batch_gradient(network: &Network, params: &[f64], samples: &[FrameStackSample], batch: &[usize], threads: usize) -> Result<Gradient> {
    let chunk = batch.len().div_ceil(threads);
    let parts: Vec<Result<Gradient>> = batch
        .par_chunks(chunk)
        .map(|idx| {
            let mut g = Gradient::zeros(params.len());
            for &i in idx {
                let s = &samples[i];
                let input: Vec<f64> = s.frames.iter().flat_map(|f| f.iter().map(|&v| v as f64)).collect();
                g.loss_sum += network.accumulate_gradient(params, &input, s.label as f64, 1.0, &mut g.values)?;
                g.samples += 1;
            }
            Ok(g)
        })
        .collect();
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("non-empty batch")?;
    for part in parts {
        let part = part?;
        for (t, v) in total.values.iter_mut().zip(&part.values) {
            *t += v;
        }
        total.loss_sum += part.loss_sum;
        total.samples += part.samples;
    }
    Ok(total)
}
