use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mlp, OutputActivation};
use crate::adam::Adam;
use crate::data::PreprocessedDataset;
use crate::error::{CfxError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Accuracy on each split, in the layout of the usual train/val/test table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub training: f64,
    pub validation: f64,
    pub testing: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Mlp,
    pub accuracy: AccuracyReport,
    /// Epoch whose weights were kept (0 = initial weights).
    pub best_epoch: usize,
}

pub fn accuracy(model: &Mlp, x: &Matrix, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (row, &label) in x.iter_rows().zip(y) {
        if model.forward(row)?.predicted_class == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / y.len() as f64)
}

/// Mini-batch Adam on cross-entropy (binary cross-entropy for a sigmoid
/// head). Keeps the weights with the best validation accuracy.
pub fn train_model(data: &PreprocessedDataset, config: &TrainConfig) -> Result<TrainedModel> {
    if data.split.train.is_empty() {
        return Err(CfxError::Data("empty training split".into()));
    }
    if config.batch_size == 0 {
        return Err(CfxError::Config("batch_size must be positive".into()));
    }
    let classes = data.n_classes();
    let out_dim = if classes == 2 { 1 } else { classes };
    let mut dims = vec![data.x.cols()];
    dims.extend(&config.hidden);
    dims.push(out_dim);
    let mut model = Mlp::init(&dims, config.seed)?;

    let x_train = data.rows(&data.split.train);
    let y_train = data.labels(&data.split.train);
    let x_val = data.rows(&data.split.val);
    let y_val = data.labels(&data.split.val);

    let mut optimizers: Vec<(Adam, Adam)> = model
        .layers()
        .iter()
        .map(|l| {
            (
                Adam::new(l.weights.len(), config.learning_rate),
                Adam::new(l.bias.len(), config.learning_rate),
            )
        })
        .collect();

    let mut best = model.clone();
    let mut best_acc = accuracy(&model, &x_val, &y_val)?;
    let mut best_epoch = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..x_train.rows()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let trace = model.trace(x_train.row(i))?;
                let label = y_train[i];
                let dz: Vec<f64> = match model.output_activation() {
                    OutputActivation::Sigmoid => vec![trace.probabilities[0] - label as f64],
                    OutputActivation::Softmax => trace
                        .probabilities
                        .iter()
                        .enumerate()
                        .map(|(c, p)| p - f64::from(u8::from(c == label)))
                        .collect(),
                };
                model.backprop(&trace, &dz, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, g), (opt_w, opt_b)) in model
                .layers_mut()
                .iter_mut()
                .zip(&mut grads.layers)
                .zip(&mut optimizers)
            {
                g.weights.iter_mut().for_each(|v| *v *= scale);
                g.bias.iter_mut().for_each(|v| *v *= scale);
                opt_w.step(&mut layer.weights, &g.weights);
                opt_b.step(&mut layer.bias, &g.bias);
            }
        }
        let acc = accuracy(&model, &x_val, &y_val)?;
        if acc > best_acc {
            best_acc = acc;
            best = model.clone();
            best_epoch = epoch;
        }
    }

    let report = AccuracyReport {
        training: accuracy(&best, &x_train, &y_train)?,
        validation: best_acc,
        testing: accuracy(
            &best,
            &data.rows(&data.split.test),
            &data.labels(&data.split.test),
        )?,
    };
    log::info!(
        "trained model: train {:.3} / val {:.3} / test {:.3} (epoch {best_epoch})",
        report.training,
        report.validation,
        report.testing
    );
    Ok(TrainedModel {
        model: best,
        accuracy: report,
        best_epoch,
    })
}
