//! Dense feed-forward classifier with hand-written forward and backward
//! passes. Hidden layers use ReLU; the head is a single sigmoid unit for
//! binary problems or a softmax over `cl >= 2` units.

mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfxError, Result};

pub use train::{accuracy, train_model, AccuracyReport, TrainConfig, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Sigmoid,
    Softmax,
}

/// Fully connected layer; `weights` is row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// `W^T delta`
    fn transpose_apply(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (acc, wi) in out.iter_mut().zip(w) {
                *acc += wi * d;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// One value (probability of class 1) for sigmoid heads, `cl` values for
    /// softmax heads.
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

impl Prediction {
    pub fn probability_of(&self, class: usize) -> f64 {
        if self.probabilities.len() == 1 {
            if class == 1 {
                self.probabilities[0]
            } else {
                1.0 - self.probabilities[0]
            }
        } else {
            self.probabilities[class]
        }
    }
}

/// Scalar whose input gradient is requested.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Probability the model assigns to a class.
    ClassProbability(usize),
    /// A downstream scalar loss, given by its gradient with respect to the
    /// output probabilities.
    ProbabilityCotangent(&'a [f64]),
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of every layer; `inputs[0]` is the model input.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer; the last entry holds the logits.
    pub pre_activations: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

impl ForwardTrace {
    pub fn prediction(&self) -> Prediction {
        Prediction {
            predicted_class: predicted_class(&self.probabilities),
            probabilities: self.probabilities.clone(),
        }
    }
}

fn predicted_class(p: &[f64]) -> usize {
    if p.len() == 1 {
        usize::from(p[0] >= 0.5)
    } else {
        crate::data::argmax(p)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradients of a scalar with respect to every layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    output: OutputActivation,
    layers: Vec<Dense>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    layer_dims: Vec<usize>,
    activation_out: OutputActivation,
    layers: Vec<LayerFile>,
    seed: u64,
}

impl Mlp {
    pub fn from_layers(layer_dims: Vec<usize>, layers: Vec<Dense>, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(CfxError::InvalidModel(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(CfxError::InvalidModel(
                "layer dimensions must be positive".into(),
            ));
        }
        if layers.len() != layer_dims.len() - 1 {
            return Err(CfxError::InvalidModel(format!(
                "{} layer dims imply {} weight layers, got {}",
                layer_dims.len(),
                layer_dims.len() - 1,
                layers.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (layer_dims[i], layer_dims[i + 1]);
            if l.inputs != fan_in || l.outputs != fan_out || l.weights.len() != fan_in * fan_out {
                return Err(CfxError::InvalidModel(format!(
                    "layer {i}: expected {fan_out}x{fan_in} weights, got {} values",
                    l.weights.len()
                )));
            }
            if l.bias.len() != fan_out {
                return Err(CfxError::InvalidModel(format!(
                    "layer {i}: expected {fan_out} biases, got {}",
                    l.bias.len()
                )));
            }
        }
        let output = if *layer_dims.last().unwrap() == 1 {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Softmax
        };
        Ok(Self {
            layer_dims,
            output,
            layers,
            seed,
        })
    }

    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        let layers = layer_dims
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Self::from_layers(layer_dims.to_vec(), layers, 0)
    }

    /// Seeded He-uniform weights (limit `sqrt(6 / fan_in)`), zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                d.weights
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-limit..limit));
                d
            })
            .collect();
        Self::from_layers(layer_dims.to_vec(), layers, seed)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of classes; a sigmoid head represents two.
    pub fn n_classes(&self) -> usize {
        match self.output {
            OutputActivation::Sigmoid => 2,
            OutputActivation::Softmax => self.output_dim(),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.output == OutputActivation::Sigmoid
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.n_classes() {
            return Err(CfxError::InvalidClass {
                index: class,
                classes: self.n_classes(),
            });
        }
        Ok(())
    }

    pub fn trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(CfxError::shape(
                "model input",
                self.input_dim(),
                input.len(),
            ));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(h);
            h = if i + 1 < n {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            pre.push(z);
        }
        let logits = pre.last().unwrap();
        let probabilities = match self.output {
            OutputActivation::Sigmoid => vec![sigmoid(logits[0])],
            OutputActivation::Softmax => softmax(logits),
        };
        Ok(ForwardTrace {
            inputs,
            pre_activations: pre,
            probabilities,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Prediction> {
        Ok(self.trace(input)?.prediction())
    }

    /// Gradient of `P(class)` with respect to the output probability vector.
    pub fn class_cotangent(&self, class: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        Ok(match self.output {
            OutputActivation::Sigmoid => vec![if class == 1 { 1.0 } else { -1.0 }],
            OutputActivation::Softmax => {
                let mut g = vec![0.0; self.output_dim()];
                g[class] = 1.0;
                g
            }
        })
    }

    /// Chains a probability cotangent through the output activation.
    pub fn logit_cotangent(
        &self,
        trace: &ForwardTrace,
        prob_cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        if prob_cotangent.len() != self.output_dim() {
            return Err(CfxError::shape(
                "probability cotangent",
                self.output_dim(),
                prob_cotangent.len(),
            ));
        }
        let p = &trace.probabilities;
        Ok(match self.output {
            OutputActivation::Sigmoid => vec![prob_cotangent[0] * p[0] * (1.0 - p[0])],
            OutputActivation::Softmax => {
                let dot: f64 = prob_cotangent.iter().zip(p).map(|(g, q)| g * q).sum();
                p.iter()
                    .zip(prob_cotangent)
                    .map(|(q, g)| q * (g - dot))
                    .collect()
            }
        })
    }

    /// Backpropagates a logit cotangent to the input, optionally
    /// accumulating parameter gradients.
    pub fn backprop(
        &self,
        trace: &ForwardTrace,
        logit_cotangent: &[f64],
        mut param_grads: Option<&mut ParamGrads>,
    ) -> Vec<f64> {
        let mut delta = logit_cotangent.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let Some(g) = param_grads.as_deref_mut() {
                let gl = &mut g.layers[i];
                let a = &trace.inputs[i];
                for (o, &d) in delta.iter().enumerate() {
                    gl.bias[o] += d;
                    if d != 0.0 {
                        let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (w, x) in row.iter_mut().zip(a) {
                            *w += d * x;
                        }
                    }
                }
            }
            let mut prev = layer.transpose_apply(&delta);
            if i > 0 {
                for (v, z) in prev.iter_mut().zip(&trace.pre_activations[i - 1]) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    /// Exact gradient of the selected scalar with respect to the input.
    pub fn input_gradient(&self, input: &[f64], objective: Objective<'_>) -> Result<Vec<f64>> {
        let trace = self.trace(input)?;
        let cot = match objective {
            Objective::ClassProbability(c) => self.class_cotangent(c)?,
            Objective::ProbabilityCotangent(g) => g.to_vec(),
        };
        let dz = self.logit_cotangent(&trace, &cot)?;
        Ok(self.backprop(&trace, &dz, None))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            layer_dims: self.layer_dims.clone(),
            activation_out: self.output,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            seed: self.seed,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| CfxError::Parse {
            what: "model file".into(),
            message: e.to_string(),
        })?;
        if file.layer_dims.len() < 2 {
            return Err(CfxError::Parse {
                what: "model file".into(),
                message: "field `layer_dims` needs at least two entries".into(),
            });
        }
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let fan_in = file.layer_dims.get(i).copied().unwrap_or(0);
                let fan_out = file.layer_dims.get(i + 1).copied().unwrap_or(0);
                if l.weights.len() != fan_in * fan_out {
                    return Err(CfxError::Parse {
                        what: "model file".into(),
                        message: format!(
                            "field `layers[{i}].weights` has {} values, layer_dims imply {}",
                            l.weights.len(),
                            fan_in * fan_out
                        ),
                    });
                }
                if l.bias.len() != fan_out {
                    return Err(CfxError::Parse {
                        what: "model file".into(),
                        message: format!(
                            "field `layers[{i}].bias` has {} values, layer_dims imply {fan_out}",
                            l.bias.len()
                        ),
                    });
                }
                Ok(Dense {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: l.weights,
                    bias: l.bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self::from_layers(file.layer_dims, layers, file.seed)?;
        if model.output != file.activation_out {
            return Err(CfxError::InvalidModel(format!(
                "activation_out {:?} is inconsistent with an output dimension of {}",
                file.activation_out,
                model.output_dim()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
