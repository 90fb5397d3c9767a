//! Softmax-regression / one-hidden-layer MLP classifier with hand-written
//! backpropagation, plus the parameter algebra used by aggregation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::loss::{cross_entropy, softmax_rows};
use crate::numkit::rng::{purpose, RngStream};
use crate::numkit::Matrix;

/// Architecture of the classifier. Empty `hidden_dims` means softmax regression.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn softmax_regression(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("model input_dim must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("model num_classes must be at least 2"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::validation("hidden layer widths must be at least 1"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Glorot-uniform weights and zero biases, one random stream per layer.
    pub fn init(&self, seed: u64) -> Result<ModelParams> {
        self.validate()?;
        let layers = self
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                let mut rng = RngStream::keyed(seed, &[purpose::INIT, i as u64]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let values = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    weight: Matrix::new(fan_in, fan_out, values).expect("finite init"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(ModelParams { layers })
    }

    pub fn zeros(&self) -> ModelParams {
        ModelParams {
            layers: self
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer {
                    weight: Matrix::zeros(i, o),
                    bias: vec![0.0; o],
                })
                .collect(),
        }
    }
}

/// One dense layer; `weight` is `fan_in × fan_out` so a batch maps as `X·W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Ordered layers of the classifier. Hidden layers use ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

/// Gradient of the mean loss with respect to every parameter of a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub ModelParams);

impl ModelParams {
    /// Checks that layer shapes chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("model has no layers"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.cols() {
                return Err(Error::dimension(
                    "layer bias",
                    layer.weight.cols(),
                    layer.bias.len(),
                ));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.weight.rows() != layer.weight.cols() {
                    return Err(Error::dimension(
                        "layer chaining",
                        layer.weight.cols(),
                        next.weight.rows(),
                    ));
                }
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn num_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.values().len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Iterates all values: each layer's weights (row-major) then its bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.values().iter().chain(&l.bias).copied())
    }

    /// Mutable counterpart of [`ModelParams::iter`], same order.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(|l| {
            let Layer { weight, bias } = l;
            weight.values_mut().iter_mut().chain(bias.iter_mut())
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Overwrites every value from a flat slice in [`ModelParams::iter`] order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::dimension(
                "assign_flat",
                self.num_values(),
                values.len(),
            ));
        }
        for (dst, &src) in self.iter_mut().zip(values) {
            *dst = src;
        }
        Ok(())
    }

    fn check_shape(&self, other: &ModelParams, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dimension(
                context,
                format!("{} values", self.num_values()),
                format!("{} values", other.num_values()),
            ))
        }
    }

    /// Predicted class of every row (argmax of the logits, first index on ties).
    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let logits = forward_logits(self, inputs)?;
        Ok((0..logits.rows())
            .map(|r| {
                logits
                    .row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

impl Gradients {
    pub fn params(&self) -> &ModelParams {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn layer_forward(layer: &Layer, input: &Matrix) -> Result<Matrix> {
    let mut z = input.matmul(&layer.weight)?;
    add_bias(&mut z, &layer.bias);
    Ok(z)
}

/// Batch logits (`batch × num_classes`).
pub fn forward_logits(params: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::dimension(
            "forward_logits input",
            params.input_dim(),
            inputs.cols(),
        ));
    }
    let last = params.layers.len() - 1;
    let mut act = inputs.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        act = layer_forward(layer, &act)?;
        if i < last {
            relu_in_place(&mut act);
        }
    }
    Ok(act)
}

fn check_targets(params: &ModelParams, inputs: &Matrix, targets: &Matrix) -> Result<()> {
    if targets.rows() != inputs.rows() || targets.cols() != params.output_dim() {
        return Err(Error::dimension(
            "targets",
            format!("{}x{}", inputs.rows(), params.output_dim()),
            format!("{}x{}", targets.rows(), targets.cols()),
        ));
    }
    Ok(())
}

/// Mean softmax cross-entropy of the model on a batch.
pub fn mean_loss(params: &ModelParams, inputs: &Matrix, targets: &Matrix) -> Result<f64> {
    check_targets(params, inputs, targets)?;
    let probs = softmax_rows(&forward_logits(params, inputs)?);
    Ok(cross_entropy(&probs, targets)?.1)
}

/// Analytic gradient of the mean softmax cross-entropy, plus that mean loss.
///
/// The gradient is that of the unclamped loss; it differs from the clamped
/// loss only where a target-class probability falls below `1e-12`.
pub fn backward_grads(
    params: &ModelParams,
    inputs: &Matrix,
    targets: &Matrix,
) -> Result<(Gradients, f64)> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::dimension(
            "backward_grads input",
            params.input_dim(),
            inputs.cols(),
        ));
    }
    check_targets(params, inputs, targets)?;

    // activations[0] = input, activations[i+1] = output of layer i (post-ReLU for hidden)
    let last = params.layers.len() - 1;
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(inputs.clone());
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = layer_forward(layer, &activations[i])?;
        if i < last {
            relu_in_place(&mut z);
        }
        activations.push(z);
    }

    let probs = softmax_rows(&activations[last + 1]);
    let (_, loss) = cross_entropy(&probs, targets)?;

    let n = inputs.rows().max(1) as f64;
    let mut delta = probs;
    for (d, t) in delta.values_mut().iter_mut().zip(targets.values()) {
        *d = (*d - t) / n;
    }

    let mut grads: Vec<Layer> = Vec::with_capacity(params.layers.len());
    for i in (0..params.layers.len()).rev() {
        let weight = activations[i].t_matmul(&delta)?;
        let mut bias = vec![0.0; delta.cols()];
        for r in 0..delta.rows() {
            for (b, d) in bias.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        if i > 0 {
            let mut upstream = delta.matmul_t(&params.layers[i].weight)?;
            // ReLU derivative: activation of layer i-1 is zero where pre-activation <= 0
            for (u, &a) in upstream
                .values_mut()
                .iter_mut()
                .zip(activations[i].values())
            {
                if a <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
        grads.push(Layer { weight, bias });
    }
    grads.reverse();
    Ok((Gradients(ModelParams { layers: grads }), loss))
}

/// Elementwise `Σ wᵢ·θᵢ`, reduced in list order.
pub fn linear_combination_params(terms: &[(f64, &ModelParams)]) -> Result<ModelParams> {
    let (_, first) = terms
        .first()
        .ok_or_else(|| Error::validation("linear combination of zero models"))?;
    for (_, p) in &terms[1..] {
        first.check_shape(p, "linear_combination_params")?;
    }
    let mut out = (*first).clone();
    for v in out.iter_mut() {
        *v = 0.0;
    }
    for (w, p) in terms {
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}
