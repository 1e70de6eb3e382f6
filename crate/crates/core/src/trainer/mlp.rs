use nalgebra::{DMatrix, RowDVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::FeatureBatch;
use crate::error::{Result, SpdError};

/// One affine layer: `x ↦ x W + b` with `W` of shape fan-in × fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: DMatrix::zeros(fan_in, fan_out),
            bias: RowDVector::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Feed-forward classifier: rectified hidden layers, linear output (logits).
///
/// The activations feeding the output layer are the "hidden features" whose
/// covariances get aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(SpdError::Invalid("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(SpdError::Dimension(format!(
                    "layer {i}: bias has {} entries for fan-out {}",
                    l.bias.len(),
                    l.fan_out()
                )));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(SpdError::NonFinite(format!("layer {i} parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(SpdError::Dimension(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-style uniform init, `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init<R: Rng>(input_dim: usize, hidden_dims: &[usize], num_classes: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 || hidden_dims.contains(&0) {
            return Err(SpdError::Invalid(format!(
                "bad architecture: input {input_dim}, hidden {hidden_dims:?}, classes {num_classes}"
            )));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden_dims.iter().copied())
            .chain(std::iter::once(num_classes))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)),
                    bias: RowDVector::zeros(w[1]),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Activations kept for the backward pass.
pub(crate) struct ForwardCache {
    /// `inputs[l]` feeds layer `l`; the last entry is the hidden features.
    pub inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of every hidden layer.
    pub pre: Vec<DMatrix<f64>>,
    pub logits: DMatrix<f64>,
}

impl ForwardCache {
    pub fn hidden(&self) -> &DMatrix<f64> {
        &self.inputs[self.inputs.len() - 1]
    }
}

fn affine(x: &DMatrix<f64>, layer: &Layer) -> DMatrix<f64> {
    let mut z = x * &layer.weights;
    for mut row in z.row_iter_mut() {
        row += &layer.bias;
    }
    z
}

pub(crate) fn forward_cached(params: &MlpParams, x: &DMatrix<f64>) -> Result<ForwardCache> {
    if x.ncols() != params.input_dim() {
        return Err(SpdError::Dimension(format!(
            "batch has {} features, network expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let n = params.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n - 1);
    let mut current = x.clone();
    for layer in &params.layers[..n - 1] {
        let z = affine(&current, layer);
        let a = z.map(|v| v.max(0.0));
        inputs.push(current);
        pre.push(z);
        current = a;
    }
    let logits = affine(&current, &params.layers[n - 1]);
    inputs.push(current);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(SpdError::NonFinite("network activations".into()));
    }
    Ok(ForwardCache {
        inputs,
        pre,
        logits,
    })
}

/// Hidden features (input to the output layer) and logits.
pub fn forward(params: &MlpParams, batch: &FeatureBatch) -> Result<(FeatureBatch, DMatrix<f64>)> {
    let cache = forward_cached(params, batch.rows())?;
    let hidden = batch.map_rows(cache.hidden().clone())?;
    Ok((hidden, cache.logits))
}

/// Accumulates parameter gradients given `∂L/∂logits` and an optional extra
/// `∂L/∂hidden` term.
pub(crate) fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_logits: Option<&DMatrix<f64>>,
    grad_hidden: Option<&DMatrix<f64>>,
    grads: &mut [Layer],
) {
    let n = params.layers.len();
    let rows = cache.logits.nrows();
    let k = params.num_classes();
    let mut upstream = match grad_logits {
        Some(g) => g.clone(),
        None => DMatrix::zeros(rows, k),
    };
    for l in (0..n).rev() {
        let layer = &params.layers[l];
        grads[l].weights += cache.inputs[l].transpose() * &upstream;
        grads[l].bias += upstream.row_sum();
        if l == 0 {
            break;
        }
        let mut g_in = &upstream * layer.weights.transpose();
        if l == n - 1 {
            if let Some(extra) = grad_hidden {
                g_in += extra;
            }
        }
        let z = &cache.pre[l - 1];
        g_in.zip_apply(z, |g, zv| {
            if zv <= 0.0 {
                *g = 0.0;
            }
        });
        upstream = g_in;
    }
}

pub(crate) fn zero_grads(params: &MlpParams) -> Vec<Layer> {
    params
        .layers
        .iter()
        .map(|l| Layer::zeros(l.fan_in(), l.fan_out()))
        .collect()
}

/// Row-wise softmax cross-entropy, averaged; returns the loss and `∂L/∂logits`.
pub(crate) fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> (f64, DMatrix<f64>) {
    let rows = logits.nrows();
    let mut grad = DMatrix::zeros(rows, logits.ncols());
    let mut total = 0.0;
    for i in 0..rows {
        let row = logits.row(i);
        let max = row.max();
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        total += -(row[labels[i]] - max - log_denom);
        for j in 0..logits.ncols() {
            grad[(i, j)] = (row[j] - max).exp() / denom;
        }
        grad[(i, labels[i])] -= 1.0;
    }
    let scale = 1.0 / rows as f64;
    (total * scale, grad * scale)
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    layers: Vec<LayerRepr>,
}

impl Serialize for MlpParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = ParamsRepr {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRepr {
                    weights: l
                        .weights
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ParamsRepr::deserialize(d)?;
        let mut layers = Vec::with_capacity(repr.layers.len());
        for l in repr.layers {
            let rows = l.weights.len();
            let cols = l.weights.first().map_or(0, Vec::len);
            if l.weights.iter().any(|r| r.len() != cols) {
                return Err(serde::de::Error::custom("ragged weight matrix"));
            }
            layers.push(Layer {
                weights: DMatrix::from_fn(rows, cols, |i, j| l.weights[i][j]),
                bias: RowDVector::from_vec(l.bias),
            });
        }
        MlpParams::new(layers).map_err(serde::de::Error::custom)
    }
}
