//! Dense feed-forward ReLU networks with a scalar linear output.
//!
//! Weights are stored per layer, row-major with shape `(outputs, inputs)`, so
//! `weights[j * inputs + i]` connects unit `i` of the layer below to unit `j`
//! of the layer above. Hidden layers use ReLU, the output layer is linear.
//!
//! The JSON checkpoint format is the serde encoding of [`Network`]: the
//! layer widths followed by the layers in order (input side first), each
//! holding its row-major weight matrix and its bias vector.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Layer widths `[d_in, n_1, ..., n_L, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct NetworkShape {
    widths: Vec<usize>,
}

impl NetworkShape {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidShape(format!(
                "need input, at least one hidden layer and output, got {} widths",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidShape("layer widths must be >= 1".into()));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidShape("output width must be 1".into()));
        }
        Ok(Self { widths })
    }

    /// Shape with the given input dimension and hidden widths and a scalar output.
    pub fn with_hidden(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self::new(widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Width of the final hidden layer, the dimension of the exploration features.
    pub fn last_hidden_width(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }

    pub fn num_weight_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

impl TryFrom<Vec<usize>> for NetworkShape {
    type Error = Error;

    fn try_from(widths: Vec<usize>) -> Result<Self> {
        Self::new(widths)
    }
}

impl From<NetworkShape> for Vec<usize> {
    fn from(shape: NetworkShape) -> Self {
        shape.widths
    }
}

/// Upper bound of the Kaiming-uniform distribution for a unit with `fan_in` inputs.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// One affine map between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Row-major `(outputs, inputs)` weight matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weight from input unit `from` to output unit `to`.
    #[inline]
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[to * self.inputs + from]
    }

    /// Weights arriving at output unit `to`.
    pub fn incoming(&self, to: usize) -> &[f64] {
        &self.weights[to * self.inputs..(to + 1) * self.inputs]
    }

    /// Sum of absolute weights leaving input unit `from`.
    pub fn outgoing_abs_sum(&self, from: usize) -> f64 {
        (0..self.outputs)
            .map(|to| self.weights[to * self.inputs + from].abs())
            .sum()
    }

    pub(crate) fn redraw_incoming<R: Rng>(&mut self, to: usize, rng: &mut R) {
        let bound = kaiming_bound(self.inputs);
        for w in &mut self.weights[to * self.inputs..(to + 1) * self.inputs] {
            *w = rng.random_range(-bound..=bound);
        }
        self.bias[to] = 0.0;
    }

    pub(crate) fn zero_outgoing(&mut self, from: usize) {
        for to in 0..self.outputs {
            self.weights[to * self.inputs + from] = 0.0;
        }
    }

    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Activations captured by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Post-ReLU outputs of every hidden layer, first hidden layer first.
    pub activations: Vec<Vec<f64>>,
    pub prediction: f64,
}

impl ForwardTrace {
    pub fn last_hidden(&self) -> &[f64] {
        self.activations.last().expect("network has a hidden layer")
    }
}

/// Per-parameter gradients of `0.5 * (f(x) - target)^2`, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    shape: NetworkShape,
    layers: Vec<Layer>,
}

impl Network {
    /// All-zero network, used as a fixture and as the accumulator for averaging.
    pub fn zeros(shape: NetworkShape) -> Self {
        let layers = shape
            .widths()
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Self { shape, layers }
    }

    /// Kaiming-uniform weights `U(-sqrt(6/n_in), sqrt(6/n_in))`, zero biases.
    pub fn kaiming(shape: NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(shape);
        for layer in &mut net.layers {
            let bound = kaiming_bound(layer.inputs);
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    /// Builds a network from explicit layers, checking them against `shape`.
    pub fn from_layers(shape: NetworkShape, layers: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        check_dim(shape.num_weight_layers(), layers.len())?;
        let mut out = Vec::with_capacity(layers.len());
        for (w, (weights, bias)) in shape.widths().windows(2).zip(layers) {
            check_dim(w[0] * w[1], weights.len())?;
            check_dim(w[1], bias.len())?;
            out.push(Layer {
                inputs: w[0],
                outputs: w[1],
                weights,
                bias,
            });
        }
        let net = Self { shape, layers: out };
        net.validate()?;
        Ok(net)
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("network has an output layer")
    }

    /// Checks the layer dimensions against the shape and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        check_dim(self.shape.num_weight_layers(), self.layers.len())?;
        for (w, layer) in self.shape.widths().windows(2).zip(&self.layers) {
            check_dim(w[0], layer.inputs)?;
            check_dim(w[1], layer.outputs)?;
            check_dim(w[0] * w[1], layer.weights.len())?;
            check_dim(w[1], layer.bias.len())?;
            if !layer.is_finite() {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_dim(self.shape.input_dim(), x.len())?;
        let hidden = self.layers.len() - 1;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(hidden);
        for (l, layer) in self.layers[..hidden].iter().enumerate() {
            let input = if l == 0 { x } else { &activations[l - 1] };
            let mut out = Vec::with_capacity(layer.outputs);
            layer.affine_into(input, &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(out);
        }
        let out_layer = self.output_layer();
        let h = &activations[hidden - 1];
        let prediction = out_layer
            .weights
            .iter()
            .zip(h)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + out_layer.bias[0];
        Ok(ForwardTrace {
            activations,
            prediction,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.prediction)
    }

    /// Final hidden-layer activations, the representation used for exploration.
    pub fn last_hidden_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward(x)?;
        Ok(trace.activations.pop().expect("network has a hidden layer"))
    }

    /// Backpropagated gradients of `0.5 * (f(x) - target)^2` for an existing trace.
    pub fn gradients(&self, x: &[f64], trace: &ForwardTrace, target: f64) -> Result<Gradients> {
        check_dim(self.shape.input_dim(), x.len())?;
        let n = self.layers.len();
        let mut weights = vec![Vec::new(); n];
        let mut biases = vec![Vec::new(); n];
        // error signal at the outputs of layer l
        let mut delta = vec![trace.prediction - target];
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let input: &[f64] = if l == 0 { x } else { &trace.activations[l - 1] };
            let mut dw = vec![0.0; layer.weights.len()];
            for (row, d) in dw.chunks_exact_mut(layer.inputs).zip(&delta) {
                for (g, v) in row.iter_mut().zip(input) {
                    *g = d * v;
                }
            }
            weights[l] = dw;
            biases[l] = delta.clone();
            if l > 0 {
                let mut below = vec![0.0; layer.inputs];
                for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                    for (b, w) in below.iter_mut().zip(row) {
                        *b += w * d;
                    }
                }
                for (b, h) in below.iter_mut().zip(input) {
                    if *h <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = below;
            }
        }
        Ok(Gradients { weights, biases })
    }

    /// Squared loss `0.5 * (f(x) - target)^2`.
    pub fn loss(&self, x: &[f64], target: f64) -> Result<f64> {
        let r = self.predict(x)? - target;
        Ok(0.5 * r * r)
    }

    /// One plain SGD step on `0.5 * (f(x) - target)^2`.
    ///
    /// Returns the trace of the forward pass taken before the update. On a
    /// non-finite gradient the network is left untouched.
    pub fn train_step(&mut self, x: &[f64], target: f64, lr: f64) -> Result<ForwardTrace> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {lr}")));
        }
        let trace = self.forward(x)?;
        let grads = self.gradients(x, &trace, target)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        self.apply(&grads, lr);
        if !self.layers.iter().all(Layer::is_finite) {
            return Err(Error::NonFinite("network parameters after update"));
        }
        Ok(trace)
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
    }

    /// Euclidean norm of the difference between the two hidden-to-output weight layers.
    pub fn last_layer_delta(&self, other: &Network) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch);
        }
        Ok(self
            .output_layer()
            .weights
            .iter()
            .zip(&other.output_layer().weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Element-wise mean of the parameters of `nets`.
    pub fn mean_of<'a, I>(nets: I) -> Result<Network>
    where
        I: IntoIterator<Item = &'a Network>,
    {
        let mut iter = nets.into_iter();
        let first = iter.next().ok_or(Error::Empty("networks to average"))?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for net in iter {
            if net.shape != acc.shape {
                return Err(Error::ShapeMismatch);
            }
            for (a, b) in acc.layers.iter_mut().zip(&net.layers) {
                a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
                a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
            }
            count += 1;
        }
        if count > 1 {
            let scale = 1.0 / count as f64;
            for layer in &mut acc.layers {
                layer.weights.iter_mut().for_each(|x| *x *= scale);
                layer.bias.iter_mut().for_each(|x| *x *= scale);
            }
        }
        Ok(acc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
