//! Dense feed-forward networks with exact backpropagation.
//!
//! Parameters live in one flat vector. Layer `l` contributes its weight
//! matrix (`outputs × inputs`, row-major) followed by its bias vector, and
//! layers are laid out in order. Losses are averaged over the batch.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, invalid, Error, Result};
use crate::partition::ParamPartition;
use crate::surface::LossSurface;
use crate::tensor::{Batch, Targets, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    /// The ReLU derivative at exactly 0 is 0.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Terminal loss applied to the last layer's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// Softmax over the outputs followed by cross-entropy against a class
    /// index.
    SoftmaxCrossEntropy,
    /// Squared error summed over output units, averaged over examples.
    MeanSquaredError,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::SoftmaxCrossEntropy => "softmax_ce",
            Head::MeanSquaredError => "mse",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "softmax_ce" => Some(Head::SoftmaxCrossEntropy),
            "mse" => Some(Head::MeanSquaredError),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Architecture of a dense network: the parameters are supplied per call.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Network {
    layers: Vec<Dense>,
    head: Head,
    param_count: usize,
}

/// Per-layer activations cached by the forward pass.
struct Trace {
    /// `pre[l]`: pre-activations of layer `l`, `rows × outputs`.
    pre: Vec<Vec<f64>>,
    /// `post[l]`: inputs to layer `l` (`post[0]` is the batch itself);
    /// `post[L]` is the network output.
    post: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(layers: Vec<Dense>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.inputs == 0 || layer.outputs == 0 {
                return Err(invalid(format!("layer {l} has a zero dimension")));
            }
        }
        for pair in layers.windows(2) {
            check_len("consecutive layer width", pair[0].outputs, pair[1].inputs)?;
        }
        let param_count = layers.iter().map(Dense::param_count).sum();
        Ok(Self {
            layers,
            head,
            param_count,
        })
    }

    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the output
    /// layer is linear.
    pub fn mlp(sizes: &[usize], hidden: Activation, head: Head) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid("mlp needs at least input and output sizes"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| Dense {
                inputs: w[0],
                outputs: w[1],
                activation: if l == last { Activation::Identity } else { hidden },
            })
            .collect();
        Self::new(layers, head)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Flat range covering layer `l`'s weights and bias.
    pub fn layer_range(&self, l: usize) -> Range<usize> {
        let start: usize = self.layers[..l].iter().map(Dense::param_count).sum();
        start..start + self.layers[l].param_count()
    }

    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        (0..self.layers.len()).map(|l| self.layer_range(l)).collect()
    }

    /// Weight matrix and bias vector ranges of every layer, in flat order.
    pub fn tensor_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let r = self.layer_range(l);
            let w_end = r.start + layer.outputs * layer.inputs;
            out.push(r.start..w_end);
            out.push(w_end..r.end);
        }
        out
    }

    /// Partition with only the listed layers corruptible.
    pub fn layer_partition(&self, layers: &[usize]) -> Result<ParamPartition> {
        let mut ranges = Vec::with_capacity(layers.len());
        for &l in layers {
            if l >= self.layers.len() {
                return Err(invalid(format!(
                    "layer {l} out of range for a {}-layer network",
                    self.layers.len()
                )));
            }
            ranges.push(self.layer_range(l));
        }
        ParamPartition::from_ranges(self.param_count, &ranges)
    }

    /// Seeded initialization: weights uniform in `±sqrt(6 / (in + out))`
    /// (Glorot), biases zero.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(self.param_count);
        for layer in &self.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for _ in 0..layer.inputs * layer.outputs {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, layer.outputs));
        }
        params
    }

    fn check_batch(&self, params: &[f64], batch: &Batch) -> Result<()> {
        check_len("parameter vector", self.param_count, params.len())?;
        if batch.is_empty() {
            return Err(invalid("batch has no examples"));
        }
        check_len("input width", self.input_dim(), batch.inputs.row_width())?;
        match (&batch.targets, self.head) {
            (Targets::Classes(c), Head::SoftmaxCrossEntropy) => {
                let classes = self.output_dim();
                if let Some(bad) = c.iter().find(|&&t| t >= classes) {
                    return Err(invalid(format!("class index {bad} out of range for {classes} outputs")));
                }
            }
            (Targets::Values(t), Head::MeanSquaredError) => {
                check_len("target width", self.output_dim(), t.row_width())?;
            }
            _ => return Err(invalid("target kind does not match the loss head")),
        }
        Ok(())
    }

    fn run(&self, params: &[f64], inputs: &[f64], rows: usize) -> Trace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(inputs.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + layer.param_count()];
            offset += layer.param_count();

            let x = post.last().expect("inputs pushed above");
            let mut z = vec![0.0; rows * n_out];
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let wo = &w[o * n_in..(o + 1) * n_in];
                    z[r * n_out + o] = b[o] + dot(wo, xr);
                }
            }
            let y = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(y);
        }
        Trace { pre, post }
    }

    /// Mean loss and the derivative of the mean loss with respect to the
    /// network outputs.
    fn head_loss(&self, outputs: &[f64], targets: &Targets, rows: usize) -> (f64, Vec<f64>) {
        let n_out = self.output_dim();
        let scale = 1.0 / rows as f64;
        let mut total = 0.0;
        let mut d = vec![0.0; outputs.len()];
        match (self.head, targets) {
            (Head::SoftmaxCrossEntropy, Targets::Classes(classes)) => {
                for (r, &class) in classes.iter().enumerate() {
                    let row = &outputs[r * n_out..(r + 1) * n_out];
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let log_z = max + sum.ln();
                    total += log_z - row[class];
                    for o in 0..n_out {
                        let p = (row[o] - log_z).exp();
                        let indicator = if o == class { 1.0 } else { 0.0 };
                        d[r * n_out + o] = (p - indicator) * scale;
                    }
                }
            }
            (Head::MeanSquaredError, Targets::Values(t)) => {
                for (i, (o, y)) in outputs.iter().zip(t.values()).enumerate() {
                    let diff = o - y;
                    total += diff * diff;
                    d[i] = 2.0 * diff * scale;
                }
            }
            _ => unreachable!("validated by check_batch"),
        }
        (total * scale, d)
    }

    /// Mean loss and the network outputs (`rows × output_dim`).
    pub fn forward(&self, params: &[f64], batch: &Batch) -> Result<(f64, Tensor)> {
        self.check_batch(params, batch)?;
        let rows = batch.len();
        let trace = self.run(params, batch.inputs.values(), rows);
        let outputs = trace.post.last().expect("at least one layer");
        let (loss, _) = self.head_loss(outputs, &batch.targets, rows);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss}")));
        }
        let out = Tensor::new(vec![rows, self.output_dim()], outputs.clone())?;
        Ok((loss, out))
    }

    /// Gradient of the mean loss with respect to all parameters, in flat
    /// layout.
    pub fn backward(&self, params: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.param_count];
        self.backprop(params, batch, Some(&mut grad), false)?;
        Ok(grad)
    }

    /// Runs forward and backward; fills `grad` when given and returns the
    /// loss plus, when requested, the gradient with respect to the inputs.
    fn backprop(
        &self,
        params: &[f64],
        batch: &Batch,
        mut grad: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        self.check_batch(params, batch)?;
        if let Some(g) = grad.as_deref() {
            check_len("gradient buffer", self.param_count, g.len())?;
        }
        let rows = batch.len();
        let trace = self.run(params, batch.inputs.values(), rows);
        let (loss, mut delta) = self.head_loss(trace.post.last().expect("nonempty"), &batch.targets, rows);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss}")));
        }

        let mut offset = self.param_count;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            offset -= layer.param_count();
            let z = &trace.pre[l];
            let y = &trace.post[l + 1];
            for i in 0..delta.len() {
                delta[i] *= layer.activation.derivative(z[i], y[i]);
            }
            let x = &trace.post[l];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[offset..offset + layer.param_count()].split_at_mut(n_in * n_out);
                gw.iter_mut().for_each(|v| *v = 0.0);
                gb.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..rows {
                    let xr = &x[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        let d = delta[r * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                            *gwi += d * xi;
                        }
                    }
                }
            }
            if l > 0 || want_input_grad {
                let w = &params[offset..offset + n_in * n_out];
                let mut prev = vec![0.0; rows * n_in];
                for r in 0..rows {
                    let pr = &mut prev[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        let d = delta[r * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, wi) in pr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *p += d * wi;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok((loss, want_input_grad.then_some(delta)))
    }

    /// Predicted class per row (arg-max of the outputs, lowest index on
    /// ties).
    pub fn predict(&self, params: &[f64], inputs: &Tensor) -> Result<Vec<usize>> {
        check_len("parameter vector", self.param_count, params.len())?;
        check_len("input width", self.input_dim(), inputs.row_width())?;
        let rows = inputs.rows();
        let trace = self.run(params, inputs.values(), rows);
        let out = trace.post.last().expect("nonempty");
        let n_out = self.output_dim();
        Ok((0..rows).map(|r| argmax(&out[r * n_out..(r + 1) * n_out])).collect())
    }

    /// Fraction of correctly classified rows; requires class targets.
    pub fn accuracy(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        let Targets::Classes(classes) = &batch.targets else {
            return Err(invalid("accuracy requires class targets"));
        };
        if classes.is_empty() {
            return Err(invalid("batch has no examples"));
        }
        let pred = self.predict(params, &batch.inputs)?;
        let hits = pred.iter().zip(classes).filter(|(p, c)| p == c).count();
        Ok(hits as f64 / classes.len() as f64)
    }
}

impl LossSurface for Network {
    fn dim(&self) -> usize {
        self.param_count
    }

    fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        self.forward(params, batch).map(|(loss, _)| loss)
    }

    fn loss_grad_into(&self, params: &[f64], batch: &Batch, grad: &mut [f64]) -> Result<f64> {
        self.backprop(params, batch, Some(grad), false).map(|(loss, _)| loss)
    }

    fn input_gradient(&self, params: &[f64], batch: &Batch) -> Result<Option<Tensor>> {
        let (_, dx) = self.backprop(params, batch, None, true)?;
        let dx = dx.expect("requested input gradient");
        Ok(Some(Tensor::new(batch.inputs.shape().to_vec(), dx)?))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A network together with its parameters.
///
/// A model remembers the cumulative corruption applied on top of its clean
/// parameters, so applying `a` and then `-a` restores the clean bits
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    network: Network,
    clean: Vec<f64>,
    offset: Option<Vec<f64>>,
    params: Vec<f64>,
}

impl Model {
    pub fn new(network: Network, params: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", network.param_count(), params.len())?;
        Ok(Self {
            network,
            clean: params.clone(),
            offset: None,
            params,
        })
    }

    /// Freshly initialized model; see [`Network::init_params`].
    pub fn init(network: Network, seed: u64) -> Self {
        let params = network.init_params(seed);
        Self::new(network, params).expect("init_params yields param_count values")
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(network: Network, flat: &[f64]) -> Result<Self> {
        Self::new(network, flat.to_vec())
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Effective (possibly corrupted) parameters in flat layout.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    /// Cumulative full-length corruption relative to the clean parameters.
    pub fn corruption(&self) -> Vec<f64> {
        self.offset.clone().unwrap_or_else(|| vec![0.0; self.params.len()])
    }

    /// The same network with the corruption removed.
    pub fn clean(&self) -> Model {
        Model::new(self.network.clone(), self.clean.clone()).expect("lengths already checked")
    }

    pub fn forward(&self, batch: &Batch) -> Result<(f64, Tensor)> {
        self.network.forward(&self.params, batch)
    }

    pub fn backward(&self, batch: &Batch) -> Result<Vec<f64>> {
        self.network.backward(&self.params, batch)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.network.loss(&self.params, batch)
    }

    pub fn accuracy(&self, batch: &Batch) -> Result<f64> {
        self.network.accuracy(&self.params, batch)
    }

    /// Returns a copy whose corruptible coordinates are shifted by `a`
    /// (length `partition.k()`); frozen coordinates keep their bits.
    pub fn apply_corruption(&self, a: &[f64], partition: &ParamPartition) -> Result<Model> {
        check_len("partition mask", self.params.len(), partition.total())?;
        check_len("corruption vector", partition.k(), a.len())?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("corruption vector has non-finite entries"));
        }
        let mut offset = self.corruption();
        for (&i, &v) in partition.indices().iter().zip(a) {
            offset[i] += v;
        }
        let params = self
            .clean
            .iter()
            .zip(&offset)
            .map(|(&w, &o)| if o == 0.0 { w } else { w + o })
            .collect();
        Ok(Model {
            network: self.network.clone(),
            clean: self.clean.clone(),
            offset: Some(offset),
            params,
        })
    }
}
