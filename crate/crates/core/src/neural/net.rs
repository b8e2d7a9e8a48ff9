use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a));
        Dense { weight, bias: Array1::zeros(fan_out) }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Feed-forward network with a smooth activation after every hidden layer and a
/// linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionerNet {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Activations saved by [`ConditionerNet::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the network output.
    values: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("cache always holds the network input")
    }

    pub fn batch_size(&self) -> usize {
        self.output().nrows()
    }
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NetGradients {
    /// Flattened in the same order as [`ConditionerNet::write_params`].
    pub fn write_flat(&self, out: &mut [f64]) -> usize {
        let mut at = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for (dst, src) in out[at..at + w.len()].iter_mut().zip(w.iter()) {
                *dst = *src;
            }
            at += w.len();
            for (dst, src) in out[at..at + b.len()].iter_mut().zip(b.iter()) {
                *dst = *src;
            }
            at += b.len();
        }
        at
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>();
        let mut out = vec![0.0; n];
        self.write_flat(&mut out);
        out
    }
}

impl ConditionerNet {
    /// Glorot-uniform hidden layers and an all-zero output layer, so the untrained
    /// network outputs exactly zero for every input.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &h in hidden {
            layers.push(Dense::glorot(fan_in, h, rng));
            fan_in = h;
        }
        layers.push(Dense::zeros(fan_in, output));
        ConditionerNet { layers, activation }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    /// `[input, hidden..., output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Dense::fan_out));
        w
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Replaces the output layer with Gaussian noise of the given scale.
    pub fn randomize_output<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.mapv_inplace(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal));
        last.bias.mapv_inplace(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal));
    }

    pub fn write_params(&self, out: &mut [f64]) -> usize {
        let mut at = 0;
        for layer in &self.layers {
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                out[at] = *v;
                at += 1;
            }
        }
        at
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for layer in &mut self.layers {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = src[at];
                at += 1;
            }
        }
        at
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::ShapeMismatch { expected: self.input_width(), got: width });
        }
        Ok(())
    }

    /// Single-example forward pass.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features.len())?;
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::StateMismatch(e.to_string()))?;
        Ok(self.predict(x)?.into_raw_vec_and_offset().0)
    }

    /// Batched forward pass without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Batched forward pass recording every layer input for [`Self::backward`].
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = values[l].dot(&layer.weight);
            z += &layer.bias;
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            values.push(z);
        }
        Ok(ForwardCache { values })
    }

    fn check_cache(&self, cache: &ForwardCache, d_out: &ArrayView2<'_, f64>) -> Result<()> {
        if cache.values.len() != self.layers.len() + 1 {
            return Err(Error::StateMismatch(format!(
                "cache holds {} activations, network has {} layers",
                cache.values.len(),
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.values[l].ncols() != layer.fan_in() {
                return Err(Error::StateMismatch(format!("cache layer {l} width mismatch")));
            }
        }
        if d_out.nrows() != cache.batch_size() || d_out.ncols() != self.output_width() {
            return Err(Error::StateMismatch(format!(
                "upstream gradient is {}x{}, cached output is {}x{}",
                d_out.nrows(),
                d_out.ncols(),
                cache.batch_size(),
                self.output_width()
            )));
        }
        Ok(())
    }

    /// Gradients of `sum(d_out * output)` with respect to all parameters and to the
    /// network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
    ) -> Result<(NetGradients, Array2<f64>)> {
        let (grads, d_in) = self.backward_impl(cache, d_out, 0, true)?;
        Ok((grads, d_in.expect("input gradient requested")))
    }

    /// Parameter gradients for layers `first_trainable..` only; lower layers are
    /// treated as frozen and get zero gradients, and no input gradient is formed.
    pub fn backward_partial(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        first_trainable: usize,
    ) -> Result<NetGradients> {
        Ok(self.backward_impl(cache, d_out, first_trainable, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        first_trainable: usize,
        want_input_grad: bool,
    ) -> Result<(NetGradients, Option<Array2<f64>>)> {
        self.check_cache(cache, &d_out)?;
        let n = self.layers.len();
        let mut weights: Vec<Array2<f64>> =
            self.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect();
        let mut biases: Vec<Array1<f64>> =
            self.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect();
        let stop = if want_input_grad { 0 } else { first_trainable.min(n) };

        let mut delta = d_out.to_owned();
        let mut d_input = None;
        for l in (stop..n).rev() {
            let input = &cache.values[l];
            if l >= first_trainable {
                weights[l] = input.t().dot(&delta);
                biases[l] = delta.sum_axis(Axis(0));
            }
            if l == stop && !want_input_grad {
                break;
            }
            let mut d_prev = delta.dot(&self.layers[l].weight.t());
            if l == 0 {
                d_input = Some(d_prev);
                break;
            }
            let act = self.activation;
            ndarray::Zip::from(&mut d_prev)
                .and(input)
                .for_each(|d, &y| *d *= act.derivative_from_output(y));
            delta = d_prev;
        }
        Ok((NetGradients { weights, biases }, d_input))
    }
}
