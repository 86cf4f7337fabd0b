//! Fully connected network with tanh hidden layers and a linear output,
//! with hand-written reverse-mode gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PpoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }
}

/// Network parameters. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer outputs saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    values: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(layer_sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    /// LeCun-normal weights, zero biases; the output layer is scaled by
    /// `output_gain`.
    pub fn random<R: Rng + ?Sized>(layer_sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(layer_sizes);
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let scale = (1.0 / layer.inputs as f64).sqrt() * if l == last { output_gain } else { 1.0 };
            for w in &mut layer.weights {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
        }
        net
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_shapes(&self) -> Result<(), PpoError> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(PpoError::ShapeMismatch(format!("layer {i} storage does not match its sizes")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(PpoError::ShapeMismatch(format!("layer {i} input does not match previous output")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, PpoError> {
        self.check_shapes()?;
        if x.len() != self.input_size() {
            return Err(PpoError::ShapeMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        let mut cache = Activations::default();
        Ok(self.forward_cached(x, &mut cache).to_vec())
    }

    /// Forward pass that keeps every layer output in `cache`. Shapes are
    /// trusted; use [`Mlp::forward`] for checked evaluation.
    pub fn forward_cached<'a>(&self, x: &[f64], cache: &'a mut Activations) -> &'a [f64] {
        let n = self.layers.len();
        cache.values.resize_with(n + 1, Vec::new);
        cache.values[0].clear();
        cache.values[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.values.split_at_mut(l + 1);
            let input = &done[l];
            let out = &mut rest[0];
            out.clear();
            out.extend_from_slice(&layer.biases);
            for (o, row) in out.iter_mut().zip(layer.weights.chunks_exact(layer.inputs)) {
                *o += row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            }
            if l + 1 < n {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        &cache.values[n]
    }

    /// Accumulates into `grad` the gradient of ⟨upstream, output⟩ for the
    /// input last passed to [`Mlp::forward_cached`].
    pub fn backward(&self, cache: &mut Activations, upstream: &[f64], grad: &mut Mlp) {
        let n = self.layers.len();
        let Activations {
            values,
            delta,
            delta_prev,
        } = cache;
        delta.clear();
        delta.extend_from_slice(upstream);
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            if l + 1 < n {
                for (d, a) in delta.iter_mut().zip(&values[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &values[l];
            for (o, d) in delta.iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, v) in row.iter_mut().zip(input) {
                    *w += d * v;
                }
            }
            if l > 0 {
                delta_prev.clear();
                delta_prev.resize(layer.inputs, 0.0);
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in delta_prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }

    /// Gradient of ⟨upstream, forward(x)⟩ with respect to every parameter.
    pub fn gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Mlp, PpoError> {
        self.check_shapes()?;
        if x.len() != self.input_size() || upstream.len() != self.output_size() {
            return Err(PpoError::ShapeMismatch(format!(
                "input/upstream lengths {}/{} do not match network {}/{}",
                x.len(),
                upstream.len(),
                self.input_size(),
                self.output_size()
            )));
        }
        let mut cache = Activations::default();
        let mut grad = self.zeros_like();
        self.forward_cached(x, &mut cache);
        self.backward(&mut cache, upstream, &mut grad);
        Ok(grad)
    }

    /// Parameters in a fixed order: per layer, weights then biases.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
    }

    /// Inverse of [`Mlp::write_flat`]; returns the unread tail.
    pub fn read_flat<'a>(&mut self, mut flat: &'a [f64]) -> &'a [f64] {
        for l in &mut self.layers {
            let (w, rest) = flat.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, rest) = rest.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            flat = rest;
        }
        flat
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.write_flat(&mut v);
        v
    }

    pub fn fill(&mut self, value: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = value);
            l.biases.iter_mut().for_each(|b| *b = value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::stream_from_seed;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[7, 16, 16, 3]);
        assert_eq!(net.forward(&[0.3; 7]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(&[3, 3]);
        for i in 0..3 {
            net.layers[0].weights[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn shape_mismatch() {
        let net = Mlp::zeros(&[4, 2]);
        assert!(matches!(net.forward(&[1.0; 3]), Err(PpoError::ShapeMismatch(_))));
        assert!(matches!(net.gradient(&[1.0; 4], &[1.0; 3]), Err(PpoError::ShapeMismatch(_))));
        let mut broken = net.clone();
        broken.layers[0].biases.pop();
        assert!(matches!(broken.forward(&[1.0; 4]), Err(PpoError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = Mlp::random(&[5, 8, 2], 1.0, &mut stream_from_seed(0));
        let g = net.gradient(&[0.1, 0.2, 0.3, 0.4, 0.5], &[0.0, 0.0]).unwrap();
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let net = Mlp::random(&[3, 2], 1.0, &mut stream_from_seed(1));
        let x = [0.5, -1.0, 2.0];
        let u = [3.0, -0.25];
        let g = net.gradient(&x, &u).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.layers[0].weights[o * 3 + i], u[o] * x[i]);
            }
            assert_eq!(g.layers[0].biases[o], u[o]);
        }
    }

    #[test]
    fn flat_round_trip() {
        let net = Mlp::random(&[3, 4, 2], 1.0, &mut stream_from_seed(2));
        let flat = net.flat();
        assert_eq!(flat.len(), net.num_params());
        let mut other = net.zeros_like();
        assert!(other.read_flat(&flat).is_empty());
        assert_eq!(other, net);
    }
}
