//! Small dense feedforward networks with hand-written reverse-mode gradients.
//!
//! Every hidden layer applies `tanh`; the output layer is linear. Weights are
//! stored row-major with shape `(outputs, inputs)`.
//!
//! Two calling styles exist. The stateful pair [`DenseNet::forward_train`] /
//! [`DenseNet::backward`] caches the last forward pass inside the network. The
//! pure pair [`DenseNet::forward_trace`] / [`DenseNet::backward_trace`] hands
//! the cache to the caller, which is what batch code uses to spread samples
//! across threads with [`DenseNet::batch_gradient`].

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Samples per work unit in [`DenseNet::batch_gradient`]. Fixed so that the
/// summation order never depends on the thread count.
const GRADIENT_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Dense {
    fn xavier<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| dot(row, x) + b),
        );
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
}

/// Activations recorded by one forward pass: `activations[0]` is the input,
/// `activations[l + 1]` the output of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace always holds the input")
    }
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Dense>,
    cache: Option<ForwardTrace>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::xavier(w[0], w[1], rng))
            .collect();
        Ok(DenseNet {
            layers,
            cache: None,
        })
    }

    /// Builds a network from explicit parameters; `weights[l]` is row-major
    /// `(layer_sizes[l + 1], layer_sizes[l])`.
    pub fn from_parameters(
        layer_sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let n = layer_sizes.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: weights.len().min(biases.len()),
            });
        }
        let mut layers = Vec::with_capacity(n);
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (inputs, outputs) = (layer_sizes[l], layer_sizes[l + 1]);
            if w.len() != inputs * outputs {
                return Err(Error::DimensionMismatch {
                    expected: inputs * outputs,
                    actual: w.len(),
                });
            }
            if b.len() != outputs {
                return Err(Error::DimensionMismatch {
                    expected: outputs,
                    actual: b.len(),
                });
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights: w,
                biases: b,
            });
        }
        Ok(DenseNet {
            layers,
            cache: None,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&x, &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut x, &mut out);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.affine(&activations[l], &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Forward pass that keeps its activations for a following [`backward`](Self::backward).
    pub fn forward_train(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(input)?;
        let out = trace.output().to_vec();
        self.cache = Some(trace);
        Ok(out)
    }

    /// Gradient of the loss with respect to every parameter, given the loss
    /// gradient at the output of the last [`forward_train`](Self::forward_train) call.
    pub fn backward(&self, output_gradient: &[f64]) -> Result<GradientTape> {
        let trace = self.cache.as_ref().ok_or(Error::NoForwardPass)?;
        self.backward_trace(trace, output_gradient)
    }

    pub fn backward_trace(
        &self,
        trace: &ForwardTrace,
        output_gradient: &[f64],
    ) -> Result<GradientTape> {
        let mut tape = GradientTape::zeros_like(self);
        self.accumulate_gradient(trace, output_gradient, &mut tape)?;
        Ok(tape)
    }

    /// Adds the parameter gradient for one sample into `tape`.
    pub fn accumulate_gradient(
        &self,
        trace: &ForwardTrace,
        output_gradient: &[f64],
        tape: &mut GradientTape,
    ) -> Result<()> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len() + 1,
                actual: trace.activations.len(),
            });
        }
        if output_gradient.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: output_gradient.len(),
            });
        }
        tape.check_shape(self)?;

        let mut delta = output_gradient.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            let gw = &mut tape.weights[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                axpy(&mut gw[o * layer.inputs..(o + 1) * layer.inputs], *d, input);
                tape.biases[l][o] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    axpy(
                        &mut prev,
                        *d,
                        &layer.weights[o * layer.inputs..(o + 1) * layer.inputs],
                    );
                }
                // input to this layer is a tanh output: d tanh = 1 - a^2
                prev.iter_mut()
                    .zip(input)
                    .for_each(|(p, a)| *p *= 1.0 - a * a);
                delta = prev;
            }
        }
        Ok(())
    }

    /// Sums per-sample losses and parameter gradients over a batch.
    ///
    /// `loss` receives the sample index and the network output and returns
    /// that sample's loss together with its gradient at the output. Samples
    /// are processed in fixed-size chunks (in parallel with the `parallel`
    /// feature) and the chunk results are folded in order.
    pub fn batch_gradient<S, F>(&self, inputs: &[S], loss: F) -> Result<(f64, GradientTape)>
    where
        S: AsRef<[f64]> + Sync,
        F: Fn(usize, &[f64]) -> (f64, Vec<f64>) + Sync + Send,
    {
        let mut buffer = GradientBuffer::new(self);
        let total = self.batch_gradient_with(inputs, loss, &mut buffer)?;
        Ok((total, buffer.total))
    }

    /// Same as [`batch_gradient`](Self::batch_gradient) but writes into a
    /// reusable buffer, avoiding large allocations on every call.
    pub fn batch_gradient_with<S, F>(
        &self,
        inputs: &[S],
        loss: F,
        buffer: &mut GradientBuffer,
    ) -> Result<f64>
    where
        S: AsRef<[f64]> + Sync,
        F: Fn(usize, &[f64]) -> (f64, Vec<f64>) + Sync + Send,
    {
        buffer.total.check_shape(self)?;
        buffer.total.zero();
        let chunks: Vec<(usize, usize)> = (0..inputs.len())
            .step_by(GRADIENT_CHUNK)
            .map(|start| (start, (start + GRADIENT_CHUNK).min(inputs.len())))
            .collect();
        let run_chunk = |(start, end): (usize, usize), tape: &mut GradientTape| -> Result<f64> {
            let mut total = 0.0;
            for (i, input) in inputs.iter().enumerate().take(end).skip(start) {
                let trace = self.forward_trace(input.as_ref())?;
                let (l, grad) = loss(i, trace.output());
                total += l;
                self.accumulate_gradient(&trace, &grad, tape)?;
            }
            Ok(total)
        };

        let mut total = 0.0;
        if chunks.len() > 1 && par::is_parallel() {
            let partials = par::map(&chunks, |&chunk| {
                let mut tape = GradientTape::zeros_like(self);
                run_chunk(chunk, &mut tape).map(|l| (l, tape))
            });
            for partial in partials {
                let (l, tape) = partial?;
                total += l;
                buffer.total.add_assign(&tape)?;
            }
        } else {
            for &chunk in &chunks {
                buffer.scratch.zero();
                total += run_chunk(chunk, &mut buffer.scratch)?;
                buffer.total.add_assign(&buffer.scratch)?;
            }
        }
        Ok(total)
    }

    pub fn snapshot(&self) -> NetSnapshot {
        NetSnapshot {
            layer_sizes: self.layer_sizes(),
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
        }
    }

    pub fn from_snapshot(snapshot: NetSnapshot) -> Result<Self> {
        Self::from_parameters(&snapshot.layer_sizes, snapshot.weights, snapshot.biases)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.snapshot())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let snapshot: NetSnapshot = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_snapshot(snapshot)
    }
}

/// Dot product with four independent partial sums (fixed order, so results
/// are reproducible while the loop still vectorises).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "a network needs at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Parameter dump: layer sizes header plus row-major arrays per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Output and scratch tapes for [`DenseNet::batch_gradient_with`].
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    total: GradientTape,
    scratch: GradientTape,
}

impl GradientBuffer {
    pub fn new(net: &DenseNet) -> Self {
        GradientBuffer {
            total: GradientTape::zeros_like(net),
            scratch: GradientTape::zeros_like(net),
        }
    }

    pub fn tape(&self) -> &GradientTape {
        &self.total
    }
}

/// Per-parameter partial derivatives, shaped like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientTape {
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradientTape {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn check_shape(&self, net: &DenseNet) -> Result<()> {
        let ok = self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(l, layer)| {
                self.weights[l].len() == layer.weights.len()
                    && self.biases[l].len() == layer.biases.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: net.parameter_count(),
                actual: self.len(),
            })
        }
    }

    pub fn len(&self) -> usize {
        self.slices().map(<[f64]>::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().chain(&self.biases).map(Vec::as_slice)
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .chain(&mut self.biases)
            .map(Vec::as_mut_slice)
    }

    /// All entries, weights of every layer first, then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.slices().flatten()
    }

    pub fn zero(&mut self) {
        self.slices_mut().for_each(|s| s.fill(0.0));
    }

    pub fn scale(&mut self, factor: f64) {
        self.slices_mut()
            .for_each(|s| s.iter_mut().for_each(|v| *v *= factor));
    }

    pub fn add_assign(&mut self, other: &GradientTape) -> Result<()> {
        let shapes_match = self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self
                .slices()
                .zip(other.slices())
                .all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        for (a, b) in self.slices_mut().zip(other.slices()) {
            axpy(a, 1.0, b);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Weight gradient of layer `layer`, output row `o`, input column `i`.
    pub fn weight(&self, net: &DenseNet, layer: usize, o: usize, i: usize) -> f64 {
        self.weights[layer][o * net.layers[layer].inputs + i]
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: GradientTape,
    second: GradientTape,
    steps: u64,
}

impl Adam {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: GradientTape::zeros_like(net),
            second: GradientTape::zeros_like(net),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Moves `net` against the gradient in `tape`. A tape with any non-finite
    /// entry is rejected and neither the network nor the moments change.
    pub fn step(&mut self, net: &mut DenseNet, tape: &GradientTape) -> Result<()> {
        tape.check_shape(net)?;
        self.first.check_shape(net)?;
        if !tape.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step_size = self.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let update = |params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            }
        };
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (m, v) = (&mut self.first, &mut self.second);
            update(
                &mut layer.weights,
                &tape.weights[l],
                &mut m.weights[l],
                &mut v.weights[l],
            );
            update(
                &mut layer.biases,
                &tape.biases[l],
                &mut m.biases[l],
                &mut v.biases[l],
            );
        }
        net.cache = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Layer-by-layer reference written against explicit 2-D matrices.
    fn oracle_forward(net: &DenseNet, input: &[f64]) -> Vec<f64> {
        let sizes = net.layer_sizes();
        let mut x = input.to_vec();
        for (l, layer) in net.layers().iter().enumerate() {
            let rows = sizes[l + 1];
            let cols = sizes[l];
            let m: Vec<Vec<f64>> = (0..rows)
                .map(|r| layer.weights()[r * cols..(r + 1) * cols].to_vec())
                .collect();
            let mut y = vec![0.0; rows];
            for r in 0..rows {
                let mut acc = layer.biases()[r];
                for c in 0..cols {
                    acc += m[r][c] * x[c];
                }
                y[r] = if l + 1 < sizes.len() - 1 {
                    acc.tanh()
                } else {
                    acc
                };
            }
            x = y;
        }
        x
    }

    fn perturbed(net: &DenseNet, layer: usize, weight: bool, idx: usize, h: f64) -> DenseNet {
        let mut snap = net.snapshot();
        if weight {
            snap.weights[layer][idx] += h;
        } else {
            snap.biases[layer][idx] += h;
        }
        DenseNet::from_snapshot(snap).unwrap()
    }

    /// loss = sum_k c_k * out_k
    fn weighted_loss(net: &DenseNet, input: &[f64], coeffs: &[f64]) -> f64 {
        net.forward(input)
            .unwrap()
            .iter()
            .zip(coeffs)
            .map(|(o, c)| o * c)
            .sum()
    }

    pub(crate) fn max_fd_relative_error(net: &DenseNet, input: &[f64], coeffs: &[f64]) -> f64 {
        let h = 1e-5;
        let tape = net
            .backward_trace(&net.forward_trace(input).unwrap(), coeffs)
            .unwrap();
        let mut worst: f64 = 0.0;
        for l in 0..net.layers().len() {
            for (weight, n) in [
                (true, net.layers()[l].weights().len()),
                (false, net.layers()[l].biases().len()),
            ] {
                for i in 0..n {
                    let plus = weighted_loss(&perturbed(net, l, weight, i, h), input, coeffs);
                    let minus = weighted_loss(&perturbed(net, l, weight, i, -h), input, coeffs);
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = if weight {
                        tape.weights[l][i]
                    } else {
                        tape.biases[l][i]
                    };
                    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max((analytic - numeric).abs() / denom);
                }
            }
        }
        worst
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net =
            DenseNet::from_parameters(&[2, 2], vec![vec![1.0, 0.0, 0.0, 1.0]], vec![vec![0.0; 2]])
                .unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_input_with_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[4, 6, 6, 3], &mut rng).unwrap();
        assert!(net.forward(&[0.0; 4]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
            // non-zero biases so they are exercised too
            let mut snap = net.snapshot();
            snap.biases
                .iter_mut()
                .flatten()
                .for_each(|b| *b = rng.gen_range(-0.5..0.5));
            net = DenseNet::from_snapshot(snap).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = net.forward(&x).unwrap();
            let want = oracle_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNet::new(&[3, 2], &mut rng).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 1
            })
        ));
    }

    #[test]
    fn linear_weight_gradient_is_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::new(&[3, 2], &mut rng).unwrap();
        let x = [0.3, -1.2, 2.5];
        net.forward_train(&x).unwrap();
        let tape = net.backward(&[1.0, 0.0]).unwrap();
        for j in 0..3 {
            assert_eq!(tape.weight(&net, 0, 0, j), x[j]);
            assert_eq!(tape.weight(&net, 0, 1, j), 0.0);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = DenseNet::new(&[4, 8, 3], &mut rng).unwrap();
        net.forward_train(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let tape = net.backward(&[0.0; 3]).unwrap();
        assert!(tape.values().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNet::new(&[4, 8, 3], &mut rng).unwrap();
        assert!(matches!(net.backward(&[1.0; 3]), Err(Error::NoForwardPass)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = DenseNet::new(&[4, 8, 3], &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(max_fd_relative_error(&net, &x, &c) < 1e-4);
    }

    #[test]
    fn batch_gradient_equals_sum_of_single_tapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = DenseNet::new(&[3, 5, 2], &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (loss, tape) = net
            .batch_gradient(&xs, |_, out| (out[0], vec![1.0, 0.0]))
            .unwrap();
        let mut expected = GradientTape::zeros_like(&net);
        let mut expected_loss = 0.0;
        for x in &xs {
            let trace = net.forward_trace(x).unwrap();
            expected_loss += trace.output()[0];
            net.accumulate_gradient(&trace, &[1.0, 0.0], &mut expected)
                .unwrap();
        }
        assert!((loss - expected_loss).abs() < 1e-9);
        for (a, b) in tape.values().zip(expected.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_tape_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net, 0.01);
        let zeros = GradientTape::zeros_like(&net);
        opt.step(&mut net, &zeros).unwrap();
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_minimises_quadratic() {
        // single parameter: the bias of a 1->1 layer fed a zero input
        let mut net = DenseNet::from_parameters(&[1, 1], vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        let mut opt = Adam::new(&net, 0.1);
        for _ in 0..500 {
            let out = net.forward_train(&[0.0]).unwrap()[0];
            let tape = net.backward(&[2.0 * (out - 3.0)]).unwrap();
            opt.step(&mut net, &tape).unwrap();
        }
        let theta = net.layers()[0].biases()[0];
        assert!((theta - 3.0).abs() < 1e-3, "theta = {theta}");
    }

    #[test]
    fn adam_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        let run = |mut net: DenseNet| {
            let mut opt = Adam::new(&net, 0.01);
            let trace = net.forward_trace(&[0.5, -0.5, 0.25]).unwrap();
            let tape = net.backward_trace(&trace, &[1.0, -1.0]).unwrap();
            opt.step(&mut net, &tape).unwrap();
            opt.step(&mut net, &tape).unwrap();
            net.snapshot()
        };
        assert_eq!(run(net.clone()), run(net));
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = DenseNet::new(&[2, 2], &mut rng).unwrap();
        let before = net.clone();
        let mut tape = GradientTape::zeros_like(&net);
        tape.weights[0][1] = f64::NAN;
        let mut opt = Adam::new(&net, 0.01);
        assert!(matches!(
            opt.step(&mut net, &tape),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn same_seed_same_initialisation() {
        let a = DenseNet::new(&[5, 7, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = DenseNet::new(&[5, 7, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn snapshot_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = DenseNet::new(&[5, 7, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        net.save_json(&path).unwrap();
        assert_eq!(DenseNet::load_json(&path).unwrap(), net);
    }

    #[test]
    fn from_parameters_rejects_bad_shapes() {
        assert!(
            DenseNet::from_parameters(&[2, 2], vec![vec![0.0; 3]], vec![vec![0.0; 2]]).is_err()
        );
        assert!(DenseNet::from_parameters(&[2], vec![], vec![]).is_err());
        assert!(DenseNet::from_parameters(&[2, 0], vec![vec![]], vec![vec![]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn parameters_stay_finite_under_bounded_updates(
                seed in 0u64..10_000,
                inputs in proptest::collection::vec(
                    proptest::collection::vec(-5.0f64..5.0, 3), 1..20),
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut net = DenseNet::new(&[3, 6, 2], &mut rng).unwrap();
                let mut opt = Adam::new(&net, 0.01);
                for x in &inputs {
                    let out = net.forward_train(x).unwrap();
                    let grad: Vec<f64> = out.iter().map(|o| 2.0 * (o - 1.0)).collect();
                    let tape = net.backward(&grad).unwrap();
                    opt.step(&mut net, &tape).unwrap();
                    prop_assert!(net.is_finite());
                }
            }
        }
    }
}
