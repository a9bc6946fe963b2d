//! Small dense feed-forward networks with manual backpropagation and Adam.
//!
//! Weights are stored row-major as `n_out x n_in`. Hidden layers share one
//! activation; the output layer is affine.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, gain: f64, rng: &mut R) -> Self {
        // Uniform with variance gain^2 / n_in.
        let bound = gain * (3.0 / n_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    pub fn w(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.n_out, self.n_in), &self.weights).expect("layer shape")
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.n_in + inp]
    }
}

/// A multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `outputs[0]` is the input batch, `outputs[l + 1]` the output of layer `l`.
    outputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("non-empty tape")
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    /// Rescale so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b))
            .all(|g| g.is_finite())
    }
}

impl Mlp {
    /// Network with layer widths `sizes` (input first, output last).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let gain = match activation {
            Activation::Relu => 2f64.sqrt(),
            Activation::Tanh => 1.0,
        };
        let layers = sizes
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], gain, rng))
            .collect();
        Self { activation, layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("layers").n_out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_inputs()];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    /// Multiply the output layer weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("layers");
        last.weights.iter_mut().for_each(|w| *w *= factor);
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                *zo += row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            a = z;
        }
        a
    }

    /// Pre-activations of every layer for one sample; the last entry is the
    /// network output.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut a = x.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                *zo += row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
            }
            a = z.iter().map(|&v| self.activation.apply(v)).collect();
            out.push(z);
        }
        out
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Tape> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::Dimension {
                expected: self.n_inputs(),
                got: x.ncols(),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = outputs.last().expect("input");
            let mut z = prev.dot(&layer.w().t());
            for mut row in z.rows_mut() {
                row.iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
            }
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            outputs.push(z);
        }
        Ok(Tape { outputs })
    }

    /// Backpropagate `d_out` (gradient of the loss w.r.t. the network output,
    /// one row per sample) through the recorded tape.
    pub fn backward(&self, tape: &Tape, d_out: ArrayView2<'_, f64>) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let input = &tape.outputs[l];
            let dw = delta.t().dot(input);
            let db = delta.sum_axis(Axis(0));
            grads.layers[l].0.copy_from_slice(dw.as_slice().expect("standard layout"));
            grads.layers[l].1.copy_from_slice(db.as_slice().expect("standard layout"));
            if l > 0 {
                let mut prev = delta.dot(&self.layers[l].w());
                let act = self.activation;
                prev.zip_mut_with(input, |d, &a| *d *= act.grad_from_output(a));
                delta = prev;
            }
        }
        grads
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .all(|v| v.is_finite())
    }
}

/// Moments of weights with zero gradient (dead ReLU units) decay
/// geometrically into the subnormal range, where arithmetic is very slow.
/// Values this small have no effect on the update.
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-150 {
        0.0
    } else {
        x
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m.layers[l];
            let (vw, vb) = &mut self.v.layers[l];
            for (p, g, m, v) in [
                (&mut layer.weights, gw, mw, vw),
                (&mut layer.bias, gb, mb, vb),
            ] {
                for i in 0..p.len() {
                    m[i] = flush(b1 * m[i] + (1.0 - b1) * g[i]);
                    v[i] = flush(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &Array2<f64>, target: &Array2<f64>) -> f64 {
        let out = net.forward_batch(x.view()).unwrap();
        0.5 * (out.output() - target).mapv(|v| v * v).sum()
    }

    fn check_gradients(activation: Activation) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[3, 7, 5, 2], activation, &mut rng);
        let x = array![[0.3, -1.2, 0.8], [1.5, 0.1, -0.4], [-0.7, 0.9, 0.2]];
        let target = array![[0.5, -0.1], [0.0, 1.0], [0.2, 0.3]];
        let tape = net.forward_batch(x.view()).unwrap();
        let d_out = tape.output() - &target;
        let grads = net.backward(&tape, d_out.view());
        let h = 1e-6;
        for l in 0..net.layers.len() {
            for i in 0..net.layers[l].weights.len() {
                let mut plus = net.clone();
                plus.layers[l].weights[i] += h;
                let mut minus = net.clone();
                minus.layers[l].weights[i] -= h;
                let fd = (loss(&plus, &x, &target) - loss(&minus, &x, &target)) / (2.0 * h);
                let g = grads.layers[l].0[i];
                assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "w[{l}][{i}] {fd} vs {g}");
            }
            for i in 0..net.layers[l].bias.len() {
                let mut plus = net.clone();
                plus.layers[l].bias[i] += h;
                let mut minus = net.clone();
                minus.layers[l].bias[i] -= h;
                let fd = (loss(&plus, &x, &target) - loss(&minus, &x, &target)) / (2.0 * h);
                let g = grads.layers[l].1[i];
                assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "b[{l}][{i}] {fd} vs {g}");
            }
        }
    }

    #[test]
    fn tanh_gradients_match_finite_differences() {
        check_gradients(Activation::Tanh);
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        check_gradients(Activation::Relu);
    }

    #[test]
    fn single_and_batched_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[4, 8, 1], Activation::Relu, &mut rng);
        let x = array![[0.1, 0.2, -0.3, 0.4], [1.0, -1.0, 0.5, 0.0]];
        let batch = net.forward_batch(x.view()).unwrap();
        for (r, row) in x.rows().into_iter().enumerate() {
            let single = net.forward(row.as_slice().unwrap());
            assert!((single[0] - batch.output()[[r, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_fits_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[1, 16, 1], Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((32, 1), |(i, _)| i as f64 / 16.0 - 1.0);
        let y = x.mapv(|v| 0.5 * v - 0.2);
        let mut adam = Adam::new(&net, 1e-2);
        for _ in 0..2000 {
            let tape = net.forward_batch(x.view()).unwrap();
            let d = (tape.output() - &y) / 32.0;
            let g = net.backward(&tape, d.view());
            adam.step(&mut net, &g);
        }
        assert!(loss(&net, &x, &y) / 32.0 < 1e-4);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[2, 3, 1], Activation::Relu, &mut rng);
        let x = Array2::<f64>::zeros((1, 3));
        assert!(matches!(
            net.forward_batch(x.view()),
            Err(Error::Dimension { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn clip_norm_caps_the_global_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[2, 3, 1], Activation::Relu, &mut rng);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].0[0] = 3.0;
        g.layers[1].1[0] = 4.0;
        g.clip_norm(1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
