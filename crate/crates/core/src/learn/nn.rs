//! Small feed-forward networks over a flat parameter vector, with explicit
//! backward passes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    /// `y = act(W x + b)`, `W` row-major `output × input`, then `b`.
    Dense { input: usize, output: usize, activation: Activation, offset: usize },
    /// Valid convolution over a channel-major `in_c × in_h × in_w` tensor.
    /// Kernel layout `out_c × in_c × k × k`, then `out_c` biases.
    Conv { in_c: usize, in_h: usize, in_w: usize, out_c: usize, kernel: usize, stride: usize, activation: Activation, offset: usize },
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output, .. } => output * input + output,
            Layer::Conv { in_c, out_c, kernel, .. } => out_c * in_c * kernel * kernel + out_c,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } => output,
            Layer::Conv { out_c, .. } => {
                let (oh, ow) = self.conv_out();
                out_c * oh * ow
            }
        }
    }

    fn conv_out(&self) -> (usize, usize) {
        match *self {
            Layer::Conv { in_h, in_w, kernel, stride, .. } => ((in_h - kernel) / stride + 1, (in_w - kernel) / stride + 1),
            Layer::Dense { .. } => (1, 1),
        }
    }

    fn offset(&self) -> usize {
        match *self {
            Layer::Dense { offset, .. } | Layer::Conv { offset, .. } => offset,
        }
    }

    fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        match *self {
            Layer::Dense { input, output, activation, offset } => {
                let w = &p[offset..offset + input * output];
                let b = &p[offset + input * output..offset + input * output + output];
                (0..output)
                    .map(|o| {
                        let row = &w[o * input..(o + 1) * input];
                        activation.apply(b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                    })
                    .collect()
            }
            Layer::Conv { in_c, in_h, in_w, out_c, kernel, stride, activation, offset } => {
                let (oh, ow) = self.conv_out();
                let nw = out_c * in_c * kernel * kernel;
                let (w, b) = (&p[offset..offset + nw], &p[offset + nw..offset + nw + out_c]);
                let mut y = vec![0.0; out_c * oh * ow];
                for o in 0..out_c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut s = b[o];
                            for c in 0..in_c {
                                for ki in 0..kernel {
                                    let xrow = (c * in_h + i * stride + ki) * in_w + j * stride;
                                    let wrow = ((o * in_c + c) * kernel + ki) * kernel;
                                    for kj in 0..kernel {
                                        s += w[wrow + kj] * x[xrow + kj];
                                    }
                                }
                            }
                            y[(o * oh + i) * ow + j] = activation.apply(s);
                        }
                    }
                }
                y
            }
        }
    }

    /// Accumulates parameter gradients into `g` and returns the input
    /// gradient. `y` is this layer's output, `dy` the gradient w.r.t. it.
    fn backward(&self, p: &[f64], x: &[f64], y: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        match *self {
            Layer::Dense { input, output, activation, offset } => {
                let mut dx = vec![0.0; input];
                for o in 0..output {
                    let dz = dy[o] * activation.grad_from_output(y[o]);
                    if dz == 0.0 {
                        continue;
                    }
                    let row = offset + o * input;
                    for i in 0..input {
                        g[row + i] += dz * x[i];
                        dx[i] += dz * p[row + i];
                    }
                    g[offset + input * output + o] += dz;
                }
                dx
            }
            Layer::Conv { in_c, in_h, in_w, out_c, kernel, stride, activation, offset } => {
                let (oh, ow) = self.conv_out();
                let nw = out_c * in_c * kernel * kernel;
                let mut dx = vec![0.0; x.len()];
                for o in 0..out_c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let k = (o * oh + i) * ow + j;
                            let dz = dy[k] * activation.grad_from_output(y[k]);
                            if dz == 0.0 {
                                continue;
                            }
                            g[offset + nw + o] += dz;
                            for c in 0..in_c {
                                for ki in 0..kernel {
                                    let xrow = (c * in_h + i * stride + ki) * in_w + j * stride;
                                    let wrow = offset + ((o * in_c + c) * kernel + ki) * kernel;
                                    for kj in 0..kernel {
                                        g[wrow + kj] += dz * x[xrow + kj];
                                        dx[xrow + kj] += dz * p[wrow + kj];
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
        }
    }

    /// Scaled Gaussian initialisation (`gain / sqrt(fan_in)`) and zero bias.
    fn init<R: Rng>(&self, p: &mut [f64], gain: f64, rng: &mut R) {
        let (fan_in, nw) = match *self {
            Layer::Dense { input, output, .. } => (input, input * output),
            Layer::Conv { in_c, out_c, kernel, .. } => (in_c * kernel * kernel, out_c * in_c * kernel * kernel),
        };
        let scale = gain / (fan_in as f64).sqrt();
        let off = self.offset();
        for v in &mut p[off..off + nw] {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * scale;
        }
        for v in &mut p[off + nw..off + self.param_count()] {
            *v = 0.0;
        }
    }
}

/// A chain of layers sharing one parameter vector with other networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

/// Layer outputs from a forward pass, input first.
pub type Trace = Vec<Vec<f64>>;

impl Sequential {
    pub fn output_len(&self) -> usize {
        self.layers.last().map(Layer::output_len).unwrap_or(0)
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Trace {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        for l in &self.layers {
            let y = l.forward(p, trace.last().expect("input"));
            trace.push(y);
        }
        trace
    }

    pub fn backward(&self, p: &[f64], trace: &Trace, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut d = dy.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            d = l.backward(p, &trace[k], &trace[k + 1], &d, g);
        }
        d
    }

    /// Hidden layers use `hidden_gain`, the last layer `out_gain`.
    pub fn init<R: Rng>(&self, p: &mut [f64], hidden_gain: f64, out_gain: f64, rng: &mut R) {
        let n = self.layers.len();
        for (k, l) in self.layers.iter().enumerate() {
            l.init(p, if k + 1 == n { out_gain } else { hidden_gain }, rng);
        }
    }
}

/// Allocates consecutive parameter ranges for layers.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    pub next: usize,
}

impl ParamAllocator {
    pub fn dense(&mut self, input: usize, output: usize, activation: Activation) -> Layer {
        let l = Layer::Dense { input, output, activation, offset: self.next };
        self.next += l.param_count();
        l
    }

    pub fn conv(&mut self, (in_c, in_h, in_w): (usize, usize, usize), out_c: usize, kernel: usize, stride: usize) -> Layer {
        let l = Layer::Conv { in_c, in_h, in_w, out_c, kernel, stride, activation: Activation::Relu, offset: self.next };
        self.next += l.param_count();
        l
    }

    pub fn mlp(&mut self, sizes: &[usize], hidden: Activation, out: Activation) -> Sequential {
        let n = sizes.len() - 1;
        let layers = (0..n).map(|k| self.dense(sizes[k], sizes[k + 1], if k + 1 == n { out } else { hidden })).collect();
        Sequential { layers }
    }

    pub fn take(&mut self, n: usize) -> usize {
        let off = self.next;
        self.next += n;
        off
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-5, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mh = self.m[k] / b1t;
            let vh = self.v[k] / b2t;
            params[k] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar loss `Σ yᵢ·wᵢ` so the output gradient is a fixed vector.
    fn check(net: &Sequential, n: usize, input: Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = vec![0.0; n];
        net.init(&mut p, 1.0, 1.0, &mut rng);
        for v in p.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let m = net.output_len();
        let wout: Vec<f64> = (0..m).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let loss = |p: &[f64], x: &[f64]| net.forward(p, x).last().unwrap().iter().zip(&wout).map(|(a, b)| a * b).sum::<f64>();
        let trace = net.forward(&p, &input);
        let mut g = vec![0.0; n];
        let dx = net.backward(&p, &trace, &wout, &mut g);
        let h = 1e-6;
        for k in (0..n).step_by((n / 25).max(1)) {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (loss(&a, &input) - loss(&b, &input)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
        for k in (0..input.len()).step_by((input.len() / 10).max(1)) {
            let (mut a, mut b) = (input.clone(), input.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
            assert!((fd - dx[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "input {k}");
        }
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut alloc = ParamAllocator::default();
        let net = alloc.mlp(&[5, 7, 3], Activation::Tanh, Activation::Identity);
        check(&net, alloc.next, vec![0.3, -0.2, 0.9, 0.1, -0.7]);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut alloc = ParamAllocator::default();
        let c1 = alloc.conv((2, 9, 9), 3, 3, 2);
        let flat = c1.output_len();
        let d = alloc.dense(flat, 4, Activation::Tanh);
        let net = Sequential { layers: vec![c1, d] };
        let input: Vec<f64> = (0..2 * 81).map(|k| ((k * 37 % 11) as f64) / 11.0).collect();
        check(&net, alloc.next, input);
    }
}
