//! Small fully connected network with rectifier hidden layers and two logits,
//! plus hand-written backpropagation and the Adam update.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::RngSeed;

/// Number of logits; one per category.
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim: OUTPUT_DIM,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `input_dim → 64 → 32 → 2`.
    pub fn with_default_hidden(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, vec![64, 32])
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim != OUTPUT_DIM {
            return Err(Error::domain(format!("output_dim must be {OUTPUT_DIM}, got {}", self.output_dim)));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::domain("all layer widths must be >= 1"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major as `fan_out × fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.fan_in).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)
        }));
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Per-layer parameter-shaped buffers (gradients, Adam moments).
pub type LayerBuffers = Vec<Dense>;

fn zeros_like(layers: &[Dense]) -> LayerBuffers {
    layers.iter().map(|l| Dense::zeros(l.fan_in, l.fan_out)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (post-activation, post-dropout of the previous layer).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Vec<f64>>,
    /// Per-unit dropout scale (0 or 1/(1-rate)) on each hidden layer; empty when inactive.
    dropout_scales: Vec<Vec<f64>>,
    pub logits: [f64; 2],
}

impl Mlp {
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_shapes().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect();
        Ok(Self { spec, layers })
    }

    /// Weights uniform in `±sqrt(6/(fan_in + fan_out))`, biases zero.
    pub fn init(spec: NetworkSpec, seed: RngSeed) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = seed.rng();
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite init range");
            for w in &mut layer.weights {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::format(format!("expected {} layers, found {}", shapes.len(), layers.len())));
        }
        for (k, ((fan_in, fan_out), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.fan_in != *fan_in
                || layer.fan_out != *fan_out
                || layer.weights.len() != fan_in * fan_out
                || layer.bias.len() != *fan_out
            {
                return Err(Error::format(format!("layer {k} shape does not match the network spec")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::domain(format!(
                "feature length {} does not match input_dim {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Deterministic logits `(o_0, o_1)`.
    pub fn logits(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check_input(x)?;
        Ok(self.run(x, None::<(f64, &mut rand_chacha::ChaCha8Rng)>).logits)
    }

    /// Forward pass with inverted dropout on the hidden activations.
    pub fn logits_with_dropout<R: Rng>(&self, x: &[f64], rate: f64, rng: &mut R) -> Result<[f64; 2]> {
        self.check_input(x)?;
        check_dropout_rate(rate)?;
        Ok(self.run(x, Some((rate, rng))).logits)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn trace<R: Rng>(&self, x: &[f64], dropout: Option<(f64, &mut R)>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        if let Some((rate, _)) = &dropout {
            check_dropout_rate(*rate)?;
        }
        Ok(self.run(x, dropout))
    }

    fn run<R: Rng>(&self, x: &[f64], mut dropout: Option<(f64, &mut R)>) -> ForwardTrace {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre_activations = Vec::with_capacity(n - 1);
        let mut dropout_scales = Vec::new();
        let mut current = x.to_vec();
        let mut z = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut z);
            inputs.push(std::mem::take(&mut current));
            if k + 1 == n {
                break;
            }
            let mut h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            if let Some((rate, rng)) = dropout.as_mut() {
                let scales = dropout_scales_for(h.len(), *rate, *rng);
                h.iter_mut().zip(&scales).for_each(|(v, s)| *v *= s);
                dropout_scales.push(scales);
            }
            pre_activations.push(z.clone());
            current = h;
        }
        ForwardTrace {
            inputs,
            pre_activations,
            dropout_scales,
            logits: [z[0], z[1]],
        }
    }

    /// Accumulates `∂loss/∂θ` into `grads` given `∂loss/∂logits`.
    pub fn backward(&self, trace: &ForwardTrace, d_logits: [f64; 2], grads: &mut [Dense]) {
        let mut delta = d_logits.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.inputs[k];
            let g = &mut grads[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                row.iter_mut().zip(input).for_each(|(gw, xi)| *gw += d * xi);
            }
            if k == 0 {
                break;
            }
            let mut upstream = vec![0.0; layer.fan_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                upstream.iter_mut().zip(row).for_each(|(u, w)| *u += d * w);
            }
            let pre = &trace.pre_activations[k - 1];
            let scales = trace.dropout_scales.get(k - 1);
            for (j, u) in upstream.iter_mut().enumerate() {
                let relu = if pre[j] > 0.0 { 1.0 } else { 0.0 };
                let drop = scales.map_or(1.0, |s| s[j]);
                *u *= relu * drop;
            }
            delta = upstream;
        }
    }

    pub fn zero_grads(&self) -> LayerBuffers {
        zeros_like(&self.layers)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::domain("parameter vector length mismatch"));
        }
        let mut it = values.iter();
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::domain(format!("dropout rate must lie in [0, 1), got {rate}")))
    }
}

fn dropout_scales_for<R: Rng>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = Bernoulli::new(1.0 - rate).expect("rate validated in [0, 1)");
    let scale = 1.0 / (1.0 - rate);
    (0..n).map(|_| if keep.sample(rng) { scale } else { 0.0 }).collect()
}

pub fn flatten(buffers: &[Dense]) -> Vec<f64> {
    buffers.iter().flat_map(|l| l.params().copied()).collect()
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: LayerBuffers,
    pub second_moment: LayerBuffers,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self {
            step: 0,
            first_moment: net.zero_grads(),
            second_moment: net.zero_grads(),
        }
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        let same = |a: &[Dense]| {
            a.len() == net.layers.len()
                && a.iter().zip(&net.layers).all(|(x, y)| x.fan_in == y.fan_in && x.fan_out == y.fan_out)
        };
        same(&self.first_moment) && same(&self.second_moment)
    }

    /// One bias-corrected Adam step with learning rate `lr`.
    pub fn update(&mut self, net: &mut Mlp, grads: &[Dense], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for (((p, g), m), v) in layer.params_mut().zip(g.params()).zip(m.params_mut()).zip(v.params_mut()) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}
