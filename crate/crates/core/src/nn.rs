//! A small fully connected network with hand-written backpropagation, Adam,
//! and the policy distributions used by the trainer.
//!
//! Parameters live in one flat vector per network. Layer `l` stores its
//! weight matrix row-major (`out × in`) followed by its bias vector.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::ActionSpace;
use crate::error::{Error, Result};
use crate::math::{exp, ln, powi, sqrt, tanh, LN_2PI};
use crate::oracle::sample_categorical;
use crate::trajectory::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Hidden layers use `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Layer outputs from one forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `activations[0]` is the input, the last entry the network output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// All parameters zero.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config("network needs at least two non-empty layers".into()));
        }
        let count = sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params: vec![0.0; count],
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        for layer in 0..net.n_layers() {
            let bound = 1.0 / sqrt(net.sizes[layer] as f64);
            let (w, _) = net.layer_range(layer);
            for p in &mut net.params[w] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of the weights and biases of `layer`.
    pub fn layer_range(&self, layer: usize) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let offset: usize = self.sizes[..layer].iter().zip(&self.sizes[1..]).map(|(i, o)| (i + 1) * o).sum();
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w_end = offset + n_in * n_out;
        (offset..w_end, w_end..w_end + n_out)
    }

    /// Multiply the weights and biases of one layer by `factor`.
    pub fn scale_layer(&mut self, layer: usize, factor: f64) {
        let (w, b) = self.layer_range(layer);
        for p in &mut self.params[w.start..b.end] {
            *p *= factor;
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let (w, b) = self.layer_range(layer);
        let weights = &self.params[w];
        let biases = &self.params[b];
        let n_in = input.len();
        let last = layer + 1 == self.n_layers();
        biases
            .iter()
            .enumerate()
            .map(|(o, bias)| {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = row.iter().zip(input).fold(*bias, |acc, (w, x)| acc + w * x);
                if last {
                    z
                } else {
                    self.activation.apply(z)
                }
            })
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in 0..self.n_layers() {
            x = self.layer_forward(layer, &x);
        }
        Ok(x)
    }

    pub fn forward_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| self.forward(x)).collect()
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.to_vec());
        for layer in 0..self.n_layers() {
            let next = self.layer_forward(layer, &activations[layer]);
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Adds `∂(upstream · output)/∂params` into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if cache.activations.len() != self.sizes.len()
            || cache.activations.iter().zip(&self.sizes).any(|(a, s)| a.len() != *s)
        {
            return Err(Error::Precondition("forward cache does not belong to this network"));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        if grads.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                found: grads.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for layer in (0..self.n_layers()).rev() {
            let input = &cache.activations[layer];
            let n_in = input.len();
            let (w, b) = self.layer_range(layer);
            for (o, d) in delta.iter().enumerate() {
                grads[b.start + o] += d;
                let row = &mut grads[w.start + o * n_in..w.start + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let weights = &self.params[w];
            let mut down = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (acc, w) in down.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            if layer > 0 {
                for (acc, y) in down.iter_mut().zip(input) {
                    *acc *= self.activation.derivative_from_output(*y);
                }
            }
            delta = down;
        }
        Ok(delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 2.5e-4;

    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_parts(&mut [params], grads)
    }

    /// One update over parameters split across several buffers, treated as
    /// their concatenation.
    pub fn step_parts(&mut self, parts: &mut [&mut [f64]], grads: &[f64]) -> Result<()> {
        let total: usize = parts.iter().map(|p| p.len()).sum();
        if total != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                found: if total != self.m.len() { total } else { grads.len() },
            });
        }
        self.step += 1;
        let t = self.step as usize;
        let c1 = 1.0 - powi(self.beta1, t);
        let c2 = 1.0 - powi(self.beta2, t);
        let mut i = 0;
        for part in parts.iter_mut() {
            for p in part.iter_mut() {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                *p -= self.learning_rate * m_hat / (sqrt(v_hat) + self.eps);
                i += 1;
            }
        }
        Ok(())
    }
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// How network outputs become an action distribution. Gaussian heads carry a
/// learnable, state-independent log standard deviation per action dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyHead {
    Categorical { n_actions: usize },
    Gaussian { log_std: Vec<f64> },
}

/// Action distribution at one observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Categorical { log_probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + ln(logits.iter().map(|l| exp(l - max)).sum::<f64>());
    logits.iter().map(|l| l - log_z).collect()
}

impl Distribution {
    pub fn probs(&self) -> Option<Vec<f64>> {
        match self {
            Distribution::Categorical { log_probs } => Some(log_probs.iter().map(|l| exp(*l)).collect()),
            Distribution::Gaussian { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            Distribution::Categorical { log_probs } => {
                let probs: Vec<f64> = log_probs.iter().map(|l| exp(*l)).collect();
                Action::Discrete(sample_categorical(&probs, rng))
            }
            Distribution::Gaussian { mean, log_std } => Action::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + exp(*s) * z
                    })
                    .collect(),
            ),
        }
    }

    /// Most likely action.
    pub fn mode(&self) -> Action {
        match self {
            Distribution::Categorical { log_probs } => {
                let mut best = 0;
                for (i, l) in log_probs.iter().enumerate() {
                    if *l > log_probs[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            Distribution::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (Distribution::Categorical { log_probs }, Action::Discrete(a)) => log_probs
                .get(*a)
                .copied()
                .ok_or_else(|| Error::InvalidAction(alloc::format!("action {a} not in 0..{}", log_probs.len()))),
            (Distribution::Gaussian { mean, log_std }, Action::Continuous(a)) if a.len() == mean.len() => {
                Ok(mean
                    .iter()
                    .zip(log_std)
                    .zip(a)
                    .map(|((m, s), x)| {
                        let z = (x - m) / exp(*s);
                        -0.5 * z * z - s - 0.5 * LN_2PI
                    })
                    .sum())
            }
            _ => Err(Error::InvalidAction("action does not match the distribution".into())),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Distribution::Categorical { log_probs } => -log_probs.iter().map(|l| exp(*l) * l).sum::<f64>(),
            Distribution::Gaussian { log_std, .. } => log_std.iter().map(|s| s + 0.5 * (1.0 + LN_2PI)).sum(),
        }
    }

    /// Gradient of `logp_coef · log π(action) + entropy_coef · H(π)` with
    /// respect to the network output and the log-std parameters.
    pub fn grad(&self, action: &Action, logp_coef: f64, entropy_coef: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self, action) {
            (Distribution::Categorical { log_probs }, Action::Discrete(a)) if *a < log_probs.len() => {
                let h = self.entropy();
                let d_logits = log_probs
                    .iter()
                    .enumerate()
                    .map(|(j, l)| {
                        let p = exp(*l);
                        let d_logp = if j == *a { 1.0 - p } else { -p };
                        logp_coef * d_logp - entropy_coef * p * (l + h)
                    })
                    .collect();
                Ok((d_logits, Vec::new()))
            }
            (Distribution::Gaussian { mean, log_std }, Action::Continuous(x)) if x.len() == mean.len() => {
                let mut d_mean = Vec::with_capacity(mean.len());
                let mut d_log_std = Vec::with_capacity(mean.len());
                for ((m, s), x) in mean.iter().zip(log_std).zip(x) {
                    let var = exp(2.0 * s);
                    let diff = x - m;
                    d_mean.push(logp_coef * diff / var);
                    d_log_std.push(logp_coef * (diff * diff / var - 1.0) + entropy_coef);
                }
                Ok((d_mean, d_log_std))
            }
            _ => Err(Error::InvalidAction("action does not match the distribution".into())),
        }
    }
}

/// A network body followed by an action distribution head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub body: Mlp,
    pub head: PolicyHead,
}

impl Policy {
    /// Observation → hidden layers → action logits or Gaussian means. The
    /// output layer is scaled by `output_scale` so the initial policy is close
    /// to uniform (or to zero-mean) when the scale is small.
    pub fn new<R: Rng + ?Sized>(
        observation_dim: usize,
        hidden: &[usize],
        activation: Activation,
        action_space: ActionSpace,
        output_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (out, head) = match action_space {
            ActionSpace::Discrete(n) => (n, PolicyHead::Categorical { n_actions: n }),
            ActionSpace::Continuous(d) => (d, PolicyHead::Gaussian { log_std: vec![0.0; d] }),
        };
        let mut sizes = vec![observation_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        let mut body = Mlp::new(&sizes, activation, rng)?;
        let last = body.n_layers() - 1;
        body.scale_layer(last, output_scale);
        Ok(Self { body, head })
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count() + self.log_std().len()
    }

    pub fn log_std(&self) -> &[f64] {
        match &self.head {
            PolicyHead::Categorical { .. } => &[],
            PolicyHead::Gaussian { log_std } => log_std,
        }
    }

    fn make_distribution(&self, output: &[f64]) -> Distribution {
        match &self.head {
            PolicyHead::Categorical { .. } => Distribution::Categorical {
                log_probs: log_softmax(output),
            },
            PolicyHead::Gaussian { log_std } => Distribution::Gaussian {
                mean: output.to_vec(),
                log_std: log_std.iter().map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
            },
        }
    }

    pub fn distribution(&self, observation: &[f64]) -> Result<Distribution> {
        Ok(self.make_distribution(&self.body.forward(observation)?))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> Result<(Action, f64)> {
        let dist = self.distribution(observation)?;
        let action = dist.sample(rng);
        let logp = dist.log_prob(&action)?;
        Ok((action, logp))
    }

    pub fn log_prob(&self, observation: &[f64], action: &Action) -> Result<f64> {
        self.distribution(observation)?.log_prob(action)
    }

    pub fn greedy_action(&self, observation: &[f64]) -> Result<Action> {
        Ok(self.distribution(observation)?.mode())
    }

    /// Adds the gradient of `logp_coef · log π(a|s) + entropy_coef · H` to
    /// `grads` (body parameters first, then log-std) and returns
    /// `(log π(a|s), H)`.
    pub fn accumulate_grad(
        &self,
        observation: &[f64],
        action: &Action,
        logp_coef: f64,
        entropy_coef: f64,
        grads: &mut [f64],
    ) -> Result<(f64, f64)> {
        if grads.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                found: grads.len(),
            });
        }
        let cache = self.body.forward_cached(observation)?;
        let dist = self.make_distribution(cache.output());
        let logp = dist.log_prob(action)?;
        let entropy = dist.entropy();
        let (d_out, d_log_std) = dist.grad(action, logp_coef, entropy_coef)?;
        let n = self.body.param_count();
        self.body.backward(&cache, &d_out, &mut grads[..n])?;
        // Clamped log-std entries sit on a flat piece of the clamp.
        for ((g, d), s) in grads[n..].iter_mut().zip(&d_log_std).zip(self.log_std()) {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(s) {
                *g += d;
            }
        }
        Ok((logp, entropy))
    }

    /// Adam step over body parameters and log-std together, then clamp the
    /// log-std into its allowed range.
    pub fn apply(&mut self, adam: &mut AdamState, grads: &[f64]) -> Result<()> {
        match &mut self.head {
            PolicyHead::Categorical { .. } => adam.step(self.body.params_mut(), grads),
            PolicyHead::Gaussian { log_std } => {
                adam.step_parts(&mut [self.body.params.as_mut_slice(), log_std.as_mut_slice()], grads)?;
                for s in log_std.iter_mut() {
                    *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
                }
                Ok(())
            }
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.body.params().to_vec();
        v.extend_from_slice(self.log_std());
        v
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                found: params.len(),
            });
        }
        let n = self.body.param_count();
        self.body.params_mut().copy_from_slice(&params[..n]);
        if let PolicyHead::Gaussian { log_std } = &mut self.head {
            log_std.copy_from_slice(&params[n..]);
        }
        Ok(())
    }
}

/// Central finite differences of `f` around `params`.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(params: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Below this magnitude both gradients are treated as zero-sized; relative
/// error would otherwise measure finite-difference rounding noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, GRAD_CHECK_FLOOR)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(GRAD_CHECK_FLOOR))
        .fold(0.0, f64::max)
}
