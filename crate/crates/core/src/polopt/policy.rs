//! Feedforward tanh policies stored as one flat parameter vector.
//!
//! Layer `l` is stored as its `out × in` weight matrix (row-major) followed
//! by its `out` biases. A policy vector additionally ends with one
//! log-standard-deviation per action dimension.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::env::Policy;
use crate::error::{Error, Result};
use crate::rng::{SeedKey, Stream};

pub const DEFAULT_HIDDEN: [usize; 2] = [16, 16];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A fully connected network with tanh hidden units and a linear output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Per-layer activations from a forward pass, input first.
#[derive(Clone, Debug)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has an input layer")
    }
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("network layers must be non-empty".into()));
        }
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Ok(Mlp { sizes })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<MlpCache> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                what: "network parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + (n_in + 1) * n_out];
            off += (n_in + 1) * n_out;
            let input = &acts[l];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                out.push(if l + 1 < n_layers { z.tanh() } else { z });
            }
            acts.push(out);
        }
        Ok(MlpCache { acts })
    }

    /// Adds `∂(grad_out · output)/∂params` to `grad`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += (self.sizes[l] + 1) * self.sizes[l + 1];
        }
        // delta holds ∂/∂z of the current layer's pre-activations
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    for (p, w) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    /// Uniform fan-in initialization; the output layer is scaled by
    /// `output_gain`.
    pub fn init<R: Rng + ?Sized>(&self, output_gain: f64, rng: &mut R) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut params = Vec::with_capacity(self.n_params());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 == n_layers { output_gain } else { 1.0 };
            let bound = gain / (n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                params.push(rng.random_range(-1.0..=1.0) * bound);
            }
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        params
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    Fnn {
        state_dim: usize,
        action_dim: usize,
        hidden: Vec<usize>,
    },
    /// State-independent action, e.g. a catapult spring extension.
    Constant { action_dim: usize },
}

impl Architecture {
    pub fn fnn(state_dim: usize, action_dim: usize) -> Self {
        Architecture::Fnn {
            state_dim,
            action_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Architecture::Fnn { action_dim, .. } | Architecture::Constant { action_dim } => *action_dim,
        }
    }

    /// Network for the action mean; `None` for constant policies.
    pub fn mean_net(&self) -> Result<Option<Mlp>> {
        match self {
            Architecture::Fnn {
                state_dim,
                action_dim,
                hidden,
            } => Mlp::new(*state_dim, hidden, *action_dim).map(Some),
            Architecture::Constant { .. } => Ok(None),
        }
    }

    /// Parameters of the action mean, excluding log-stds.
    pub fn n_weights(&self) -> usize {
        match self.mean_net() {
            Ok(Some(net)) => net.n_params(),
            _ => self.action_dim(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.action_dim()
    }
}

/// Policy parameters θ: mean-network weights followed by log-stds.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    net: Option<Mlp>,
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        let net = arch.mean_net()?;
        if theta.len() != arch.n_params() {
            return Err(Error::DimensionMismatch {
                what: "policy parameters",
                expected: arch.n_params(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(PolicyParams { arch, net, theta })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = arch.n_params();
        Self::new(arch, vec![0.0; n])
    }

    /// Random weights with a small output layer, so initial actions are
    /// near zero, and all log-stds set to `log_std`.
    pub fn random(arch: Architecture, log_std: f64, key: SeedKey) -> Result<Self> {
        let mut rng = key.rng(Stream::Optimizer);
        let mut theta = match arch.mean_net()? {
            Some(net) => net.init(0.1, &mut rng),
            None => vec![0.0; arch.action_dim()],
        };
        theta.extend(std::iter::repeat_n(log_std, arch.action_dim()));
        Self::new(arch, theta)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn action_dim(&self) -> usize {
        self.arch.action_dim()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn weights(&self) -> &[f64] {
        &self.theta[..self.arch.n_weights()]
    }

    pub fn log_std(&self) -> &[f64] {
        &self.theta[self.arch.n_weights()..]
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        *self = Self::new(self.arch.clone(), theta)?;
        Ok(())
    }

    /// Copy with the given mean weights and the current log-stds.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        let mut theta = weights.to_vec();
        theta.extend_from_slice(self.log_std());
        Self::new(self.arch.clone(), theta)
    }

    /// Copy with every log-std set to `log_std`.
    pub fn with_exploration_reset(&self, log_std: f64) -> Self {
        let mut out = self.clone();
        let n = out.arch.n_weights();
        for v in &mut out.theta[n..] {
            *v = log_std;
        }
        out
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match &self.net {
            Some(net) => Ok(net.forward(self.weights(), obs)?.output().to_vec()),
            None => Ok(self.weights().to_vec()),
        }
    }

    /// Forward pass keeping the activations needed by [`Self::backward`].
    pub(crate) fn forward_cached(&self, obs: &[f64]) -> Result<(Vec<f64>, Option<MlpCache>)> {
        match &self.net {
            Some(net) => {
                let cache = net.forward(self.weights(), obs)?;
                Ok((cache.output().to_vec(), Some(cache)))
            }
            None => Ok((self.weights().to_vec(), None)),
        }
    }

    /// Adds the gradient of `g_mean · μ(s) + g_log_std · log σ` to `grad`.
    pub(crate) fn backward(&self, cache: Option<&MlpCache>, g_mean: &[f64], g_log_std: &[f64], grad: &mut [f64]) {
        let n = self.arch.n_weights();
        match (&self.net, cache) {
            (Some(net), Some(cache)) => net.backward(self.weights(), cache, g_mean, &mut grad[..n]),
            _ => {
                for (g, d) in grad[..n].iter_mut().zip(g_mean) {
                    *g += d;
                }
            }
        }
        for (g, d) in grad[n..].iter_mut().zip(g_log_std) {
            *g += d;
        }
    }

    /// Samples `a ~ N(μ(s), diag σ²)`.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.mean_action(obs)?;
        for (a, ls) in a.iter_mut().zip(self.log_std()) {
            let z: f64 = StandardNormal.sample(rng);
            *a += ls.exp() * z;
        }
        Ok(a)
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean_action(obs)?;
        Ok(gaussian_log_prob(&mean, self.log_std(), action))
    }
}

pub(crate) fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

impl Policy for PolicyParams {
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean_action(obs)
    }
}

const HEADER: &str = "spota-policy v1";

/// Text format: one header line naming the architecture, then one value per
/// line.
pub fn policy_to_string(p: &PolicyParams) -> String {
    let mut out = String::from(HEADER);
    match &p.arch {
        Architecture::Fnn {
            state_dim,
            action_dim,
            hidden,
        } => {
            let hidden: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
            write!(
                out,
                " fnn state_dim={state_dim} action_dim={action_dim} hidden={}",
                hidden.join(",")
            )
            .unwrap();
        }
        Architecture::Constant { action_dim } => {
            write!(out, " constant action_dim={action_dim}").unwrap();
        }
    }
    writeln!(out, " params={}", p.theta.len()).unwrap();
    for v in &p.theta {
        writeln!(out, "{v:e}").unwrap();
    }
    out
}

pub fn policy_from_str(text: &str) -> Result<PolicyParams> {
    let bad = |msg: &str| Error::PolicyFormat(msg.to_owned());
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty policy file"))?;
    let rest = header
        .strip_prefix(HEADER)
        .ok_or_else(|| bad("missing 'spota-policy v1' header"))?;
    let mut words = rest.split_whitespace();
    let kind = words.next().ok_or_else(|| bad("missing architecture"))?;
    let mut fields = std::collections::BTreeMap::new();
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| bad("header fields must be key=value"))?;
        fields.insert(k, v);
    }
    let num = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .ok_or_else(|| bad(&format!("missing header field {key}")))?
            .parse()
            .map_err(|_| bad(&format!("header field {key} is not a count")))
    };
    let arch = match kind {
        "fnn" => {
            let hidden = fields
                .get("hidden")
                .ok_or_else(|| bad("missing header field hidden"))?
                .split(',')
                .map(|h| h.parse().map_err(|_| bad("hidden sizes must be counts")))
                .collect::<Result<Vec<usize>>>()?;
            Architecture::Fnn {
                state_dim: num("state_dim")?,
                action_dim: num("action_dim")?,
                hidden,
            }
        }
        "constant" => Architecture::Constant {
            action_dim: num("action_dim")?,
        },
        other => return Err(bad(&format!("unknown architecture {other}"))),
    };
    let theta = lines
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|_| bad(&format!("bad parameter value {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if theta.len() != num("params")? {
        return Err(bad("parameter count does not match header"));
    }
    PolicyParams::new(arch, theta)
}
