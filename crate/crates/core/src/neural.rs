//! Fully connected networks with ReLU hidden layers and a linear output,
//! plus the analytic backward pass needed by the actor and critic losses.
//!
//! The actor applies a softmax to the output layer; the critic reads the
//! single output unit as `V(s)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

/// One affine layer. `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
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

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Dimension(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

/// Network parameters (θ for the actor, w for the critic).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Layer>,
}

/// Activations retained from a forward pass for use by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `inputs[l]` is the input vector of layer `l` (post-ReLU for l > 0).
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl ParamSet {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform `[-r, r]` weights with `r = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        for layer in &mut params.layers {
            let r = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-r..=r);
            }
        }
        Ok(params)
    }

    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.fill(0.0);
            last.biases.fill(0.0);
        }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("network without layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.inputs * layer.outputs
                || layer.biases.len() != layer.outputs
            {
                return Err(Error::Dimension(format!(
                    "layer {i} has inconsistent storage"
                )));
            }
            if i > 0 && layers[i - 1].outputs != layer.inputs {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs, previous layer has {} outputs",
                    layer.inputs,
                    layers[i - 1].outputs
                )));
            }
        }
        let params = Self { layers };
        if !params.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters in checkpoint order (per layer: weights then biases).
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.values().copied())
            .collect()
    }

    /// Mutable access to the `index`-th parameter in [`ParamSet::flat`] order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let n = layer.weights.len();
            if index < n {
                return &mut layer.weights[index];
            }
            index -= n;
            if index < layer.biases.len() {
                return &mut layer.biases[index];
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.values().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardPass> {
        if input.len() != self.input_len() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_len(),
                input.len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = layer.biases.clone();
            for (o, row) in layer.weights.chunks_exact(layer.inputs).enumerate() {
                out[o] += row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>();
            }
            if l < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            inputs.push(std::mem::replace(&mut current, out));
        }
        Ok(ForwardPass {
            inputs,
            output: current,
        })
    }

    /// Gradient of a scalar loss given `upstream = dLoss/d(output)`.
    pub fn backward(&self, pass: &ForwardPass, upstream: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(pass, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`ParamSet::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        pass: &ForwardPass,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if upstream.len() != self.output_len() || pass.inputs.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "upstream gradient has {} entries for {} outputs",
                upstream.len(),
                self.output_len()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Dimension("gradient/parameter shape mismatch".into()));
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &pass.inputs[l];
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through the weights, then through the ReLU that
            // produced `input` (its output is zero exactly where inactive).
            let mut next = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            for (n, &x) in next.iter_mut().zip(input) {
                if x <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
        Ok(())
    }

    /// `params += rate * grads`. Non-finite gradients are rejected and the
    /// parameters are left untouched.
    pub fn apply_update(&mut self, grads: &Gradients, rate: f64) -> Result<()> {
        if !self.same_shape(&grads.layers) {
            return Err(Error::Dimension("gradient/parameter shape mismatch".into()));
        }
        if !grads.is_finite() || !rate.is_finite() {
            return Err(Error::NonFinite("gradient update".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, d) in layer.values_mut().zip(g.values()) {
                *p += rate * d;
            }
        }
        Ok(())
    }

    fn same_shape(&self, other: &[Layer]) -> bool {
        self.layers.len() == other.len()
            && self
                .layers
                .iter()
                .zip(other)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.values().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.values().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|&v| v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.values())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for v in layer.values_mut() {
                *v *= factor;
            }
        }
    }

    /// Mutable access to the `index`-th entry in flat order. Mostly useful
    /// for building test fixtures.
    pub fn entry_mut(&mut self, index: usize) -> &mut f64 {
        let mut index = index;
        for layer in &mut self.layers {
            let n = layer.weights.len() + layer.biases.len();
            if index < n {
                return layer.values_mut().nth(index).expect("in range");
            }
            index -= n;
        }
        panic!("gradient index out of range");
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Action distribution `π_θ(·|s)` for flattened state features.
pub fn policy_forward(theta: &ParamSet, features: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(theta.forward(features)?.output()))
}

/// State value `V_w(s)`. The critic must have exactly one output.
pub fn critic_forward(w: &ParamSet, features: &[f64]) -> Result<f64> {
    if w.output_len() != 1 {
        return Err(Error::Dimension(format!(
            "critic must have one output, has {}",
            w.output_len()
        )));
    }
    Ok(w.forward(features)?.output()[0])
}

/// Parameter update rule. Implementations add `rate`-scaled steps to the
/// parameters; callers choose the sign of `rate` per loss.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet, grads: &Gradients, rate: f64) -> Result<()>;
}

/// Plain stochastic gradient steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet, grads: &Gradients, rate: f64) -> Result<()> {
        params.apply_update(grads, rate)
    }
}

pub const CHECKPOINT_HEADER: &str = "abr-vtrace-ckpt v1";

/// Actor and critic parameters as stored on disk.
///
/// Layout: the header line, then for each network a line
/// `<name> <layer sizes...>` followed by one line of weights (row-major)
/// and one line of biases per layer. Values are written with 17
/// significant digits, which round-trips every `f64` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub actor: ParamSet,
    pub critic: ParamSet,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        write_net(&mut out, "actor", &self.actor);
        write_net(&mut out, "critic", &self.critic);
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_HEADER => {}
            Some((n, l)) => {
                return Err(Error::Parse {
                    path: source.into(),
                    line: n + 1,
                    msg: format!("bad checkpoint header {l:?}"),
                })
            }
            None => {
                return Err(Error::Parse {
                    path: source.into(),
                    line: 1,
                    msg: "empty checkpoint".into(),
                })
            }
        }
        let actor = read_net(&mut lines, "actor", source)?;
        let critic = read_net(&mut lines, "critic", source)?;
        Ok(Self { actor, critic })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

fn write_net(out: &mut String, name: &str, params: &ParamSet) {
    out.push_str(name);
    for size in params.layer_sizes() {
        let _ = write!(out, " {size}");
    }
    out.push('\n');
    for layer in &params.layers {
        write_values(out, &layer.weights);
        write_values(out, &layer.biases);
    }
}

fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

fn read_net<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    name: &str,
    source: &str,
) -> Result<ParamSet> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.into(),
        line,
        msg,
    };
    let (n, header) = lines
        .next()
        .ok_or_else(|| err(0, format!("missing {name} section")))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(name) {
        return Err(err(n + 1, format!("expected {name} section")));
    }
    let sizes = fields
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| err(n + 1, format!("bad layer size: {e}")))?;
    check_sizes(&sizes).map_err(|e| err(n + 1, e.to_string()))?;
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let weights = read_values(lines, w[0] * w[1], source)?;
        let biases = read_values(lines, w[1], source)?;
        layers.push(Layer {
            inputs: w[0],
            outputs: w[1],
            weights,
            biases,
        });
    }
    ParamSet::from_layers(layers)
}

fn read_values<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    expected: usize,
    source: &str,
) -> Result<Vec<f64>> {
    let (n, line) = lines.next().ok_or_else(|| Error::Parse {
        path: source.into(),
        line: 0,
        msg: "truncated checkpoint".into(),
    })?;
    let values = line
        .split_whitespace()
        .map(str::parse::<f64>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse {
            path: source.into(),
            line: n + 1,
            msg: format!("bad parameter value: {e}"),
        })?;
    if values.len() != expected {
        return Err(Error::Parse {
            path: source.into(),
            line: n + 1,
            msg: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}
