//! Dense feed-forward networks.
//!
//! A [`Network`] is an ordered stack of affine layers `z_l = W_l a_l + b_l`, each followed by an
//! elementwise activation, so that `a_{l+1} = act(z_l)`. Layers are indexed from 1 as in
//! `f = f_n ∘ … ∘ f_1`; `a_1` is the network input and `a_{n+1}` its output.
//!
//! The ReLU hinge `z = 0` counts as active everywhere in this module: masks, fingerprints and
//! gradients all take the derivative from the `z > 0` side.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::dot;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Inputs with any ReLU pre-activation closer than this to zero are rejected for
/// finite-difference checks.
pub const FD_HINGE_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// `softplus_β(z) = ln(1 + exp(β z)) / β`
    Softplus { beta: f64 },
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z >= 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Softplus { beta } => softplus(beta, z),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus { beta } => sigmoid(beta * z),
            Activation::Identity => 1.0,
        }
    }

    /// Mask entry for a unit. Only ReLU units can be inactive.
    pub fn is_active(self, z: f64) -> bool {
        match self {
            Activation::Relu => z >= 0.0,
            _ => true,
        }
    }

    pub fn is_piecewise_linear(self) -> bool {
        !matches!(self, Activation::Softplus { .. })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softplus { .. } => "softplus",
            Activation::Identity => "identity",
        }
    }
}

pub(crate) fn softplus(beta: f64, z: f64) -> f64 {
    let bz = beta * z;
    (bz.max(0.0) + (-bz.abs()).exp().ln_1p()) / beta
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine layer plus activation. Weights are stored row-major, shape `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    weights: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    activation: Activation,
}

impl LayerSpec {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let out_dim = weights.len();
        let in_dim = weights.first().map_or(0, Vec::len);
        if let Some((j, row)) = weights.iter().enumerate().find(|(_, r)| r.len() != in_dim) {
            return Err(Error::InvalidNetwork(format!(
                "weight row {j} has {} entries, expected {in_dim}",
                row.len()
            )));
        }
        Self::from_row_major(out_dim, in_dim, weights.concat(), bias, activation)
    }

    pub fn from_row_major(
        out_dim: usize,
        in_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::InvalidNetwork("layer dimensions must be positive".into()));
        }
        if weights.len() != out_dim * in_dim {
            return Err(Error::InvalidNetwork(format!(
                "weight buffer has {} entries, expected {out_dim}x{in_dim}",
                weights.len()
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::InvalidNetwork(format!(
                "bias has length {}, but weights have {out_dim} rows",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("weights and biases must be finite".into()));
        }
        if let Activation::Softplus { beta } = activation {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidNetwork(format!("softplus beta must be > 0, got {beta}")));
            }
        }
        Ok(Self {
            weights,
            bias,
            in_dim,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Row `j` of the weight matrix, i.e. the incoming weights `w_j` of unit `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.in_dim)
    }

    pub fn weights_row_major(&self) -> &[f64] {
        &self.weights
    }

    pub fn pre_activation(&self, a: &[f64]) -> Vec<f64> {
        self.rows().zip(&self.bias).map(|(w, b)| dot(w, a) + b).collect()
    }

    /// Scale used to decide whether a pre-activation is numerically on the hinge:
    /// `1 + Σ|w_i a_i| + |b|`.
    pub(crate) fn magnitude(&self, j: usize, a: &[f64]) -> f64 {
        1.0 + self.row(j).iter().zip(a).map(|(w, x)| (w * x).abs()).sum::<f64>() + self.bias[j].abs()
    }
}

/// Caps on network size. The tool materializes Jacobians densely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkLimits {
    pub max_width: usize,
    pub max_depth: usize,
}

impl Default for NetworkLimits {
    fn default() -> Self {
        Self {
            max_width: 512,
            max_depth: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct Network {
    input_dim: usize,
    layers: Vec<LayerSpec>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        Self::with_limits(input_dim, layers, NetworkLimits::default())
    }

    pub fn with_limits(input_dim: usize, layers: Vec<LayerSpec>, limits: NetworkLimits) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidNetwork("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("a network needs at least one layer".into()));
        }
        if layers.len() > limits.max_depth {
            return Err(Error::InvalidNetwork(format!(
                "depth {} exceeds the configured maximum {}",
                layers.len(),
                limits.max_depth
            )));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != width {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} expects {} inputs but receives {width}",
                    i + 1,
                    layer.in_dim()
                )));
            }
            width = layer.out_dim();
        }
        let widest = layers.iter().map(LayerSpec::out_dim).chain([input_dim]).max().unwrap_or(0);
        if widest > limits.max_width {
            return Err(Error::InvalidNetwork(format!(
                "width {widest} exceeds the configured maximum {}",
                limits.max_width
            )));
        }
        Ok(Self { input_dim, layers })
    }

    /// Number of layers `n`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::out_dim)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.layers[l - 1]
    }

    /// Widths `d_1, …, d_{n+1}`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(LayerSpec::out_dim))
            .collect()
    }

    /// Width `d_l` of the input to layer `l` (`l = n + 1` gives the output width).
    pub fn width(&self, l: usize) -> usize {
        if l == 1 {
            self.input_dim
        } else {
            self.layers[l - 2].out_dim()
        }
    }

    pub fn is_piecewise_linear(&self) -> bool {
        self.layers.iter().all(|l| l.activation().is_piecewise_linear())
    }

    /// Copy of the network with layer `l` (1-based) swapped out.
    pub fn with_layer(&self, l: usize, layer: LayerSpec) -> Result<Self> {
        self.check_layer(l, 1, self.depth())?;
        let mut layers = self.layers.clone();
        layers[l - 1] = layer;
        Self::new(self.input_dim, layers)
    }

    pub(crate) fn check_layer(&self, l: usize, min: usize, max: usize) -> Result<()> {
        if l < min || l > max {
            return Err(Error::LayerIndex { layer: l, min, max });
        }
        Ok(())
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.output_dim() {
            return Err(Error::ClassIndex {
                class,
                outputs: self.output_dim(),
            });
        }
        Ok(())
    }

    fn check_input(&self, l: usize, a: &[f64]) -> Result<()> {
        let expected = self.width(l);
        if a.len() != expected {
            return Err(Error::InputShape {
                expected,
                got: a.len(),
            });
        }
        if let Some(index) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.forward_from(1, x)
    }

    /// Runs layers `l..=n` on `a`, the input to layer `l`.
    pub fn forward_from(&self, l: usize, a: &[f64]) -> Result<ForwardTrace> {
        self.check_layer(l, 1, self.depth())?;
        self.check_input(l, a)?;
        let mut inputs = vec![a.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.depth() + 1 - l);
        let mut masks = Vec::with_capacity(self.depth() + 1 - l);
        let relu_layers = self.layers[l - 1..]
            .iter()
            .map(|layer| layer.activation() == Activation::Relu)
            .collect();
        for layer in &self.layers[l - 1..] {
            let z = layer.pre_activation(inputs.last().expect("non-empty"));
            let act = layer.activation();
            masks.push(z.iter().map(|&v| act.is_active(v)).collect());
            inputs.push(z.iter().map(|&v| act.apply(v)).collect());
            pre_activations.push(z);
        }
        Ok(ForwardTrace {
            first_layer: l,
            inputs,
            pre_activations,
            masks,
            relu_layers,
        })
    }

    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output().to_vec())
    }

    /// Exact gradient of `f_ξ` with respect to `a_l`, the input of layer `l` (`1 ≤ l ≤ n + 1`).
    pub fn gradient(&self, x: &[f64], class: usize, wrt_layer: usize) -> Result<GradientResult> {
        self.check_class(class)?;
        self.check_layer(wrt_layer, 1, self.depth() + 1)?;
        let trace = self.forward(x)?;
        Ok(self.backprop(&trace, class, wrt_layer))
    }

    /// Gradient of `(f_n ∘ … ∘ f_l)_ξ` at `a`, treated as the input of layer `l`.
    pub fn suffix_gradient(&self, l: usize, a: &[f64], class: usize) -> Result<GradientResult> {
        self.check_class(class)?;
        let trace = self.forward_from(l, a)?;
        Ok(self.backprop(&trace, class, l))
    }

    pub(crate) fn backprop(&self, trace: &ForwardTrace, class: usize, wrt_layer: usize) -> GradientResult {
        let n = self.depth();
        let mut grad = vec![0.0; self.output_dim()];
        grad[class] = 1.0;
        for l in (wrt_layer.max(trace.first_layer)..=n).rev() {
            let layer = self.layer(l);
            let act = layer.activation();
            let dz: Vec<f64> = grad
                .iter()
                .zip(trace.pre_activation(l))
                .map(|(g, &z)| g * act.derivative(z))
                .collect();
            let mut next = vec![0.0; layer.in_dim()];
            for (w, d) in layer.rows().zip(&dz) {
                if *d != 0.0 {
                    for (acc, wi) in next.iter_mut().zip(w) {
                        *acc += d * wi;
                    }
                }
            }
            grad = next;
        }
        GradientResult {
            value: trace.output()[class],
            gradient: grad,
            class,
            wrt_layer,
        }
    }

    /// Central-difference estimate of `∇f_ξ(x)`. Unreliable within `step` of a ReLU hinge;
    /// see [`Network::check_fd_admissible`].
    pub fn finite_difference_gradient(&self, x: &[f64], class: usize, step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
        }
        self.check_class(class)?;
        self.check_input(1, x)?;
        let mut probe = x.to_vec();
        let mut grad = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            probe[i] = x[i] + step;
            let plus = self.forward(&probe)?.output()[class];
            probe[i] = x[i] - step;
            let minus = self.forward(&probe)?.output()[class];
            probe[i] = x[i];
            grad.push((plus - minus) / (2.0 * step));
        }
        Ok(grad)
    }

    /// Rejects inputs that sit within [`FD_HINGE_GUARD`] of a ReLU hinge.
    pub fn check_fd_admissible(&self, x: &[f64]) -> Result<()> {
        let margin = self.forward(x)?.min_relu_margin();
        if margin < FD_HINGE_GUARD {
            return Err(Error::BoundaryProximity { margin });
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n")?;
        Ok(())
    }
}

/// Layer inputs `a_l`, pre-activations `z_l` and masks `m_l` for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    first_layer: usize,
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    relu_layers: Vec<bool>,
}

impl ForwardTrace {
    /// First layer that was evaluated (1 for a full forward pass).
    pub fn first_layer(&self) -> usize {
        self.first_layer
    }

    /// Index `n` of the last layer.
    pub fn last_layer(&self) -> usize {
        self.first_layer + self.pre_activations.len() - 1
    }

    /// `a_l` for `first_layer ≤ l ≤ n + 1`.
    pub fn input(&self, l: usize) -> &[f64] {
        &self.inputs[l - self.first_layer]
    }

    pub fn pre_activation(&self, l: usize) -> &[f64] {
        &self.pre_activations[l - self.first_layer]
    }

    pub fn mask(&self, l: usize) -> &[bool] {
        &self.masks[l - self.first_layer]
    }

    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("trace has an output")
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// Activation pattern of layers `from_layer..=n`.
    pub fn fingerprint(&self, from_layer: usize) -> Result<RegionFingerprint> {
        if from_layer < self.first_layer || from_layer > self.last_layer() {
            return Err(Error::LayerIndex {
                layer: from_layer,
                min: self.first_layer,
                max: self.last_layer(),
            });
        }
        Ok(RegionFingerprint {
            from_layer,
            patterns: self.masks[from_layer - self.first_layer..].to_vec(),
        })
    }

    /// Smallest `|z|` over all ReLU units whose activity could flip. Infinite if the trace
    /// has no such unit.
    pub(crate) fn min_relu_margin(&self) -> f64 {
        self.pre_activations
            .iter()
            .zip(&self.relu_layers)
            .filter(|(_, &relu)| relu)
            .flat_map(|(z, _)| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }
}

/// Concatenated binary activation pattern from a chosen layer onward. Equal fingerprints
/// imply the same affine piece of the network suffix, hence equal gradients.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionFingerprint {
    pub from_layer: usize,
    pub patterns: Vec<Vec<bool>>,
}

impl RegionFingerprint {
    /// The fingerprint of a shorter suffix starting at layer `m ≥ from_layer`.
    pub fn suffix(&self, m: usize) -> Option<RegionFingerprint> {
        let skip = m.checked_sub(self.from_layer)?;
        (skip < self.patterns.len()).then(|| RegionFingerprint {
            from_layer: m,
            patterns: self.patterns[skip..].to_vec(),
        })
    }

    /// 64-bit FNV-1a hash over the pattern bits; stable across platforms and releases.
    pub fn stable_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |byte: u8| {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in (self.from_layer as u64).to_le_bytes() {
            feed(b);
        }
        for pattern in &self.patterns {
            for &bit in pattern {
                feed(u8::from(bit));
            }
            feed(0xff);
        }
        h
    }
}

impl fmt::Display for RegionFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, pattern) in self.patterns.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            for &bit in pattern {
                f.write_str(if bit { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    /// `f_ξ` at the evaluation point.
    pub value: f64,
    /// Gradient with respect to the input of layer `wrt_layer`.
    pub gradient: Vec<f64>,
    pub class: usize,
    pub wrt_layer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ActivationName {
    Relu,
    Softplus,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: ActivationName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
}

/// On-disk network schema:
/// `{"input_dim": int, "layers": [{"weights": [[f64]], "bias": [f64], "activation": "relu"|"softplus"|"identity", "beta": f64?}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                let activation = match (l.activation, l.beta) {
                    (ActivationName::Relu, None) => Activation::Relu,
                    (ActivationName::Identity, None) => Activation::Identity,
                    (ActivationName::Softplus, beta) => Activation::Softplus {
                        beta: beta.unwrap_or(1.0),
                    },
                    (name, Some(_)) => {
                        return Err(Error::InvalidNetwork(format!("`beta` is only valid for softplus, not {name:?}")))
                    }
                };
                LayerSpec::new(l.weights, l.bias, activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(file.input_dim, layers)
    }
}

impl From<Network> for NetworkFile {
    fn from(net: Network) -> Self {
        NetworkFile {
            input_dim: net.input_dim,
            layers: net
                .layers
                .iter()
                .map(|l| {
                    let (activation, beta) = match l.activation {
                        Activation::Relu => (ActivationName::Relu, None),
                        Activation::Identity => (ActivationName::Identity, None),
                        Activation::Softplus { beta } => (ActivationName::Softplus, Some(beta)),
                    };
                    LayerFile {
                        weights: l.rows().map(<[f64]>::to_vec).collect(),
                        bias: l.bias.clone(),
                        activation,
                        beta,
                    }
                })
                .collect(),
        }
    }
}
