//! End-to-end relevance computation.
//!
//! Two algorithms are provided:
//!
//! * [`relevance_train_free`] evaluates upstream relevance at the actual activations and
//!   redistributes each neuron's share with a root on the rule's search line. It is the
//!   practical LRP-style algorithm and agrees with the closed-form rules layer by layer.
//! * [`relevance_recursive`] follows the recursive Taylor definition literally. Relevance of
//!   layer `l` at input `a` is
//!
//!   `R^l(a)_i = Σ_j [∂/∂ã R^{l+1}_j(f_l(ã))]_i · (a − ã^{(j)})_i` with `ã = ã^{(j)}(a)`,
//!
//!   evaluated by reverse-mode differentiation through the whole nested expression, so roots
//!   that move with the input contribute their Jacobian.
//!
//! Root points are supplied by a [`RootPolicy`]. When a policy uses one root for every
//! neuron of a layer the computation collapses to a single gradient per layer; per-neuron
//! roots cost one nested evaluation per neuron and grow like `width^depth`.
//!
//! Inside root evaluations a ReLU unit whose pre-activation is within `1e-10` (relative) of
//! zero takes the activity it has at the explained input. Roots that hit a hinge exactly are
//! therefore differentiated from the explained input's side.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot_const, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::net::{Activation, ForwardTrace, Network, RegionFingerprint};
use crate::rules::{find_root_linear, find_root_train_free, linear_root_point, RootPoint, RuleKind, DEGENERATE_TOL};
use crate::vecops::{dot, min_max_normalize, sub};

/// Relative width of the band around a ReLU hinge treated as a tie.
pub const HINGE_TIE_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Recursive,
    TrainFree,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Recursive => "recursive",
            Algorithm::TrainFree => "train_free",
        })
    }
}

/// A root used while building a trace, with the region it lands in when known.
#[derive(Debug, Clone, PartialEq)]
pub struct RootRecord {
    pub root: RootPoint,
    /// Activation pattern of the root from its layer onward.
    pub fingerprint: Option<RegionFingerprint>,
    /// Whether that pattern equals the layer input's pattern.
    pub in_input_region: Option<bool>,
}

/// Per-layer relevance vectors `R^1 … R^{n+1}` for one explained logit.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTrace {
    pub algorithm: Algorithm,
    /// The rule, when the whole trace was produced by a single rule.
    pub rule: Option<RuleKind>,
    /// Human-readable description of the rule or root policy.
    pub label: String,
    pub class: usize,
    /// `relevances[l - 1]` is `R^l`.
    pub relevances: Vec<Vec<f64>>,
    pub roots: Vec<RootRecord>,
}

/// Input-layer relevance, optionally rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub values: Vec<f64>,
    /// Set when normalization was requested on a constant map; `values` is then all zeros.
    pub degenerate: bool,
}

impl RelevanceTrace {
    /// Network depth `n`.
    pub fn depth(&self) -> usize {
        self.relevances.len() - 1
    }

    /// `R^l` for `1 ≤ l ≤ n + 1`.
    pub fn relevance(&self, l: usize) -> &[f64] {
        &self.relevances[l - 1]
    }

    /// `Σ_k R^l_k` for every layer, from `l = 1`.
    pub fn totals(&self) -> Vec<f64> {
        self.relevances.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn saliency(&self, normalize: bool) -> Saliency {
        saliency(self, normalize)
    }

    /// JSON export: `{"algorithm", "rule", "class", "relevances", "roots": [{layer, neuron, point, t, residual}]}`.
    pub fn to_json_value(&self) -> serde_json::Value {
        let roots: Vec<_> = self
            .roots
            .iter()
            .map(|r| {
                serde_json::json!({
                    "layer": r.root.layer,
                    "neuron": r.root.neuron,
                    "point": r.root.point,
                    "t": r.root.step,
                    "residual": r.root.residual,
                })
            })
            .collect();
        serde_json::json!({
            "algorithm": self.algorithm.to_string(),
            "rule": self.label,
            "class": self.class,
            "relevances": self.relevances,
            "roots": roots,
        })
    }
}

/// Extracts `R^1`. A constant map cannot be min-max normalized; it yields zeros and sets
/// [`Saliency::degenerate`].
pub fn saliency(trace: &RelevanceTrace, normalize: bool) -> Saliency {
    let r1 = trace.relevance(1);
    if !normalize {
        return Saliency {
            values: r1.to_vec(),
            degenerate: false,
        };
    }
    match min_max_normalize(r1) {
        Some(values) => Saliency {
            values,
            degenerate: false,
        },
        None => Saliency {
            values: vec![0.0; r1.len()],
            degenerate: true,
        },
    }
}

fn one_hot_output(trace: &ForwardTrace, class: usize) -> Vec<f64> {
    let mut r = vec![0.0; trace.output().len()];
    r[class] = trace.output()[class];
    r
}

/// Train-free relevance with the default `lrp0` denominator tolerance.
pub fn relevance_train_free(net: &Network, x: &[f64], class: usize, rule: RuleKind) -> Result<RelevanceTrace> {
    relevance_train_free_with_tol(net, x, class, rule, DEGENERATE_TOL)
}

/// Train-free relevance: every upstream relevance is evaluated at the actual activations.
///
/// Hyperplane rules place each neuron's root at `x̃ = a − (R_j / w_j·v_j)·v_j` and assign
/// `w_j ⊙ (a − x̃)`. `lrp0` and `eps` root at the origin; the neuron's relevance is
/// distributed along its gradient scaled by `R_j / z_j`, which gives `a ⊙ w_j · R_j / z_j`.
/// Neurons with zero relevance or an orthogonal direction are skipped.
pub fn relevance_train_free_with_tol(
    net: &Network,
    x: &[f64],
    class: usize,
    rule: RuleKind,
    tol: f64,
) -> Result<RelevanceTrace> {
    net.check_class(class)?;
    let trace = net.forward(x)?;
    let n = net.depth();
    let mut relevances = vec![Vec::new(); n + 1];
    relevances[n] = one_hot_output(&trace, class);
    let mut roots = Vec::new();
    for l in (1..=n).rev() {
        let layer = net.layer(l);
        let a = trace.input(l);
        let mut out = vec![0.0; a.len()];
        for (j, w) in layer.rows().enumerate() {
            let rj = relevances[l][j];
            if rj == 0.0 {
                continue;
            }
            let b = layer.bias()[j];
            let root = if rule.is_hyperplane() {
                let root = match find_root_train_free(rule, w, b, a, rj) {
                    Ok(root) => root,
                    Err(Error::OrthogonalDirection { .. } | Error::ZeroRelevance) => continue,
                    Err(e) => return Err(e),
                };
                for ((o, wi), (ai, pi)) in out.iter_mut().zip(w).zip(a.iter().zip(&root.point)) {
                    *o += wi * (ai - pi);
                }
                root
            } else {
                let z = dot(w, a) + b;
                let denom = match rule {
                    RuleKind::Epsilon(eps) => z + eps * if z >= 0.0 { 1.0 } else { -1.0 },
                    _ if z.abs() < tol => return Err(Error::DegenerateDenominator { neuron: j, value: z }),
                    _ => z,
                };
                let c = rj / denom;
                for ((o, wi), ai) in out.iter_mut().zip(w).zip(a) {
                    *o += ai * wi * c;
                }
                RootPoint::along(w, b, a, a.to_vec(), 1.0)
            };
            roots.push(RootRecord {
                root: root.located(l, j),
                fingerprint: None,
                in_input_region: None,
            });
        }
        relevances[l - 1] = out;
    }
    Ok(RelevanceTrace {
        algorithm: Algorithm::TrainFree,
        rule: Some(rule),
        label: rule.to_string(),
        class,
        relevances,
        roots,
    })
}

/// `R^l` of the train-free trace, `1 ≤ l ≤ n + 1`.
pub fn relevance_at_layer(net: &Network, x: &[f64], class: usize, rule: RuleKind, l: usize) -> Result<Vec<f64>> {
    net.check_layer(l, 1, net.depth() + 1)?;
    let trace = relevance_train_free(net, x, class, rule)?;
    Ok(trace.relevance(l).to_vec())
}

/// Everything a custom root function may look at.
#[derive(Debug, Clone, Copy)]
pub struct RootRequest<'a> {
    pub net: &'a Network,
    pub layer: usize,
    pub neuron: usize,
    /// The layer input the root is sought for.
    pub input: &'a [f64],
}

pub type RootFn = dyn Fn(&RootRequest<'_>) -> Result<Vec<f64>> + Send + Sync;

/// How the recursive algorithm chooses root points.
#[derive(Clone)]
pub enum RootPolicy {
    /// The rule's root on every layer. Hyperplane rules get one root per neuron, moving with
    /// the layer input. `lrp0` and `eps` share the origin. Inactive ReLU neurons are skipped.
    RuleBased(RuleKind),
    /// `rules[l - 1]` on layer `l`.
    PerLayer(Vec<RuleKind>),
    /// One fixed root per activation region and layer, shared by all neurons.
    ConstantPerRegion(RegionRootTable),
    /// Per-neuron roots from a user function. Roots are treated as locally constant when
    /// differentiating.
    Custom(Arc<RootFn>),
}

impl fmt::Debug for RootPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RootPolicy::RuleBased(rule) => f.debug_tuple("RuleBased").field(rule).finish(),
            RootPolicy::PerLayer(rules) => f.debug_tuple("PerLayer").field(rules).finish(),
            RootPolicy::ConstantPerRegion(table) => f.debug_tuple("ConstantPerRegion").field(table).finish(),
            RootPolicy::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl RootPolicy {
    pub fn custom(f: impl Fn(&RootRequest<'_>) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        RootPolicy::Custom(Arc::new(f))
    }

    pub fn label(&self) -> String {
        match self {
            RootPolicy::RuleBased(rule) => rule.to_string(),
            RootPolicy::PerLayer(rules) => {
                let names: Vec<String> = rules.iter().map(ToString::to_string).collect();
                format!("per-layer:{}", names.join(","))
            }
            RootPolicy::ConstantPerRegion(_) => "constant-per-region".into(),
            RootPolicy::Custom(_) => "custom".into(),
        }
    }

    fn rule_at(&self, l: usize) -> Option<RuleKind> {
        match self {
            RootPolicy::RuleBased(rule) => Some(*rule),
            RootPolicy::PerLayer(rules) => rules.get(l - 1).copied(),
            _ => None,
        }
    }

    fn validate(&self, net: &Network) -> Result<()> {
        if let RootPolicy::PerLayer(rules) = self {
            if rules.len() != net.depth() {
                return Err(Error::InvalidArgument(format!(
                    "per-layer policy lists {} rules for a network of depth {}",
                    rules.len(),
                    net.depth()
                )));
            }
        }
        Ok(())
    }
}

/// Decides ReLU activity near hinges. Units within the tie band take the activity recorded in
/// `masks`, or count as active when no masks are given.
#[derive(Clone, Copy)]
pub(crate) struct TieBreak<'a> {
    net: &'a Network,
    first: usize,
    masks: Option<&'a [Vec<bool>]>,
}

impl<'a> TieBreak<'a> {
    pub fn reference(net: &'a Network, trace: &'a ForwardTrace) -> Self {
        TieBreak {
            net,
            first: trace.first_layer(),
            masks: Some(trace.masks()),
        }
    }

    pub fn from_fingerprint(net: &'a Network, fp: &'a RegionFingerprint) -> Self {
        TieBreak {
            net,
            first: fp.from_layer,
            masks: Some(&fp.patterns),
        }
    }

    /// Ties count as active.
    pub fn active_convention(net: &'a Network) -> Self {
        TieBreak {
            net,
            first: 1,
            masks: None,
        }
    }

    pub fn is_tie(&self, l: usize, j: usize, a: &[f64], z: f64) -> bool {
        z.abs() <= HINGE_TIE_REL * self.net.layer(l).magnitude(j, a)
    }

    fn resolve(&self, l: usize, j: usize, a: &[f64], z: f64) -> bool {
        if self.is_tie(l, j, a, z) {
            match self.masks {
                Some(masks) if l >= self.first => masks[l - self.first][j],
                _ => true,
            }
        } else {
            z >= 0.0
        }
    }

    /// Activity of unit `j` of layer `l` at layer input `a`. Non-ReLU units are always active.
    pub fn is_active(&self, l: usize, j: usize, a: &[f64]) -> bool {
        let layer = self.net.layer(l);
        if layer.activation() != Activation::Relu {
            return true;
        }
        let z = dot(layer.row(j), a) + layer.bias()[j];
        self.resolve(l, j, a, z)
    }

    pub fn forward_layer<S: Scalar>(&self, l: usize, a: &[S]) -> Vec<S> {
        let layer = self.net.layer(l);
        let values: Vec<f64> = a.iter().map(|v| v.value()).collect();
        layer
            .rows()
            .zip(layer.bias())
            .enumerate()
            .map(|(j, (w, &b))| {
                let z = dot_const(w, a) + a[0].lift(b);
                match layer.activation() {
                    Activation::Relu => {
                        if self.resolve(l, j, &values, z.value()) {
                            z
                        } else {
                            z.lift(0.0)
                        }
                    }
                    Activation::Softplus { beta } => z.softplus(beta),
                    Activation::Identity => z,
                }
            })
            .collect()
    }

    /// Masks of layers `l..=n` when the suffix is evaluated at `point`.
    pub fn fingerprint(&self, l: usize, point: &[f64]) -> RegionFingerprint {
        let mut a = point.to_vec();
        let mut patterns = Vec::with_capacity(self.net.depth() + 1 - l);
        for m in l..=self.net.depth() {
            patterns.push((0..self.net.layer(m).out_dim()).map(|j| self.is_active(m, j, &a)).collect());
            a = self.forward_layer(m, &a);
        }
        RegionFingerprint {
            from_layer: l,
            patterns,
        }
    }

    /// Suffix `f_n ∘ … ∘ f_l` at `point` and its gradient for `class`.
    pub fn suffix_value_and_gradient(&self, l: usize, point: &[f64], class: usize) -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let probe: Vec<Var<'_>> = point.iter().map(|&v| tape.leaf(v)).collect();
        let mut a = probe.clone();
        for m in l..=self.net.depth() {
            a = self.forward_layer(m, &a);
        }
        let out = a[class];
        let g = tape.grad(out, &probe);
        (out.value(), g.iter().map(|v| v.value()).collect())
    }
}

/// Fixed roots keyed by layer and activation region.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionRootTable {
    layers: BTreeMap<usize, HashMap<RegionFingerprint, Vec<f64>>>,
}

impl RegionRootTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `root` for inputs of layer `l` in region `fingerprint`. The root must lie in
    /// that region; units exactly on a hinge are accepted on either side.
    pub fn insert(&mut self, net: &Network, fingerprint: RegionFingerprint, root: Vec<f64>) -> Result<()> {
        let l = fingerprint.from_layer;
        net.check_layer(l, 1, net.depth())?;
        if fingerprint.patterns.len() != net.depth() + 1 - l {
            return Err(Error::InvalidArgument(format!(
                "fingerprint from layer {l} must cover {} layers",
                net.depth() + 1 - l
            )));
        }
        if root.len() != net.width(l) {
            return Err(Error::InputShape {
                expected: net.width(l),
                got: root.len(),
            });
        }
        if let Some(index) = root.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        let landed = TieBreak::from_fingerprint(net, &fingerprint).fingerprint(l, &root);
        if landed != fingerprint {
            return Err(Error::RootUnavailable {
                layer: l,
                reason: format!("root lies in region {landed}, not in the keyed region {fingerprint}"),
            });
        }
        self.layers.entry(l).or_default().insert(fingerprint, root);
        Ok(())
    }

    pub fn get(&self, fingerprint: &RegionFingerprint) -> Option<&[f64]> {
        self.layers
            .get(&fingerprint.from_layer)?
            .get(fingerprint)
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.layers.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Roots `roots[l - 1]` for every layer, keyed by the regions of `x`'s activations.
    pub fn for_input(net: &Network, x: &[f64], roots: &[Vec<f64>]) -> Result<Self> {
        if roots.len() != net.depth() {
            return Err(Error::InvalidArgument(format!(
                "expected {} roots (one per layer), got {}",
                net.depth(),
                roots.len()
            )));
        }
        let trace = net.forward(x)?;
        let mut table = Self::new();
        for (l, root) in (1..=net.depth()).zip(roots) {
            table.insert(net, trace.fingerprint(l)?, root.clone())?;
        }
        Ok(table)
    }

    /// The origin as root of every layer for the regions of `x`. Fails when the origin is
    /// not in those regions, e.g. for negative biases.
    pub fn origin_for_input(net: &Network, x: &[f64]) -> Result<Self> {
        let roots: Vec<Vec<f64>> = (1..=net.depth()).map(|l| vec![0.0; net.width(l)]).collect();
        Self::for_input(net, x, &roots)
    }
}

enum LayerRoots<S> {
    Shared { root: Vec<S>, neurons: Vec<usize> },
    PerNeuron(Vec<(usize, Vec<S>)>),
}

pub(crate) struct Recursive<'a> {
    net: &'a Network,
    class: usize,
    policy: &'a RootPolicy,
    ties: TieBreak<'a>,
    allow_degenerate: bool,
}

impl<'a> Recursive<'a> {
    pub fn new(
        net: &'a Network,
        class: usize,
        policy: &'a RootPolicy,
        reference: &'a ForwardTrace,
        allow_degenerate: bool,
    ) -> Result<Self> {
        net.check_class(class)?;
        policy.validate(net)?;
        Ok(Recursive {
            net,
            class,
            policy,
            ties: TieBreak::reference(net, reference),
            allow_degenerate,
        })
    }

    pub fn ties(&self) -> TieBreak<'a> {
        self.ties
    }

    /// Roots the policy assigns at layer `l` for input `a`. `top` marks the explained input
    /// itself, where a root equal to the input is rejected.
    fn layer_roots<S: Scalar>(&self, l: usize, a: &[S], top: bool) -> Result<LayerRoots<S>> {
        let values: Vec<f64> = a.iter().map(|v| v.value()).collect();
        let layer = self.net.layer(l);
        let lift = |root: &[f64]| root.iter().map(|&v| a[0].lift(v)).collect::<Vec<S>>();
        let degenerate = |root: &[f64]| top && !self.allow_degenerate && root == values.as_slice();
        match self.policy {
            RootPolicy::RuleBased(_) | RootPolicy::PerLayer(_) => {
                let rule = self.policy.rule_at(l).expect("validated policy");
                let active: Vec<usize> = (0..layer.out_dim())
                    .filter(|&j| self.ties.is_active(l, j, &values))
                    .collect();
                if !rule.is_hyperplane() {
                    return Ok(LayerRoots::Shared {
                        root: vec![a[0].lift(0.0); a.len()],
                        neurons: active,
                    });
                }
                let mut roots = Vec::with_capacity(active.len());
                for j in active {
                    match linear_root_point(rule, layer.row(j), layer.bias()[j], a) {
                        Ok(root) => roots.push((j, root)),
                        Err(Error::OrthogonalDirection { .. } | Error::ZeroRelevance) => {}
                        Err(e) => return Err(e),
                    }
                }
                Ok(LayerRoots::PerNeuron(roots))
            }
            RootPolicy::ConstantPerRegion(table) => {
                let fp = self.ties.fingerprint(l, &values);
                let root = table.get(&fp).ok_or_else(|| Error::RootUnavailable {
                    layer: l,
                    reason: format!("no root registered for region {fp}"),
                })?;
                if degenerate(root) {
                    return Err(Error::RootUnavailable {
                        layer: l,
                        reason: "root coincides with the layer input".into(),
                    });
                }
                Ok(LayerRoots::Shared {
                    root: lift(root),
                    neurons: (0..layer.out_dim()).collect(),
                })
            }
            RootPolicy::Custom(f) => {
                let mut roots = Vec::with_capacity(layer.out_dim());
                for j in 0..layer.out_dim() {
                    let root = f(&RootRequest {
                        net: self.net,
                        layer: l,
                        neuron: j,
                        input: &values,
                    })?;
                    if root.len() != a.len() {
                        return Err(Error::InputShape {
                            expected: a.len(),
                            got: root.len(),
                        });
                    }
                    if degenerate(&root) {
                        return Err(Error::RootUnavailable {
                            layer: l,
                            reason: format!("root of neuron {j} coincides with the layer input"),
                        });
                    }
                    roots.push((j, lift(&root)));
                }
                Ok(LayerRoots::PerNeuron(roots))
            }
        }
    }

    /// `(neuron, root)` pairs at layer `l` for a concrete input.
    pub fn roots_at(&self, l: usize, a: &[f64], top: bool) -> Result<Vec<(usize, Vec<f64>)>> {
        Ok(match self.layer_roots(l, a, top)? {
            LayerRoots::Shared { root, neurons } => neurons.into_iter().map(|j| (j, root.clone())).collect(),
            LayerRoots::PerNeuron(roots) => roots,
        })
    }

    /// `R^l(a)` recorded on `tape`. Roots are appended to `records` when given.
    fn relevance<'t>(
        &self,
        tape: &'t Tape,
        l: usize,
        a: &[Var<'t>],
        records: Option<&mut Vec<RootRecord>>,
    ) -> Result<Vec<Var<'t>>> {
        if l == self.net.depth() + 1 {
            return Ok(a
                .iter()
                .enumerate()
                .map(|(i, &v)| if i == self.class { v } else { tape.constant(0.0) })
                .collect());
        }
        let top = records.is_some();
        let mut out = vec![tape.constant(0.0); a.len()];
        let mut used: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut contribute = |neurons: &[usize], root: &[Var<'t>], out: &mut Vec<Var<'t>>| -> Result<()> {
            if neurons.is_empty() {
                return Ok(());
            }
            let probe: Vec<Var<'t>> = root.iter().map(|r| r.fresh()).collect();
            let image = self.ties.forward_layer(l, &probe);
            let upper = self.relevance(tape, l + 1, &image, None)?;
            let total = neurons.iter().map(|&j| upper[j]).reduce(|s, u| s + u).expect("non-empty");
            let g = tape.grad(total, &probe);
            for (o, ((gi, ai), ri)) in out.iter_mut().zip(g.iter().zip(a).zip(root)) {
                *o = *o + *gi * (*ai - *ri);
            }
            if top {
                let values: Vec<f64> = root.iter().map(|v| v.value()).collect();
                used.extend(neurons.iter().map(|&j| (j, values.clone())));
            }
            Ok(())
        };
        match self.layer_roots(l, a, top)? {
            LayerRoots::Shared { root, neurons } => contribute(&neurons, &root, &mut out)?,
            LayerRoots::PerNeuron(roots) => {
                for (j, root) in roots {
                    contribute(&[j], &root, &mut out)?;
                }
            }
        }
        if let Some(records) = records {
            let values: Vec<f64> = a.iter().map(|v| v.value()).collect();
            let input_fp = self.ties.fingerprint(l, &values);
            for (j, root) in used {
                records.push(self.record(l, j, &values, root, &input_fp));
            }
        }
        Ok(out)
    }

    fn record(&self, l: usize, j: usize, a: &[f64], root: Vec<f64>, input_fp: &RegionFingerprint) -> RootRecord {
        let layer = self.net.layer(l);
        let (w, b) = (layer.row(j), layer.bias()[j]);
        let from_rule = self
            .policy
            .rule_at(l)
            .filter(|rule| rule.is_hyperplane())
            .and_then(|rule| find_root_linear(rule, w, b, a).ok());
        let point = from_rule.unwrap_or_else(|| RootPoint {
            layer: l,
            neuron: j,
            residual: dot(w, &root) + b,
            direction: sub(a, &root),
            point: root,
            step: 1.0,
        });
        let fingerprint = self.ties.fingerprint(l, &point.point);
        RootRecord {
            in_input_region: Some(&fingerprint == input_fp),
            fingerprint: Some(fingerprint),
            root: point.located(l, j),
        }
    }

    /// Relevance of layer `l` at the concrete input `a`, recording the roots used.
    pub fn relevance_values(&self, l: usize, a: &[f64], records: &mut Vec<RootRecord>) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let a: Vec<Var<'_>> = a.iter().map(|&v| tape.constant(v)).collect();
        let r = self.relevance(&tape, l, &a, Some(records))?;
        Ok(r.iter().map(|v| v.value()).collect())
    }

    pub fn trace(&self, x: &[f64]) -> Result<RelevanceTrace> {
        let fwd = self.net.forward(x)?;
        let n = self.net.depth();
        let mut relevances = vec![Vec::new(); n + 1];
        relevances[n] = one_hot_output(&fwd, self.class);
        let mut roots = Vec::new();
        for l in (1..=n).rev() {
            relevances[l - 1] = self.relevance_values(l, fwd.input(l), &mut roots)?;
        }
        Ok(RelevanceTrace {
            algorithm: Algorithm::Recursive,
            rule: match self.policy {
                RootPolicy::RuleBased(rule) => Some(*rule),
                _ => None,
            },
            label: self.policy.label(),
            class: self.class,
            relevances,
            roots,
        })
    }
}

/// Recursive relevance following the Taylor definition, with roots from `policy`.
pub fn relevance_recursive(net: &Network, x: &[f64], class: usize, policy: &RootPolicy) -> Result<RelevanceTrace> {
    let reference = net.forward(x)?;
    Recursive::new(net, class, policy, &reference, false)?.trace(x)
}

/// Recursive relevance evaluated at `point`, with hinge ties and region lookups resolved as at
/// `reference`. A root equal to the evaluation point is allowed and contributes nothing.
pub(crate) fn relevance_recursive_at(
    net: &Network,
    point: &[f64],
    class: usize,
    policy: &RootPolicy,
    reference: &ForwardTrace,
) -> Result<RelevanceTrace> {
    Recursive::new(net, class, policy, reference, true)?.trace(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerSpec;
    use crate::rules::propagate_closed_form;
    use crate::vecops::max_abs_diff;

    fn relu(w: Vec<Vec<f64>>, b: Vec<f64>) -> LayerSpec {
        LayerSpec::new(w, b, Activation::Relu).unwrap()
    }

    fn identity_net() -> Network {
        Network::new(2, vec![relu(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0])]).unwrap()
    }

    fn small_net(bias: f64) -> Network {
        Network::new(
            3,
            vec![
                relu(
                    vec![vec![0.5, -0.3, 0.8], vec![-0.6, 0.9, 0.4], vec![0.7, 0.2, -0.5], vec![0.1, 0.6, 0.3]],
                    vec![bias, 0.5 * bias, bias, 0.0],
                ),
                relu(
                    vec![vec![0.4, -0.7, 0.9, 0.3], vec![0.8, 0.5, -0.2, 0.6]],
                    vec![0.25 * bias, bias],
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn output_relevance_is_one_hot() {
        let net = small_net(-0.1);
        let x = [1.0, 0.5, 0.8];
        let out = net.output(&x).unwrap();
        for rule in RuleKind::defaults() {
            let t = relevance_train_free(&net, &x, 1, rule).unwrap();
            assert_eq!(t.relevance(3), &[0.0, out[1]]);
        }
    }

    #[test]
    fn identity_net_conserves_onto_active_path() {
        let net = identity_net();
        for rule in [RuleKind::W2, RuleKind::ZPlus, RuleKind::Gamma(0.5)] {
            let tf = relevance_train_free(&net, &[5.0, 2.0], 0, rule).unwrap();
            assert!(max_abs_diff(tf.relevance(1), &[5.0, 0.0]) < 1e-12, "{rule}");
            let rec = relevance_recursive(&net, &[5.0, 2.0], 0, &RootPolicy::RuleBased(rule)).unwrap();
            assert!((rec.relevance(1).iter().sum::<f64>() - 5.0).abs() < 1e-12, "{rule}");
        }
    }

    #[test]
    fn train_free_matches_closed_form() {
        let net = small_net(-0.2);
        let x = [0.9, 0.4, 1.2];
        let fwd = net.forward(&x).unwrap();
        for rule in RuleKind::defaults() {
            let t = relevance_train_free(&net, &x, 0, rule).unwrap();
            for l in 1..=2 {
                let cf = propagate_closed_form(rule, net.layer(l), fwd.input(l), t.relevance(l + 1)).unwrap();
                assert!(max_abs_diff(&cf, t.relevance(l)) < 1e-12, "{rule} layer {l}");
            }
        }
    }

    #[test]
    fn lrp0_train_free_is_gradient_times_input() {
        let net = small_net(-0.3);
        let x = [0.9, 0.4, 1.2];
        let t = relevance_train_free(&net, &x, 0, RuleKind::Lrp0).unwrap();
        let g = net.gradient(&x, 0, 1).unwrap().gradient;
        let gxi: Vec<f64> = g.iter().zip(&x).map(|(a, b)| a * b).collect();
        assert!(max_abs_diff(t.relevance(1), &gxi) < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_relevance() {
        let net = small_net(0.0);
        for rule in RuleKind::defaults() {
            let t = relevance_train_free(&net, &[0.0; 3], 0, rule).unwrap();
            assert!(t.relevances.iter().flatten().all(|&r| r == 0.0), "{rule}");
        }
    }

    #[test]
    fn recursive_origin_policy_is_gradient_times_input_on_zero_bias_nets() {
        let net = small_net(0.0);
        let x = [0.9, 0.4, 1.2];
        let g = net.gradient(&x, 1, 1).unwrap().gradient;
        let gxi: Vec<f64> = g.iter().zip(&x).map(|(a, b)| a * b).collect();
        let table = RegionRootTable::origin_for_input(&net, &x).unwrap();
        for policy in [RootPolicy::ConstantPerRegion(table), RootPolicy::RuleBased(RuleKind::Lrp0)] {
            let t = relevance_recursive(&net, &x, 1, &policy).unwrap();
            assert!(max_abs_diff(t.relevance(1), &gxi) < 1e-12, "{policy:?}");
        }
    }

    #[test]
    fn origin_table_fails_for_negative_bias() {
        let net = Network::new(1, vec![relu(vec![vec![1.0]], vec![-1.0])]).unwrap();
        let err = RegionRootTable::origin_for_input(&net, &[2.0]).unwrap_err();
        assert!(matches!(err, Error::RootUnavailable { layer: 1, .. }));
    }

    #[test]
    fn one_layer_recursive_matches_train_free() {
        let net = Network::new(3, vec![small_net(0.0).layer(1).clone()]).unwrap();
        let x = [0.9, 0.4, 1.2];
        for class in 0..4 {
            for rule in [RuleKind::W2, RuleKind::ZPlus, RuleKind::Gamma(1.5), RuleKind::Lrp0] {
                let rec = relevance_recursive(&net, &x, class, &RootPolicy::RuleBased(rule)).unwrap();
                let tf = relevance_train_free(&net, &x, class, rule).unwrap();
                assert!(max_abs_diff(rec.relevance(1), tf.relevance(1)) < 1e-12, "{rule} class {class}");
            }
        }
    }

    #[test]
    fn sum_pooled_layer_matches_closed_form() {
        let hidden = small_net(-0.2).layer(1).clone();
        let pool = LayerSpec::new(vec![vec![1.0; 4]], vec![0.0], Activation::Relu).unwrap();
        let net = Network::new(3, vec![hidden.clone(), pool]).unwrap();
        let x = [0.9, 0.4, 1.2];
        let fwd = net.forward(&x).unwrap();
        let policy = RootPolicy::PerLayer(vec![RuleKind::W2, RuleKind::ZPlus]);
        let rec = relevance_recursive(&net, &x, 0, &policy).unwrap();
        // the pooling layer passes a_2 through, so layer 1 sees R^2 = a_2
        assert!(max_abs_diff(rec.relevance(2), fwd.input(2)) < 1e-12);
        let cf = propagate_closed_form(RuleKind::W2, &hidden, &x, fwd.input(2)).unwrap();
        assert!(max_abs_diff(rec.relevance(1), &cf) < 1e-10);
    }

    #[test]
    fn recursive_records_roots_with_regions() {
        let net = small_net(-0.1);
        let x = [0.9, 0.4, 1.2];
        let t = relevance_recursive(&net, &x, 0, &RootPolicy::RuleBased(RuleKind::ZPlus)).unwrap();
        assert!(!t.roots.is_empty());
        for r in &t.roots {
            assert!(r.fingerprint.is_some());
            assert!(r.root.residual.abs() < 1e-9);
        }
    }

    #[test]
    fn custom_root_equal_to_input_is_rejected() {
        let net = small_net(-0.1);
        let policy = RootPolicy::custom(|req| Ok(req.input.to_vec()));
        let err = relevance_recursive(&net, &[0.9, 0.4, 1.2], 0, &policy).unwrap_err();
        assert!(matches!(err, Error::RootUnavailable { .. }));
    }

    #[test]
    fn saliency_normalization() {
        let mut t = relevance_train_free(&identity_net(), &[5.0, 2.0], 0, RuleKind::ZPlus).unwrap();
        t.relevances[0] = vec![2.0, -2.0];
        assert_eq!(saliency(&t, true), Saliency { values: vec![1.0, 0.0], degenerate: false });
        assert_eq!(saliency(&t, false).values, vec![2.0, -2.0]);
        t.relevances[0] = vec![3.0, 3.0];
        assert_eq!(saliency(&t, true), Saliency { values: vec![0.0, 0.0], degenerate: true });
    }

    #[test]
    fn relevance_at_layer_bounds() {
        let net = small_net(-0.1);
        let x = [0.9, 0.4, 1.2];
        let top = relevance_at_layer(&net, &x, 0, RuleKind::ZPlus, 3).unwrap();
        assert_eq!(top, vec![net.output(&x).unwrap()[0], 0.0]);
        assert!(matches!(
            relevance_at_layer(&net, &x, 0, RuleKind::ZPlus, 4),
            Err(Error::LayerIndex { .. })
        ));
    }

    #[test]
    fn trace_json_shape() {
        let t = relevance_train_free(&identity_net(), &[5.0, 2.0], 0, RuleKind::ZPlus).unwrap();
        let v = t.to_json_value();
        assert_eq!(v["algorithm"], "train_free");
        assert_eq!(v["rule"], "zplus");
        assert_eq!(v["class"], 0);
        assert_eq!(v["relevances"][0], serde_json::json!([5.0, 0.0]));
        let root = &v["roots"][0];
        for key in ["layer", "neuron", "point", "t", "residual"] {
            assert!(root.get(key).is_some(), "{key}");
        }
    }
}
