//! Audits of the assumptions behind Deep Taylor Decomposition.
//!
//! Region checks compare a root against the layer input it explains. The remaining functions
//! verify the Taylor identities numerically, construct roots that produce arbitrary
//! attributions, and measure how similar saliency maps of different classes are.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{relevance_recursive, relevance_recursive_at, relevance_train_free, Recursive, RootPolicy, TieBreak};
use crate::error::{Error, Result};
use crate::experiment::{generate_network_with, sample_inputs_seeded, sample_uniform_inputs, BiasMode};
use crate::net::{Activation, LayerSpec, Network, RegionFingerprint};
use crate::rules::{find_root_train_free, RootPoint, RuleKind};
use crate::vecops::{cosine, dot, max_abs, max_abs_diff, mean_abs_diff, median, min_max_normalize, sub};

/// Tolerances for deciding "same region" and "same output".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct RegionTolerances {
    /// L∞ gap between gradients.
    pub gradient: f64,
    /// Absolute gap between `f_ξ` values.
    pub output: f64,
}

impl Default for RegionTolerances {
    fn default() -> Self {
        Self {
            gradient: 1e-6,
            output: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionCheckResult {
    pub same_gradient: bool,
    pub gradient_gap: f64,
    pub same_fingerprint: bool,
    pub same_output: bool,
    pub output_gap: f64,
    pub input_fingerprint: RegionFingerprint,
    pub root_fingerprint: RegionFingerprint,
}

/// Compares the suffix `f_n ∘ … ∘ f_l` at the layer input `a_l` of `x` and at the root, where
/// `l = root.layer`. Units within the hinge tie band count as active.
pub fn check_root_region(net: &Network, x: &[f64], class: usize, root: &RootPoint) -> Result<RegionCheckResult> {
    check_root_region_with(net, x, class, root, RegionTolerances::default())
}

pub fn check_root_region_with(
    net: &Network,
    x: &[f64],
    class: usize,
    root: &RootPoint,
    tol: RegionTolerances,
) -> Result<RegionCheckResult> {
    net.check_class(class)?;
    let l = root.layer;
    net.check_layer(l, 1, net.depth())?;
    let trace = net.forward(x)?;
    let a = trace.input(l);
    if root.point.len() != a.len() {
        return Err(Error::InputShape {
            expected: a.len(),
            got: root.point.len(),
        });
    }
    Ok(compare_points(net, l, a, &root.point, class, tol))
}

fn compare_points(net: &Network, l: usize, a: &[f64], point: &[f64], class: usize, tol: RegionTolerances) -> RegionCheckResult {
    let ties = TieBreak::active_convention(net);
    let (fa, ga) = ties.suffix_value_and_gradient(l, a, class);
    let (fr, gr) = ties.suffix_value_and_gradient(l, point, class);
    let gradient_gap = max_abs_diff(&ga, &gr);
    let output_gap = (fa - fr).abs();
    let input_fingerprint = ties.fingerprint(l, a);
    let root_fingerprint = ties.fingerprint(l, point);
    RegionCheckResult {
        same_gradient: gradient_gap <= tol.gradient,
        gradient_gap,
        same_fingerprint: input_fingerprint == root_fingerprint,
        same_output: output_gap <= tol.output,
        output_gap,
        input_fingerprint,
        root_fingerprint,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Options {
    pub samples: usize,
    pub min_output: f64,
    pub seed: u64,
    pub class: usize,
    pub tolerances: RegionTolerances,
}

impl Default for Table1Options {
    fn default() -> Self {
        Self {
            samples: 1000,
            min_output: 0.1,
            seed: 0,
            class: 0,
            tolerances: RegionTolerances::default(),
        }
    }
}

/// Region statistics of the train-free roots of one rule.
///
/// The headline fractions are shares of roots, one root per (input, layer, neuron) with
/// nonzero relevance. The `input_*` fractions count an input as in-region when all of its roots
/// are, and as output-preserving when at least one root reproduces `f_ξ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Report {
    pub rule: RuleKind,
    pub samples: usize,
    pub roots: usize,
    pub frac_same_region: f64,
    pub frac_same_output: f64,
    pub frac_same_fingerprint: f64,
    pub input_frac_same_region: f64,
    pub input_frac_same_output: f64,
    pub input_frac_same_fingerprint: f64,
    /// Roots with the input's activation pattern whose images left the region of a shorter
    /// suffix.
    pub nesting_violations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    roots: usize,
    same_region: usize,
    same_output: usize,
    same_fingerprint: usize,
    nesting_violations: usize,
}

impl Counts {
    fn all_region(&self) -> bool {
        self.same_region == self.roots
    }

    fn all_fingerprint(&self) -> bool {
        self.same_fingerprint == self.roots
    }

    fn any_output(&self) -> bool {
        self.same_output > 0
    }
}

/// Samples inputs with `f_ξ(x) > min_output` and checks every train-free root of each rule.
pub fn run_table1(net: &Network, rules: &[RuleKind], opts: &Table1Options) -> Result<Vec<Table1Report>> {
    if opts.samples == 0 {
        return Err(Error::InvalidArgument("table1 needs at least one sample".into()));
    }
    if rules.is_empty() {
        return Err(Error::InvalidArgument("table1 needs at least one rule".into()));
    }
    net.check_class(opts.class)?;
    let inputs = sample_inputs_seeded(net, opts.samples, opts.min_output, opts.class, opts.seed)?;
    rules
        .iter()
        .map(|&rule| {
            let per_input: Vec<Counts> = inputs
                .par_iter()
                .map(|x| table1_counts(net, x, rule, opts))
                .collect::<Result<_>>()?;
            let share = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
            let n = per_input.len();
            let count = |f: fn(&Counts) -> bool| per_input.iter().filter(|c| f(c)).count();
            let sum = |f: fn(&Counts) -> usize| per_input.iter().map(f).sum::<usize>();
            let roots = sum(|c| c.roots);
            Ok(Table1Report {
                rule,
                samples: n,
                roots,
                frac_same_region: share(sum(|c| c.same_region), roots),
                frac_same_output: share(sum(|c| c.same_output), roots),
                frac_same_fingerprint: share(sum(|c| c.same_fingerprint), roots),
                input_frac_same_region: share(count(Counts::all_region), n),
                input_frac_same_output: share(count(Counts::any_output), n),
                input_frac_same_fingerprint: share(count(Counts::all_fingerprint), n),
                nesting_violations: sum(|c| c.nesting_violations),
                seed: opts.seed,
            })
        })
        .collect()
}

fn table1_counts(net: &Network, x: &[f64], rule: RuleKind, opts: &Table1Options) -> Result<Counts> {
    let trace = net.forward(x)?;
    let relevance = relevance_train_free(net, x, opts.class, rule)?;
    let ties = TieBreak::active_convention(net);
    let mut c = Counts::default();
    for l in 1..=net.depth() {
        let layer = net.layer(l);
        let a = trace.input(l);
        for (j, w) in layer.rows().enumerate() {
            let rj = relevance.relevance(l + 1)[j];
            let root = match find_root_train_free(rule, w, layer.bias()[j], a, rj) {
                Ok(root) => root,
                Err(Error::OrthogonalDirection { .. } | Error::ZeroRelevance) => continue,
                Err(e) => return Err(e),
            };
            let check = compare_points(net, l, a, &root.point, opts.class, opts.tolerances);
            c.roots += 1;
            c.same_region += usize::from(check.same_gradient);
            c.same_output += usize::from(check.same_output);
            if check.same_fingerprint {
                c.same_fingerprint += 1;
                // nesting: the root's image must stay in every shorter suffix's region
                let mut image = root.point.clone();
                for m in l + 1..=net.depth() {
                    image = ties.forward_layer(m - 1, &image);
                    let (_, g_root) = ties.suffix_value_and_gradient(m, &image, opts.class);
                    let (_, g_input) = ties.suffix_value_and_gradient(m, trace.input(m), opts.class);
                    if max_abs_diff(&g_root, &g_input) > 1e-12 || ties.fingerprint(m, &image) != ties.fingerprint(m, trace.input(m)) {
                        c.nesting_violations += 1;
                        break;
                    }
                }
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop2Report {
    /// L∞ gap between `R(x)` and `R(x̃) + ∇f_ξ(x) ⊙ (x − x̃)`.
    pub max_error: f64,
    pub root: Vec<f64>,
    pub relevance: Vec<f64>,
}

/// Checks `R(x) = R(x̃) + ∇f_ξ(x) ⊙ (x − x̃)` for a policy with locally constant roots, where
/// `x̃` is the policy's first-layer root.
pub fn verify_prop2(net: &Network, x: &[f64], class: usize, policy: &RootPolicy) -> Result<Prop2Report> {
    let RootPolicy::ConstantPerRegion(table) = policy else {
        return Err(Error::InvalidArgument("the first-order identity needs a constant-per-region policy".into()));
    };
    net.check_class(class)?;
    let reference = net.forward(x)?;
    let fp = reference.fingerprint(1)?;
    let root = table.get(&fp).ok_or_else(|| Error::RootUnavailable {
        layer: 1,
        reason: format!("no root registered for the input's region {fp}"),
    })?;
    if root == x {
        return Err(Error::RootUnavailable {
            layer: 1,
            reason: "root coincides with the input".into(),
        });
    }
    let at_x = relevance_recursive(net, x, class, policy)?;
    let at_root = relevance_recursive_at(net, root, class, policy, &reference)?;
    let grad = net.gradient(x, class, 1)?.gradient;
    let predicted: Vec<f64> = at_root
        .relevance(1)
        .iter()
        .zip(&grad)
        .zip(x.iter().zip(root))
        .map(|((r, g), (xi, ri))| r + g * (xi - ri))
        .collect();
    Ok(Prop2Report {
        max_error: max_abs_diff(at_x.relevance(1), &predicted),
        root: root.to_vec(),
        relevance: at_x.relevance(1).to_vec(),
    })
}

/// Step for finite differences of root functions.
pub const ROOT_FD_STEP: f64 = 1e-5;
/// Minimum distance of every pre-activation from its hinge during root-Jacobian checks.
pub const BOUNDARY_GUARD: f64 = 1e-4;
const EXACT_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop3Report {
    pub max_error: f64,
    pub direct: Vec<f64>,
    pub assembled: Vec<f64>,
}

/// Rebuilds `R^{l-1}` from first derivatives: the Jacobian of layer `l - 1` at each root,
/// the upstream gradients at layer `l`, and the Jacobian of layer `l`'s root function (central
/// differences with step [`ROOT_FD_STEP`]). Compares with the recursive engine.
///
/// Only the last layer `l = n` of a piecewise-linear network with `n ≥ 2` is supported;
/// there the upstream gradients are locally constant and the identity is exact. With
/// `ablate_root_jacobian` the root-Jacobian term is dropped.
pub fn verify_prop3(
    net: &Network,
    x: &[f64],
    class: usize,
    l: usize,
    policy: &RootPolicy,
    ablate_root_jacobian: bool,
) -> Result<Prop3Report> {
    let n = net.depth();
    if n < 2 || l != n {
        return Err(Error::Unsupported(format!(
            "root-Jacobian assembly is implemented for the last layer of a network with depth >= 2 (got l = {l}, n = {n})"
        )));
    }
    if !net.is_piecewise_linear() {
        return Err(Error::Unsupported("root-Jacobian assembly needs a piecewise-linear network".into()));
    }
    let reference = net.forward(x)?;
    let margin = reference.min_relu_margin();
    if margin < BOUNDARY_GUARD {
        return Err(Error::BoundaryProximity { margin });
    }
    let engine = Recursive::new(net, class, policy, &reference, false)?;
    let ties = engine.ties();
    let a = reference.input(n - 1);
    let direct = engine.relevance_values(n - 1, a, &mut Vec::new())?;

    let guard = |m: usize, point: &[f64]| -> Result<()> {
        let layer = net.layer(m);
        if layer.activation() != Activation::Relu {
            return Ok(());
        }
        for (w, b) in layer.rows().zip(layer.bias()) {
            let z = (dot(w, point) + b).abs();
            if z < BOUNDARY_GUARD && z > EXACT_TIE {
                return Err(Error::BoundaryProximity { margin: z });
            }
        }
        Ok(())
    };

    let mut assembled = vec![0.0; a.len()];
    for (j, root) in engine.roots_at(n - 1, a, true)? {
        guard(n - 1, &root)?;
        let u = ties.forward_layer(n - 1, &root);
        guard(n, &u)?;
        let Some(upper_root) = root_for(&engine, n, &u, class)? else {
            continue;
        };
        guard(n, &upper_root)?;
        let (_, g) = ties.suffix_value_and_gradient(n, &upper_root, class);
        // ∂R^n_j/∂u = g_j (e_j − ∇_u ã_j)
        let mut d_upper = vec![0.0; u.len()];
        d_upper[j] = g[j];
        if !ablate_root_jacobian {
            let mut probe = u.clone();
            for (i, d) in d_upper.iter_mut().enumerate() {
                probe[i] = u[i] + ROOT_FD_STEP;
                let plus = root_for(&engine, n, &probe, class)?;
                probe[i] = u[i] - ROOT_FD_STEP;
                let minus = root_for(&engine, n, &probe, class)?;
                probe[i] = u[i];
                let (Some(plus), Some(minus)) = (plus, minus) else {
                    return Err(Error::BoundaryProximity { margin: ROOT_FD_STEP });
                };
                *d -= g[j] * (plus[j] - minus[j]) / (2.0 * ROOT_FD_STEP);
            }
        }
        // chain through layer n − 1 at the root: J^T d_upper
        let layer = net.layer(n - 1);
        let mut through = vec![0.0; a.len()];
        for (k, w) in layer.rows().enumerate() {
            if d_upper[k] == 0.0 || !ties.is_active(n - 1, k, &root) {
                continue;
            }
            for (t, wi) in through.iter_mut().zip(w) {
                *t += wi * d_upper[k];
            }
        }
        for ((out, t), (ai, ri)) in assembled.iter_mut().zip(&through).zip(a.iter().zip(&root)) {
            *out += t * (ai - ri);
        }
    }
    Ok(Prop3Report {
        max_error: max_abs_diff(&direct, &assembled),
        direct,
        assembled,
    })
}

fn root_for(engine: &Recursive<'_>, l: usize, u: &[f64], neuron: usize) -> Result<Option<Vec<f64>>> {
    Ok(engine
        .roots_at(l, u, false)?
        .into_iter()
        .find(|(j, _)| *j == neuron)
        .map(|(_, root)| root))
}

/// A root that makes a one-layer neuron's relevance proportional to an arbitrary target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Forgery {
    pub root: RootPoint,
    /// `w ⊙ (x − x̃)`, equal to `(h / Σr)·r`.
    pub achieved: Vec<f64>,
}

/// Root `x̃ = x − (h/Σr)·(r ⊘ w)` for neuron `neuron` of a one-layer network, where
/// `h = w·x + b > 0`. The root lies on the neuron's hyperplane and attributes `(h/Σr)·r`.
pub fn forge_relevance(net: &Network, x: &[f64], neuron: usize, target: &[f64]) -> Result<Forgery> {
    if net.depth() != 1 {
        return Err(Error::Unsupported("forgery is defined for one-layer networks".into()));
    }
    net.check_class(neuron)?;
    let layer = net.layer(1);
    if x.len() != layer.in_dim() || target.len() != layer.in_dim() {
        return Err(Error::InputShape {
            expected: layer.in_dim(),
            got: if x.len() != layer.in_dim() { x.len() } else { target.len() },
        });
    }
    let (w, b) = (layer.row(neuron), layer.bias()[neuron]);
    let h = dot(w, x) + b;
    if !(h > 0.0) {
        return Err(Error::UnreachableTarget(format!("neuron {neuron} is inactive (h = {h})")));
    }
    let total: f64 = target.iter().sum();
    if total == 0.0 {
        return Err(Error::UnreachableTarget("target relevance sums to zero".into()));
    }
    if let Some(i) = w.iter().position(|&wi| wi == 0.0) {
        return Err(Error::UnreachableTarget(format!("weight {i} is zero, so coordinate {i} cannot carry relevance")));
    }
    let direction: Vec<f64> = target.iter().zip(w).map(|(r, wi)| r / wi).collect();
    let root = RootPoint::along(w, b, x, direction, h / total).located(1, neuron);
    let achieved = w.iter().zip(x.iter().zip(&root.point)).map(|(wi, (xi, pi))| wi * (xi - pi)).collect();
    Ok(Forgery { root, achieved })
}

/// Pairwise similarity of min-max normalized saliency maps across classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub rule: RuleKind,
    pub classes: Vec<usize>,
    /// `cosine[i][k]`; `None` when either map is constant.
    pub cosine: Vec<Vec<Option<f64>>>,
    pub mean_abs_diff: Vec<Vec<Option<f64>>>,
    /// Median over the pairs `i < k` with a defined cosine.
    pub median_cosine: Option<f64>,
}

fn normalized_saliency(net: &Network, x: &[f64], class: usize, rule: RuleKind) -> Result<Option<Vec<f64>>> {
    let trace = relevance_train_free(net, x, class, rule)?;
    Ok(min_max_normalize(trace.relevance(1)))
}

pub fn class_insensitivity(net: &Network, x: &[f64], rule: RuleKind, classes: &[usize]) -> Result<SimilarityReport> {
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("class comparison needs at least two classes".into()));
    }
    let maps = classes
        .iter()
        .map(|&c| {
            net.check_class(c)?;
            normalized_saliency(net, x, c, rule)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = classes.len();
    let mut cos = vec![vec![None; k]; k];
    let mut mad = vec![vec![None; k]; k];
    let mut upper = Vec::new();
    for i in 0..k {
        for m in 0..k {
            if let (Some(p), Some(q)) = (&maps[i], &maps[m]) {
                cos[i][m] = cosine(p, q);
                mad[i][m] = Some(mean_abs_diff(p, q));
                if i < m {
                    upper.extend(cos[i][m]);
                }
            }
        }
    }
    Ok(SimilarityReport {
        rule,
        classes: classes.to_vec(),
        cosine: cos,
        mean_abs_diff: mad,
        median_cosine: median(&upper),
    })
}

/// Copy of `net` with the last layer's weights redrawn from `N(0, 1/fan_in)`; biases are kept.
pub fn randomize_last_layer(net: &Network, seed: u64) -> Result<Network> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = net.layer(net.depth());
    let scale = 1.0 / (last.in_dim() as f64).sqrt();
    let weights = (0..last.in_dim() * last.out_dim())
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect();
    let layer = LayerSpec::from_row_major(last.out_dim(), last.in_dim(), weights, last.bias().to_vec(), last.activation())?;
    net.with_layer(net.depth(), layer)
}

/// Cosine between each class's normalized saliency before and after last-layer
/// re-randomization; `None` where either map is constant.
pub fn last_layer_randomization(
    net: &Network,
    x: &[f64],
    rule: RuleKind,
    classes: &[usize],
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let other = randomize_last_layer(net, seed)?;
    classes
        .iter()
        .map(|&c| {
            net.check_class(c)?;
            let before = normalized_saliency(net, x, c, rule)?;
            let after = normalized_saliency(&other, x, c, rule)?;
            Ok(before.zip(after).and_then(|(p, q)| cosine(&p, &q)))
        })
        .collect()
}

/// Setup of the class-insensitivity study: random zero-bias ReLU networks explained at
/// nonnegative inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsensitivityStudy {
    pub depth: usize,
    pub width: usize,
    pub classes: usize,
    pub nets: usize,
    pub seed: u64,
}

impl Default for InsensitivityStudy {
    fn default() -> Self {
        Self {
            depth: 10,
            width: 20,
            classes: 5,
            nets: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsensitivitySummary {
    pub rule: RuleKind,
    /// Median over networks of each network's median pairwise cosine.
    pub median_cosine: f64,
    /// Median over networks and classes of the cosine to the re-randomized network's map.
    pub median_randomized_cosine: f64,
    pub nets: usize,
}

impl InsensitivityStudy {
    /// Draws network `i` and an input at which at least two classes have positive output.
    /// Returns the network, the input and the active classes.
    pub fn instance(&self, i: usize) -> Result<(Network, Vec<f64>, Vec<usize>)> {
        if self.depth == 0 || self.width == 0 || self.classes < 2 {
            return Err(Error::InvalidArgument("study needs depth >= 1, width >= 1 and at least two classes".into()));
        }
        let mut dims = vec![self.width; self.depth];
        dims.push(self.classes);
        let seed = self.seed.wrapping_add(i as u64);
        for attempt in 0..1000u64 {
            let net_seed = seed.wrapping_mul(1000).wrapping_add(attempt);
            let net = generate_network_with(&dims, BiasMode::Zero, Activation::Relu, net_seed)?;
            let x = sample_uniform_inputs(self.width, 1, net_seed)?.remove(0);
            let out = net.output(&x)?;
            let active: Vec<usize> = (0..self.classes).filter(|&c| out[c] > 0.0).collect();
            if active.len() >= 2 {
                return Ok((net, x, active));
            }
        }
        Err(Error::SamplerExhausted {
            accepted: 0,
            requested: 1,
            draws: 1000,
        })
    }

    pub fn run(&self, rule: RuleKind) -> Result<InsensitivitySummary> {
        let per_net: Vec<(Option<f64>, Vec<Option<f64>>)> = (0..self.nets)
            .into_par_iter()
            .map(|i| {
                let (net, x, classes) = self.instance(i)?;
                let report = class_insensitivity(&net, &x, rule, &classes)?;
                let randomized = last_layer_randomization(&net, &x, rule, &classes, self.seed.wrapping_add(10_000 + i as u64))?;
                Ok((report.median_cosine, randomized))
            })
            .collect::<Result<_>>()?;
        let medians: Vec<f64> = per_net.iter().filter_map(|(m, _)| *m).collect();
        let randomized: Vec<f64> = per_net.iter().flat_map(|(_, r)| r.iter().flatten().copied()).collect();
        Ok(InsensitivitySummary {
            rule,
            median_cosine: median(&medians).unwrap_or(f64::NAN),
            median_randomized_cosine: median(&randomized).unwrap_or(f64::NAN),
            nets: self.nets,
        })
    }
}

/// Second-order term of the Taylor recursion at `root` for layer `l`: the Hessian of the
/// suffix logit at the root applied to `a_l − root`, by central differences of exact
/// gradients. Returns its L∞ norm. Zero on affine pieces.
pub fn higher_order_term(net: &Network, x: &[f64], class: usize, l: usize, root: &[f64]) -> Result<f64> {
    net.check_class(class)?;
    net.check_layer(l, 1, net.depth())?;
    let trace = net.forward(x)?;
    let a = trace.input(l);
    if root.len() != a.len() {
        return Err(Error::InputShape {
            expected: a.len(),
            got: root.len(),
        });
    }
    let d = sub(a, root);
    let scale = max_abs(&d);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let h = 1e-4 / scale;
    let plus: Vec<f64> = root.iter().zip(&d).map(|(r, di)| r + h * di).collect();
    let minus: Vec<f64> = root.iter().zip(&d).map(|(r, di)| r - h * di).collect();
    let ties = TieBreak::active_convention(net);
    if ties.fingerprint(l, &plus) != ties.fingerprint(l, &minus) {
        let margin = (l..=net.depth())
            .map(|m| {
                let mut p = root.to_vec();
                for k in l..m {
                    p = ties.forward_layer(k, &p);
                }
                net.forward_from(m, &p).map(|t| t.min_relu_margin())
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        return Err(Error::BoundaryProximity { margin });
    }
    let (_, gp) = ties.suffix_value_and_gradient(l, &plus, class);
    let (_, gm) = ties.suffix_value_and_gradient(l, &minus, class);
    Ok(gp.iter().zip(&gm).map(|(p, m)| ((p - m) / (2.0 * h)).abs()).fold(0.0, f64::max))
}
