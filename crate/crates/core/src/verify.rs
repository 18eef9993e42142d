//! The invariant suite behind `dtd verify`: each check runs seeded trials, records its
//! measured quantities against fixed bounds and passes only if every bound holds.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{
    check_root_region, forge_relevance, higher_order_term, verify_prop2, verify_prop3, InsensitivityStudy,
};
use crate::engine::{relevance_train_free, RegionRootTable, RootPolicy};
use crate::error::{Error, Result};
use crate::experiment::{generate_network_with, sample_inputs_seeded, BiasMode, ExperimentConfig, INIT_NOTE};
use crate::net::{Activation, LayerSpec, Network};
use crate::rules::{propagate_closed_form, RootPoint, RuleKind};
use crate::vecops::{hadamard, max_abs_diff, median};

/// A network and one input for it.
type Instance = (Network, Vec<f64>);

pub const CHECKS: [&str; 9] = [
    "closed-form",
    "conservation",
    "gradient-x-input",
    "prop2",
    "prop3",
    "prop4",
    "forgery",
    "class-insensitivity",
    "bias-counterexample",
];

/// Deliberate defects for checking that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// LRP0 with `w·a` instead of `w·a + b` as denominator.
    Lrp0NoBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Bound {
    AtMost(f64),
    Above(f64),
    AtLeast(f64),
    Below(f64),
}

impl Bound {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Bound::AtMost(b) => v <= b,
            Bound::Above(b) => v > b,
            Bound::AtLeast(b) => v >= b,
            Bound::Below(b) => v < b,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b:e}"),
            Bound::Above(b) => write!(f, "> {b:e}"),
            Bound::AtLeast(b) => write!(f, ">= {b}"),
            Bound::Below(b) => write!(f, "< {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub metric: String,
    pub value: f64,
    pub bound: Bound,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub trials: usize,
    /// Trials dropped because they sat too close to a region boundary or were degenerate.
    pub skipped: usize,
    pub measurements: Vec<Measurement>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub init: String,
    pub config: ExperimentConfig,
    pub fault: Option<Fault>,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Check names to run; empty runs all of [`CHECKS`].
    pub only: Vec<String>,
    pub fault: Option<Fault>,
    pub trials: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            only: Vec::new(),
            fault: None,
            trials: 20,
        }
    }
}

struct Check {
    trials: usize,
    skipped: usize,
    measurements: Vec<Measurement>,
}

impl Check {
    fn new() -> Self {
        Check {
            trials: 0,
            skipped: 0,
            measurements: Vec::new(),
        }
    }

    fn measure(&mut self, metric: &str, value: f64, bound: Bound) {
        self.measurements.push(Measurement {
            metric: metric.into(),
            value,
            passed: bound.holds(value),
            bound,
        });
    }

    fn finish(self, name: &str) -> CheckResult {
        let passed = self.trials > 0 && self.measurements.iter().all(|m| m.passed);
        CheckResult {
            name: name.into(),
            passed,
            trials: self.trials,
            skipped: self.skipped,
            measurements: self.measurements,
        }
    }
}

pub fn run_verify(config: &ExperimentConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    config.validate()?;
    if opts.trials == 0 {
        return Err(Error::InvalidArgument("verify needs at least one trial".into()));
    }
    if let Some(bad) = opts.only.iter().find(|n| !CHECKS.contains(&n.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "unknown check '{bad}', expected one of {}",
            CHECKS.join(", ")
        )));
    }
    let selected = |name: &str| opts.only.is_empty() || opts.only.iter().any(|n| n == name);
    let suite = Suite { config, opts };
    let mut checks = Vec::new();
    for name in CHECKS.into_iter().filter(|n| selected(n)) {
        let check = match name {
            "closed-form" => suite.closed_form()?,
            "conservation" => suite.conservation()?,
            "gradient-x-input" => suite.gradient_x_input()?,
            "prop2" => suite.prop2()?,
            "prop3" => suite.prop3()?,
            "prop4" => suite.prop4()?,
            "forgery" => suite.forgery()?,
            "class-insensitivity" => suite.class_insensitivity()?,
            "bias-counterexample" => bias_counterexample()?,
            _ => unreachable!("names come from CHECKS"),
        };
        checks.push(check.finish(name));
    }
    Ok(VerifyReport {
        init: INIT_NOTE.into(),
        config: config.clone(),
        fault: opts.fault,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// `R^{l}` for every layer by repeated closed-form propagation, top layer first.
pub fn closed_form_relevances(net: &Network, x: &[f64], class: usize, rule: RuleKind) -> Result<Vec<Vec<f64>>> {
    let trace = net.forward(x)?;
    let n = net.depth();
    let mut top = vec![0.0; net.output_dim()];
    top[class] = trace.output()[class];
    let mut relevances = vec![top];
    for l in (1..=n).rev() {
        let upper = relevances.last().expect("nonempty");
        let r = propagate_closed_form(rule, net.layer(l), trace.input(l), upper)?;
        relevances.push(r);
    }
    relevances.reverse();
    Ok(relevances)
}

struct Suite<'a> {
    config: &'a ExperimentConfig,
    opts: &'a VerifyOptions,
}

impl Suite<'_> {
    fn seed(&self, i: usize) -> u64 {
        self.config.seed.wrapping_add(i as u64)
    }

    /// Up to `trials` (network, input) pairs; networks whose explained logit never exceeds the
    /// threshold are replaced by the next seed.
    fn instances(&self, dims: &[usize], bias: BiasMode, activation: Activation) -> Result<(Vec<Instance>, usize)> {
        let mut found = Vec::new();
        let mut skipped = 0;
        let mut i = 0;
        while found.len() < self.opts.trials && i < 10 * self.opts.trials {
            let net = generate_network_with(dims, bias, activation, self.seed(i))?;
            match sample_inputs_seeded(&net, 1, self.config.min_output, self.config.class, self.seed(i)) {
                Ok(mut xs) => found.push((net, xs.remove(0))),
                Err(Error::SamplerExhausted { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
            i += 1;
        }
        Ok((found, skipped))
    }

    fn config_instances(&self) -> Result<(Vec<Instance>, usize)> {
        self.instances(&self.config.dims, self.config.bias_mode, self.config.activation.to_activation())
    }

    fn closed_form(&self) -> Result<Check> {
        let mut check = Check::new();
        let (instances, skipped) = self.config_instances()?;
        check.skipped = skipped;
        let mut worst = 0.0f64;
        for (net, x) in &instances {
            check.trials += 1;
            for rule in RuleKind::defaults() {
                let trace = relevance_train_free(net, x, self.config.class, rule)?;
                let closed = closed_form_relevances(net, x, self.config.class, rule)?;
                for (l, r) in closed.iter().enumerate() {
                    worst = worst.max(max_abs_diff(trace.relevance(l + 1), r));
                }
            }
        }
        check.measure("max_layer_gap", worst, Bound::AtMost(1e-10));
        Ok(check)
    }

    fn conservation(&self) -> Result<Check> {
        let mut check = Check::new();
        let (instances, skipped) = self.config_instances()?;
        check.skipped = skipped;
        let mut worst = 0.0f64;
        for (net, x) in &instances {
            check.trials += 1;
            for rule in [RuleKind::W2, RuleKind::ZPlus, RuleKind::Gamma(1.0)] {
                let totals = relevance_train_free(net, x, self.config.class, rule)?.totals();
                let top = *totals.last().expect("nonempty");
                for t in &totals {
                    worst = worst.max((t - top).abs() / (1.0 + top.abs()));
                }
            }
        }
        check.measure("max_relative_drift", worst, Bound::AtMost(1e-8));
        Ok(check)
    }

    fn gradient_x_input(&self) -> Result<Check> {
        let mut check = Check::new();
        let net = generate_network_with(
            &self.config.dims,
            self.config.bias_mode,
            self.config.activation.to_activation(),
            self.config.seed,
        )?;
        let class = self.config.class;
        let inputs = sample_inputs_seeded(&net, self.config.n_samples, self.config.min_output, class, self.config.seed)?;
        let faulty = match self.opts.fault {
            Some(Fault::Lrp0NoBias) => Some(without_biases(&net)?),
            None => None,
        };
        let mut worst = 0.0f64;
        for x in &inputs {
            check.trials += 1;
            let r1 = match &faulty {
                None => relevance_train_free(&net, x, class, RuleKind::Lrp0)?.relevance(1).to_vec(),
                Some(stripped) => lrp0_with_layers(&net, stripped, x, class)?,
            };
            let grad = net.gradient(x, class, 1)?.gradient;
            worst = worst.max(max_abs_diff(&r1, &hadamard(&grad, x)));
        }
        check.measure("max_gap", worst, Bound::AtMost(1e-8));
        Ok(check)
    }

    fn prop2(&self) -> Result<Check> {
        let mut check = Check::new();
        let (instances, skipped) = self.instances(&self.config.dims, BiasMode::Zero, Activation::Relu)?;
        check.skipped = skipped;
        let mut worst = 0.0f64;
        for (net, x) in &instances {
            let policy = RootPolicy::ConstantPerRegion(RegionRootTable::origin_for_input(net, x)?);
            let report = verify_prop2(net, x, self.config.class, &policy)?;
            check.trials += 1;
            worst = worst.max(report.max_error);
        }
        check.measure("max_gap", worst, Bound::AtMost(1e-8));
        Ok(check)
    }

    fn prop3(&self) -> Result<Check> {
        let mut check = Check::new();
        let dims = [self.config.dims[0], self.config.dims[1], *self.config.dims.last().expect("validated")];
        let (instances, skipped) = self.instances(&dims, self.config.bias_mode, Activation::Relu)?;
        check.skipped = skipped;
        let policy = RootPolicy::RuleBased(RuleKind::ZPlus);
        let (mut worst, mut ablated) = (0.0f64, Vec::new());
        for (net, x) in &instances {
            let full = verify_prop3(net, x, self.config.class, 2, &policy, false);
            let without = verify_prop3(net, x, self.config.class, 2, &policy, true);
            match (full, without) {
                (Ok(full), Ok(without)) if full.direct.iter().any(|r| *r != 0.0) => {
                    check.trials += 1;
                    worst = worst.max(full.max_error);
                    ablated.push(without.max_error);
                }
                (Ok(_), Ok(_)) | (Err(Error::BoundaryProximity { .. }), _) | (_, Err(Error::BoundaryProximity { .. })) => {
                    check.skipped += 1
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        check.measure("max_gap", worst, Bound::AtMost(1e-4));
        check.measure("median_ablated_gap", median(&ablated).unwrap_or(0.0), Bound::Above(1e-2));
        Ok(check)
    }

    fn prop4(&self) -> Result<Check> {
        let mut check = Check::new();
        let mut relu_worst = 0.0f64;
        let mut softplus = Vec::new();
        for (activation, bias) in [(Activation::Relu, self.config.bias_mode), (Activation::Softplus { beta: 1.0 }, BiasMode::Unrestricted)] {
            let (instances, skipped) = self.instances(&self.config.dims, bias, activation)?;
            check.skipped += skipped;
            for (net, x) in &instances {
                let l = net.depth().min(2);
                let root: Vec<f64> = net.forward(x)?.input(l).iter().map(|v| 0.9 * v).collect();
                match higher_order_term(net, x, self.config.class, l, &root) {
                    Ok(m) => {
                        check.trials += 1;
                        if activation == Activation::Relu {
                            relu_worst = relu_worst.max(m);
                        } else {
                            softplus.push(m);
                        }
                    }
                    Err(Error::BoundaryProximity { .. }) => check.skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        check.measure("relu_max", relu_worst, Bound::AtMost(1e-10));
        check.measure("softplus_median", median(&softplus).unwrap_or(0.0), Bound::Above(1e-6));
        Ok(check)
    }

    fn forgery(&self) -> Result<Check> {
        let mut check = Check::new();
        let dims = [self.config.dims[0], self.config.dims[1]];
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let (mut worst_shape, mut worst_residual) = (0.0f64, 0.0f64);
        let mut i = 0;
        while check.trials < self.opts.trials && i < 10 * self.opts.trials {
            let net = generate_network_with(&dims, BiasMode::Unrestricted, Activation::Relu, self.seed(i))?;
            i += 1;
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = net.output(&x)?;
            let Some(neuron) = out.iter().position(|o| *o > 0.0) else {
                check.skipped += 1;
                continue;
            };
            let target = random_target(&mut rng, dims[0]);
            let forged = forge_relevance(&net, &x, neuron, &target)?;
            let (sa, sr): (f64, f64) = (forged.achieved.iter().sum(), target.iter().sum());
            let shape = forged
                .achieved
                .iter()
                .zip(&target)
                .map(|(a, r)| (a / sa - r / sr).abs())
                .fold(0.0, f64::max);
            worst_shape = worst_shape.max(shape);
            worst_residual = worst_residual.max(forged.root.residual.abs());
            check.trials += 1;
        }
        check.measure("max_normalized_gap", worst_shape, Bound::AtMost(1e-10));
        check.measure("max_residual", worst_residual, Bound::AtMost(1e-9));
        Ok(check)
    }

    fn class_insensitivity(&self) -> Result<Check> {
        let mut check = Check::new();
        let study = InsensitivityStudy {
            nets: self.opts.trials,
            seed: self.config.seed,
            ..InsensitivityStudy::default()
        };
        let zplus = study.run(RuleKind::ZPlus)?;
        let lrp0 = study.run(RuleKind::Lrp0)?;
        check.trials = study.nets;
        check.measure("zplus_median_cosine", zplus.median_cosine, Bound::AtLeast(0.999));
        check.measure("zplus_randomized_cosine", zplus.median_randomized_cosine, Bound::AtLeast(0.999));
        check.measure("lrp0_minus_zplus_median", lrp0.median_cosine - zplus.median_cosine, Bound::Below(0.0));
        check.measure(
            "lrp0_minus_zplus_randomized",
            lrp0.median_randomized_cosine - zplus.median_randomized_cosine,
            Bound::Below(0.0),
        );
        Ok(check)
    }
}

fn random_target(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let r: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (sum, l1) = r.iter().fold((0.0, 0.0), |(s, a), v| (s + v, a + v.abs()));
        if sum.abs() >= 0.1 * l1 {
            return r;
        }
    }
}

fn without_biases(net: &Network) -> Result<Network> {
    let layers = net
        .layers()
        .iter()
        .map(|l| LayerSpec::from_row_major(l.out_dim(), l.in_dim(), l.weights_row_major().to_vec(), vec![0.0; l.out_dim()], l.activation()))
        .collect::<Result<Vec<_>>>()?;
    Network::new(net.input_dim(), layers)
}

/// LRP0 propagated through `layers` at the activations of `net`.
fn lrp0_with_layers(net: &Network, layers: &Network, x: &[f64], class: usize) -> Result<Vec<f64>> {
    let trace = net.forward(x)?;
    let mut r = vec![0.0; net.output_dim()];
    r[class] = trace.output()[class];
    for l in (1..=net.depth()).rev() {
        r = propagate_closed_form(RuleKind::Lrp0, layers.layer(l), trace.input(l), &r)?;
    }
    Ok(r)
}

/// The non-positive-bias counterexample: with `b = −1` the origin has `f(0) = 0` but a zero
/// gradient, so it lies outside the region of any input with positive output.
fn bias_counterexample() -> Result<Check> {
    let mut check = Check::new();
    let layer = LayerSpec::new(vec![vec![1.0, 1.0], vec![0.5, 1.0]], vec![-1.0, -1.0], Activation::Relu)?;
    let net = Network::new(2, vec![layer])?;
    let x = [2.0, 1.0];
    let origin = RootPoint::along(&[1.0, 1.0], -1.0, &x, x.to_vec(), 1.0).located(1, 0);
    let result = check_root_region(&net, &x, 0, &origin)?;
    check.trials = 1;
    check.measure("origin_output", net.output(&origin.point)?[0], Bound::AtMost(0.0));
    check.measure("gradient_gap", result.gradient_gap, Bound::Above(0.0));
    check.measure("origin_in_region", f64::from(u8::from(result.same_gradient)), Bound::AtMost(0.0));
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(only: &[&str], fault: Option<Fault>) -> VerifyReport {
        let config = ExperimentConfig {
            n_samples: 50,
            ..ExperimentConfig::default()
        };
        let opts = VerifyOptions {
            only: only.iter().map(|s| s.to_string()).collect(),
            fault,
            trials: 5,
        };
        run_verify(&config, &opts).unwrap()
    }

    #[test]
    fn only_restricts_the_suite() {
        let report = quick(&["prop3"], None);
        assert_eq!(report.checks.len(), 1);
        assert_eq!(report.checks[0].name, "prop3");
    }

    #[test]
    fn injected_fault_breaks_gradient_x_input() {
        assert!(quick(&["gradient-x-input"], None).passed);
        let report = quick(&["gradient-x-input"], Some(Fault::Lrp0NoBias));
        assert!(!report.passed);
        assert!(report.checks[0].measurements[0].value > 1e-8);
    }

    #[test]
    fn bias_counterexample_passes() {
        assert!(quick(&["bias-counterexample"], None).passed);
    }

    #[test]
    fn unknown_check_is_rejected() {
        let opts = VerifyOptions {
            only: vec!["nope".into()],
            ..VerifyOptions::default()
        };
        assert!(matches!(run_verify(&ExperimentConfig::default(), &opts), Err(Error::InvalidArgument(_))));
    }
}
