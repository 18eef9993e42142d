//! Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.
//!
//! Tolerances and trial counts are fixed here and must not be loosened to make a line pass.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dtd_audit::diagnostics::{
    check_root_region, forge_relevance, higher_order_term, run_table1, verify_prop3, InsensitivityStudy,
};
use dtd_audit::engine::{relevance_recursive, relevance_train_free, RegionRootTable, RootPolicy};
use dtd_audit::experiment::{
    generate_network, generate_network_with, sample_inputs, sample_inputs_seeded, sample_normal_inputs, BiasMode,
    ExperimentConfig,
};
use dtd_audit::rules::{propagate_closed_form, RootPoint};
use dtd_audit::vecops::{hadamard, max_abs_diff, median};
use dtd_audit::{Activation, Error, LayerSpec, Network, RuleKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    summary: String,
}

fn verdict(passed: bool, summary: String) -> Verdict {
    Verdict { passed, summary }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
}

/// The 100 nets shared by criteria 1 and 8.
fn equivalence_instances() -> Vec<(Network, Vec<f64>, usize)> {
    (0..100u64)
        .map(|seed| {
            let net = generate_network_with(&[10, 10, 10, 10], BiasMode::NonPositive, Activation::Relu, seed).unwrap();
            let x = sample_normal_inputs(10, 1, seed).unwrap().remove(0);
            let class = argmax(&net.output(&x).unwrap());
            (net, x, class)
        })
        .collect()
}

fn closed_form_equivalence() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (net, x, class) in equivalence_instances() {
        let trace = net.forward(&x).unwrap();
        for rule in RuleKind::defaults() {
            let relevance = relevance_train_free(&net, &x, class, rule).unwrap();
            let mut upper = relevance.relevance(net.depth() + 1).to_vec();
            for l in (1..=net.depth()).rev() {
                let closed = propagate_closed_form(rule, net.layer(l), trace.input(l), &upper).unwrap();
                worst = worst.max(max_abs_diff(&closed, relevance.relevance(l)));
                upper = relevance.relevance(l).to_vec();
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-10 && elapsed < Duration::from_secs(10),
        format!("train-free vs closed form, 100 nets x 5 rules: max gap {worst:.2e} (<= 1e-10), {} (< 10s)", secs(elapsed)),
    )
}

fn gradient_times_input() -> Verdict {
    let config = ExperimentConfig::default();
    let net = generate_network(&config).unwrap();
    let inputs = sample_inputs(&net, &config).unwrap();
    let mut train_free = 0.0f64;
    for x in &inputs {
        let r1 = relevance_train_free(&net, x, 0, RuleKind::Lrp0).unwrap();
        let grad = net.gradient(x, 0, 1).unwrap().gradient;
        train_free = train_free.max(max_abs_diff(r1.relevance(1), &hadamard(&grad, x)));
    }
    let mut recursive = 0.0f64;
    let mut checked = 0;
    for seed in 0..20u64 {
        let net = generate_network_with(&[10, 10, 10, 10], BiasMode::Zero, Activation::Relu, seed).unwrap();
        let Ok(xs) = sample_inputs_seeded(&net, 10, 0.1, 0, seed) else { continue };
        for x in &xs {
            let policy = RootPolicy::ConstantPerRegion(RegionRootTable::origin_for_input(&net, x).unwrap());
            let r1 = relevance_recursive(&net, x, 0, &policy).unwrap();
            let grad = net.gradient(x, 0, 1).unwrap().gradient;
            recursive = recursive.max(max_abs_diff(r1.relevance(1), &hadamard(&grad, x)));
            checked += 1;
        }
    }
    verdict(
        train_free <= 1e-8 && recursive <= 1e-8 && checked >= 100,
        format!(
            "LRP0 vs grad*input on {} inputs: {train_free:.2e}; recursive root-0 on {checked} zero-bias inputs: {recursive:.2e} (<= 1e-8)",
            inputs.len()
        ),
    )
}

fn table1_bands() -> Verdict {
    let start = Instant::now();
    let config = ExperimentConfig::default();
    let net = generate_network(&config).unwrap();
    let reports = run_table1(&net, &config.rules, &config.table1_options()).unwrap();
    let elapsed = start.elapsed();
    let mut passed = elapsed < Duration::from_secs(60);
    let mut cells = Vec::new();
    for r in &reports {
        let region_ok = r.frac_same_region < 1.0 && (0.20..=0.70).contains(&r.frac_same_region);
        let output_ok = r.frac_same_output > 0.0 && (0.05..=0.30).contains(&r.frac_same_output);
        passed &= region_ok && output_ok;
        cells.push(format!(
            "{} {:.2}%{}/{:.2}%{}",
            r.rule,
            100.0 * r.frac_same_region,
            if region_ok { "" } else { "!" },
            100.0 * r.frac_same_output,
            if output_ok { "" } else { "!" }
        ));
    }
    verdict(
        passed,
        format!(
            "same-region in [20%,70%] / same-output in [5%,30%]: {} ({}; ! marks out of band)",
            cells.join(", "),
            secs(elapsed)
        ),
    )
}

fn root_jacobian_identity() -> Verdict {
    let policy = RootPolicy::RuleBased(RuleKind::ZPlus);
    let (mut worst, mut ablated, mut skipped) = (0.0f64, Vec::new(), 0);
    let mut seed = 0u64;
    while ablated.len() < 50 && seed < 1000 {
        let net = generate_network_with(&[10, 10, 10], BiasMode::NonPositive, Activation::Relu, seed).unwrap();
        let inputs = sample_inputs_seeded(&net, 1, 0.1, 0, seed);
        seed += 1;
        let Ok(xs) = inputs else { continue };
        match (
            verify_prop3(&net, &xs[0], 0, 2, &policy, false),
            verify_prop3(&net, &xs[0], 0, 2, &policy, true),
        ) {
            (Ok(full), Ok(without)) if full.direct.iter().any(|r| *r != 0.0) => {
                worst = worst.max(full.max_error);
                ablated.push(without.max_error);
            }
            (Ok(_), Ok(_)) | (Err(Error::BoundaryProximity { .. }), _) | (_, Err(Error::BoundaryProximity { .. })) => {
                skipped += 1
            }
            (Err(e), _) | (_, Err(e)) => panic!("prop3 failed: {e}"),
        }
    }
    let ablated_median = median(&ablated).unwrap_or(0.0);
    verdict(
        ablated.len() == 50 && worst <= 1e-4 && ablated_median > 1e-2,
        format!(
            "z+ roots on 2-layer nets, {} trials ({skipped} skipped near boundaries or with zero relevance): max gap {worst:.2e} (<= 1e-4), ablated median {ablated_median:.2e} (> 1e-2)",
            ablated.len()
        ),
    )
}

fn higher_order_vanishes() -> Verdict {
    let mut relu_worst = 0.0f64;
    let (mut relu_trials, mut softplus) = (0, Vec::new());
    let mut seed = 0u64;
    while (relu_trials < 100 || softplus.len() < 100) && seed < 1000 {
        let x = sample_normal_inputs(10, 1, seed).unwrap().remove(0);
        for (activation, bias) in [(Activation::Relu, BiasMode::Unrestricted), (Activation::Softplus { beta: 1.0 }, BiasMode::Unrestricted)] {
            let net = generate_network_with(&[10, 10, 10, 10], bias, activation, seed).unwrap();
            let root: Vec<f64> = net.forward(&x).unwrap().input(2).iter().map(|v| 0.9 * v).collect();
            match higher_order_term(&net, &x, 0, 2, &root) {
                Ok(m) if activation == Activation::Relu && relu_trials < 100 => {
                    relu_worst = relu_worst.max(m);
                    relu_trials += 1;
                }
                Ok(m) if activation != Activation::Relu && softplus.len() < 100 => softplus.push(m),
                Ok(_) | Err(Error::BoundaryProximity { .. }) => {}
                Err(e) => panic!("higher-order term failed: {e}"),
            }
        }
        seed += 1;
    }
    let soft_median = median(&softplus).unwrap_or(0.0);
    verdict(
        relu_trials == 100 && softplus.len() == 100 && relu_worst <= 1e-10 && soft_median > 1e-6,
        format!("ReLU max over {relu_trials}: {relu_worst:.2e} (<= 1e-10); softplus median over {}: {soft_median:.2e} (> 1e-6)", softplus.len()),
    )
}

fn forgery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_shape, mut worst_residual, mut trials) = (0.0f64, 0.0f64, 0);
    let mut seed = 0u64;
    while trials < 100 {
        let net = generate_network_with(&[8, 4], BiasMode::Unrestricted, Activation::Relu, seed).unwrap();
        seed += 1;
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Some(neuron) = net.output(&x).unwrap().iter().position(|o| *o > 0.0) else { continue };
        let target: Vec<f64> = loop {
            let r: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (s, l1) = r.iter().fold((0.0, 0.0), |(s, a), v| (s + v, a + f64::abs(*v)));
            if s.abs() >= 0.1 * l1 {
                break r;
            }
        };
        let forged = forge_relevance(&net, &x, neuron, &target).unwrap();
        let sa: f64 = forged.achieved.iter().sum();
        let sr: f64 = target.iter().sum();
        for (a, r) in forged.achieved.iter().zip(&target) {
            worst_shape = worst_shape.max((a / sa - r / sr).abs());
        }
        let layer = net.layer(1);
        let residual = layer.row(neuron).iter().zip(&forged.root.point).map(|(w, p)| w * p).sum::<f64>() + layer.bias()[neuron];
        worst_residual = worst_residual.max(residual.abs()).max(forged.root.residual.abs());
        trials += 1;
    }
    verdict(
        worst_shape <= 1e-10 && worst_residual <= 1e-9,
        format!("100 targets: normalized gap {worst_shape:.2e} (<= 1e-10), hyperplane residual {worst_residual:.2e} (<= 1e-9)"),
    )
}

fn class_insensitivity() -> Verdict {
    let start = Instant::now();
    let study = InsensitivityStudy::default();
    assert_eq!((study.depth, study.width, study.classes, study.nets), (10, 20, 5, 20));
    let zplus = study.run(RuleKind::ZPlus).unwrap();
    let lrp0 = study.run(RuleKind::Lrp0).unwrap();
    let elapsed = start.elapsed();
    verdict(
        zplus.median_cosine >= 0.999
            && zplus.median_randomized_cosine >= 0.999
            && lrp0.median_cosine < zplus.median_cosine
            && lrp0.median_randomized_cosine < zplus.median_randomized_cosine
            && elapsed < Duration::from_secs(60),
        format!(
            "z+ median cosine {:.6} / after re-randomization {:.6} (>= 0.999); LRP0 {:.4} / {:.4} (lower); {} (< 60s)",
            zplus.median_cosine,
            zplus.median_randomized_cosine,
            lrp0.median_cosine,
            lrp0.median_randomized_cosine,
            secs(elapsed)
        ),
    )
}

fn conservation() -> Verdict {
    let mut worst = 0.0f64;
    for (net, x, class) in equivalence_instances() {
        for rule in [RuleKind::W2, RuleKind::ZPlus, RuleKind::Gamma(1.0)] {
            let totals = relevance_train_free(&net, &x, class, rule).unwrap().totals();
            let top = *totals.last().unwrap();
            for t in &totals {
                worst = worst.max((t - top).abs() / (1.0 + top.abs()));
            }
        }
    }
    verdict(worst <= 1e-8, format!("W2/z+/gamma layer totals over the 100 nets: max drift {worst:.2e} x (1 + R_out) (<= 1e-8)"))
}

fn bias_counterexample() -> Verdict {
    let layer = LayerSpec::new(vec![vec![1.0, 1.0], vec![0.5, 1.0]], vec![-1.0, -1.0], Activation::Relu).unwrap();
    let net = Network::new(2, vec![layer]).unwrap();
    let x = [2.0, 1.0];
    let origin = RootPoint::along(&[1.0, 1.0], -1.0, &x, x.to_vec(), 1.0).located(1, 0);
    let f0 = net.output(&origin.point).unwrap();
    let check = check_root_region(&net, &x, 0, &origin).unwrap();
    verdict(
        origin.point == vec![0.0, 0.0] && f0 == vec![0.0, 0.0] && check.gradient_gap > 0.0 && !check.same_gradient,
        format!("b = -1: f(0) = {f0:?}, gradient gap {} > 0, origin flagged outside the region", check.gradient_gap),
    )
}

type Criterion = fn() -> Verdict;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("rule/closed-form equivalence", closed_form_equivalence),
        ("gradient x input identity", gradient_times_input),
        ("table 1 qualitative bands", table1_bands),
        ("root-Jacobian identity", root_jacobian_identity),
        ("higher-order term", higher_order_vanishes),
        ("relevance forgery", forgery),
        ("class insensitivity", class_insensitivity),
        ("conservation", conservation),
        ("non-positive bias counterexample", bias_counterexample),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        failed += usize::from(!v.passed);
        println!("acceptance {} [{}] {name}: {}", i + 1, if v.passed { "PASS" } else { "FAIL" }, v.summary);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
