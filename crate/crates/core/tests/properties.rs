use dtd_audit::diagnostics::{forge_relevance, run_table1, verify_prop2, Table1Options};
use dtd_audit::engine::{relevance_recursive, relevance_train_free, RegionRootTable, RootPolicy};
use dtd_audit::experiment::{generate_network_with, BiasMode, ExperimentConfig};
use dtd_audit::rules::{find_root_linear, find_root_train_free, propagate_closed_form};
use dtd_audit::vecops::{hadamard, max_abs_diff};
use dtd_audit::{Activation, LayerSpec, Network, RuleKind};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..7, 2..5)
}

fn bias_mode() -> impl Strategy<Value = BiasMode> {
    prop_oneof![Just(BiasMode::NonPositive), Just(BiasMode::Unrestricted), Just(BiasMode::Zero)]
}

/// A random ReLU network with an input in `[-2, 2]^d`.
fn relu_case() -> impl Strategy<Value = (Network, Vec<f64>)> {
    (dims(), bias_mode(), any::<u64>()).prop_flat_map(|(dims, bias, seed)| {
        let net = generate_network_with(&dims, bias, Activation::Relu, seed).unwrap();
        let x = prop::collection::vec(-2.0f64..2.0, dims[0]);
        (Just(net), x)
    })
}

fn rule() -> impl Strategy<Value = RuleKind> {
    prop_oneof![
        Just(RuleKind::Lrp0),
        (1e-6f64..1.0).prop_map(RuleKind::Epsilon),
        Just(RuleKind::W2),
        Just(RuleKind::ZPlus),
        (0.0f64..5.0).prop_map(RuleKind::Gamma),
    ]
}

fn one_layer(w: Vec<f64>, b: f64) -> LayerSpec {
    LayerSpec::new(vec![w], vec![b], Activation::Relu).unwrap()
}

fn weights_and_input() -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>)> {
    (1usize..8).prop_flat_map(|d| {
        (
            prop::collection::vec(-2.0f64..2.0, d),
            -1.0f64..1.0,
            prop::collection::vec(-2.0f64..2.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn relu_outputs_are_masked_pre_activations((net, x) in relu_case()) {
        let trace = net.forward(&x).unwrap();
        for l in 1..=net.depth() {
            for ((z, m), a) in trace.pre_activation(l).iter().zip(trace.mask(l)).zip(trace.input(l + 1)) {
                prop_assert_eq!(*m, *z >= 0.0);
                prop_assert_eq!(*a, if *m { *z } else { 0.0 });
            }
        }
    }

    #[test]
    fn equal_fingerprints_mean_equal_gradients((net, x) in relu_case(), dx in prop::collection::vec(-0.05f64..0.05, 6)) {
        let y: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        let (fx, fy) = (net.forward(&x).unwrap().fingerprint(1).unwrap(), net.forward(&y).unwrap().fingerprint(1).unwrap());
        if fx == fy {
            for class in 0..net.output_dim() {
                let gx = net.gradient(&x, class, 1).unwrap().gradient;
                let gy = net.gradient(&y, class, 1).unwrap().gradient;
                prop_assert!(max_abs_diff(&gx, &gy) <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences((net, x) in relu_case()) {
        prop_assume!(net.check_fd_admissible(&x).is_ok());
        let exact = net.gradient(&x, 0, 1).unwrap().gradient;
        let fd = net.finite_difference_gradient(&x, 0, 1e-4).unwrap();
        let scale = 1.0 + exact.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        prop_assert!(max_abs_diff(&exact, &fd) <= 1e-5 * scale);
    }

    #[test]
    fn zero_bias_relu_nets_are_positively_homogeneous(dims in dims(), seed in any::<u64>(), c in 0.01f64..10.0) {
        let net = generate_network_with(&dims, BiasMode::Zero, Activation::Relu, seed).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|i| (i as f64 * 0.37).sin()).collect();
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (fx, fcx) = (net.output(&x).unwrap(), net.output(&cx).unwrap());
        for (a, b) in fx.iter().zip(&fcx) {
            prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn train_free_equals_closed_form((net, x) in relu_case(), rule in rule()) {
        let class = 0;
        let trace = net.forward(&x).unwrap();
        // LRP0's bias-inclusive denominator can vanish; such inputs are out of scope
        let Ok(relevance) = relevance_train_free(&net, &x, class, rule) else { return Ok(()) };
        for l in 1..=net.depth() {
            let Ok(closed) = propagate_closed_form(rule, net.layer(l), trace.input(l), relevance.relevance(l + 1)) else {
                return Ok(());
            };
            prop_assert!(max_abs_diff(&closed, relevance.relevance(l)) <= 1e-10);
        }
    }

    #[test]
    fn hyperplane_rules_conserve_relevance((net, x) in relu_case(), rule in prop_oneof![Just(RuleKind::W2), Just(RuleKind::ZPlus), Just(RuleKind::Gamma(1.0))]) {
        let relevance = relevance_train_free(&net, &x, 0, rule).unwrap();
        let trace = net.forward(&x).unwrap();
        let top = relevance.relevance(net.depth() + 1)[0];
        for l in 1..=net.depth() {
            // neurons without a valid direction drop out of the balance
            let layer = net.layer(l);
            let valid: f64 = layer
                .rows()
                .zip(relevance.relevance(l + 1))
                .filter(|(w, _)| {
                    let v = dtd_audit::rules::search_direction(rule, w, trace.input(l));
                    w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs() >= 1e-12
                })
                .map(|(_, r)| r)
                .sum();
            let lower: f64 = relevance.relevance(l).iter().sum();
            prop_assert!((lower - valid).abs() <= 1e-8 * (1.0 + top.abs()));
        }
    }

    #[test]
    fn zplus_is_nonnegative_on_nonnegative_inputs(dims in dims(), seed in any::<u64>(), bias in bias_mode()) {
        let net = generate_network_with(&dims, bias, Activation::Relu, seed).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|i| ((i + 1) as f64 * 0.61).sin().abs()).collect();
        let relevance = relevance_train_free(&net, &x, 0, RuleKind::ZPlus).unwrap();
        for r in relevance.relevances.iter().flatten() {
            prop_assert!(*r >= -1e-12);
        }
    }

    #[test]
    fn lrp0_is_gradient_times_input((net, x) in relu_case()) {
        let Ok(relevance) = relevance_train_free(&net, &x, 0, RuleKind::Lrp0) else { return Ok(()) };
        let grad = net.gradient(&x, 0, 1).unwrap().gradient;
        let scale = 1.0 + x.iter().zip(&grad).fold(0.0f64, |m, (a, g)| m.max((a * g).abs()));
        prop_assert!(max_abs_diff(relevance.relevance(1), &hadamard(&grad, &x)) <= 1e-8 * scale);
    }

    #[test]
    fn hyperplane_roots_lie_on_the_hyperplane((w, b, a) in weights_and_input(), rule in prop_oneof![Just(RuleKind::W2), Just(RuleKind::ZPlus), Just(RuleKind::Gamma(0.5))]) {
        if let Ok(root) = find_root_linear(rule, &w, b, &a) {
            let scale = 1.0 + w.iter().zip(&a).map(|(x, y)| (x * y).abs()).sum::<f64>() + b.abs();
            let residual = w.iter().zip(&root.point).map(|(x, y)| x * y).sum::<f64>() + b;
            prop_assert!(residual.abs() <= 1e-9 * scale);
            prop_assert!((root.residual - residual).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn train_free_roots_redistribute_the_relevance((w, b, a) in weights_and_input(), r in -3.0f64..3.0, rule in prop_oneof![Just(RuleKind::W2), Just(RuleKind::ZPlus), Just(RuleKind::Gamma(2.0))]) {
        if let Ok(root) = find_root_train_free(rule, &w, b, &a, r) {
            let moved: f64 = w.iter().zip(a.iter().zip(&root.point)).map(|(wi, (ai, xi))| wi * (ai - xi)).sum();
            prop_assert!((moved - r).abs() <= 1e-9 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn closed_form_is_linear_in_upper_relevance((w, b, a) in weights_and_input(), r in -3.0f64..3.0, c in -4.0f64..4.0, rule in rule()) {
        let layer = one_layer(w, b);
        let (Ok(base), Ok(scaled)) = (propagate_closed_form(rule, &layer, &a, &[r]), propagate_closed_form(rule, &layer, &a, &[c * r])) else {
            return Ok(());
        };
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((c * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn gamma_approaches_zplus((w, b, a) in weights_and_input(), r in 0.1f64..3.0) {
        let a: Vec<f64> = a.iter().map(|v| v.abs() + 0.01).collect();
        // the gap shrinks like (negative mass) / (γ · positive mass)
        let (pos, neg) = w.iter().zip(&a).fold((0.0, 0.0), |(p, n), (wi, ai)| if *wi >= 0.0 { (p + wi * ai, n) } else { (p, n - wi * ai) });
        prop_assume!(pos >= neg && pos > 0.01);
        let layer = one_layer(w, b);
        let gamma = propagate_closed_form(RuleKind::Gamma(1e6), &layer, &a, &[r]).unwrap();
        let zplus = propagate_closed_form(RuleKind::ZPlus, &layer, &a, &[r]).unwrap();
        prop_assert!(max_abs_diff(&gamma, &zplus) <= 1e-5);
    }

    #[test]
    fn one_layer_algorithms_agree((w, b, x) in weights_and_input(), rule in prop_oneof![Just(RuleKind::W2), Just(RuleKind::ZPlus), Just(RuleKind::Gamma(1.0))]) {
        let net = Network::new(w.len(), vec![one_layer(w, b)]).unwrap();
        let train_free = relevance_train_free(&net, &x, 0, rule).unwrap();
        let Ok(recursive) = relevance_recursive(&net, &x, 0, &RootPolicy::RuleBased(rule)) else { return Ok(()) };
        prop_assert!(max_abs_diff(train_free.relevance(1), recursive.relevance(1)) <= 1e-10);
    }

    #[test]
    fn origin_roots_satisfy_the_locally_constant_identity(dims in dims(), seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 6)) {
        let net = generate_network_with(&dims, BiasMode::Zero, Activation::Relu, seed).unwrap();
        let x = &x[..dims[0]];
        let policy = RootPolicy::ConstantPerRegion(RegionRootTable::origin_for_input(&net, x).unwrap());
        if let Ok(report) = verify_prop2(&net, x, 0, &policy) {
            prop_assert!(report.max_error <= 1e-8);
        }
    }

    #[test]
    fn forged_relevance_has_the_target_shape(x in prop::collection::vec(-1.0f64..1.0, 5), w in prop::collection::vec(0.1f64..2.0, 5), target in prop::collection::vec(-1.0f64..1.0, 5)) {
        let sum: f64 = target.iter().sum();
        prop_assume!(sum.abs() > 0.1);
        let b = 1.0 - w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>().min(0.0);
        let net = Network::new(5, vec![one_layer(w, b)]).unwrap();
        let forged = forge_relevance(&net, &x, 0, &target).unwrap();
        let achieved: f64 = forged.achieved.iter().sum();
        for (a, r) in forged.achieved.iter().zip(&target) {
            prop_assert!((a / achieved - r / sum).abs() <= 1e-10);
        }
        prop_assert!(forged.root.residual.abs() <= 1e-9);
    }

    #[test]
    fn saliency_normalization_lands_in_unit_interval((net, x) in relu_case(), rule in rule()) {
        let Ok(trace) = relevance_train_free(&net, &x, 0, rule) else { return Ok(()) };
        let s = trace.saliency(true);
        for v in &s.values {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn rule_names_round_trip(rule in rule()) {
        let parsed: RuleKind = rule.to_string().parse().unwrap();
        prop_assert_eq!(parsed, rule);
    }

    #[test]
    fn network_json_round_trips((net, _x) in relu_case()) {
        prop_assert_eq!(Network::from_json_str(&net.to_json_string()).unwrap(), net);
    }

    #[test]
    fn config_json_round_trips(seed in any::<u64>(), dims in dims(), samples in 1usize..5000, min_output in 0.0f64..1.0, bias in bias_mode(), rules in prop::collection::vec(rule(), 1..5)) {
        let config = ExperimentConfig { seed, dims, n_samples: samples, min_output, bias_mode: bias, rules, ..ExperimentConfig::default() };
        prop_assert_eq!(ExperimentConfig::from_json_str(&config.to_json_string()).unwrap(), config);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn table1_is_deterministic_and_nested(seed in 0u64..1000) {
        let net = generate_network_with(&[6, 6, 6, 3], BiasMode::Unrestricted, Activation::Relu, seed).unwrap();
        let opts = Table1Options { samples: 40, min_output: 0.0, seed, ..Table1Options::default() };
        let Ok(first) = run_table1(&net, &RuleKind::defaults(), &opts) else { return Ok(()) };
        let second = run_table1(&net, &RuleKind::defaults(), &opts).unwrap();
        prop_assert_eq!(&first, &second);
        for report in &first {
            prop_assert_eq!(report.nesting_violations, 0);
            for f in [report.frac_same_region, report.frac_same_output, report.frac_same_fingerprint] {
                prop_assert!((0.0..=1.0).contains(&f));
            }
            prop_assert!(report.frac_same_fingerprint <= report.frac_same_region);
        }
    }

    #[test]
    fn traces_are_bitwise_deterministic((net, x) in relu_case(), rule in rule()) {
        let a = relevance_train_free(&net, &x, 0, rule).map(|t| t.to_json_value().to_string());
        let b = relevance_train_free(&net, &x, 0, rule).map(|t| t.to_json_value().to_string());
        prop_assert_eq!(a.ok(), b.ok());
    }
}
