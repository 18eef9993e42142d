//! Compares the recursive Deep Taylor engine with the train-free rules. They agree on one
//! layer and drift apart once roots move with the input on deeper networks.

use dtd_audit::experiment::{generate_network_with, sample_normal_inputs, BiasMode};
use dtd_audit::vecops::max_abs_diff;
use dtd_audit::{relevance_recursive, relevance_train_free, Activation, RootPolicy, RuleKind};

fn main() -> dtd_audit::Result<()> {
    for dims in [vec![5, 4], vec![5, 8, 4], vec![5, 8, 8, 4]] {
        let net = generate_network_with(&dims, BiasMode::Unrestricted, Activation::Relu, 3)?;
        // Explain the strongest logit of the first input that activates any output.
        let Some((x, class)) = sample_normal_inputs(5, 100, 3)?.into_iter().find_map(|x| {
            let out = net.output(&x).ok()?;
            let (class, &top) = out.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
            (top > 0.0).then_some((x, class))
        }) else {
            continue;
        };
        print!("dims {dims:?} class {class}:");
        for rule in [RuleKind::W2, RuleKind::ZPlus] {
            let free = relevance_train_free(&net, &x, class, rule)?;
            let rec = relevance_recursive(&net, &x, class, &RootPolicy::RuleBased(rule))?;
            print!("  {rule} gap {:.2e}", max_abs_diff(free.relevance(1), rec.relevance(1)));
        }
        println!();
    }
    Ok(())
}
