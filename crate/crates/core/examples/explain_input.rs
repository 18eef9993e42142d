//! Explains one input of a random ReLU network with every default rule and prints the
//! input relevance next to the conserved totals.

use dtd_audit::experiment::{generate_network_with, sample_inputs_seeded, BiasMode};
use dtd_audit::{relevance_train_free, Activation, RuleKind};

fn main() -> dtd_audit::Result<()> {
    let net = generate_network_with(&[6, 8, 8, 3], BiasMode::NonPositive, Activation::Relu, 7)?;
    let x = sample_inputs_seeded(&net, 1, 0.1, 0, 7)?.remove(0);
    println!("x      = {}", fmt(&x));
    println!("f_0(x) = {:.4}", net.output(&x)?[0]);
    for rule in RuleKind::defaults() {
        let trace = relevance_train_free(&net, &x, 0, rule)?;
        println!("\n{rule}");
        println!("  R^1     = {}", fmt(trace.relevance(1)));
        println!("  totals  = {}", fmt(&trace.totals()));
    }
    Ok(())
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:+.3}")).collect();
    format!("[{}]", parts.join(", "))
}
