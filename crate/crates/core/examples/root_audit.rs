//! Checks every root of one train-free trace: does it share the input's activation
//! pattern, gradient and output?

use dtd_audit::diagnostics::check_root_region;
use dtd_audit::experiment::{generate_network, sample_inputs, ExperimentConfig};
use dtd_audit::{relevance_train_free, RuleKind};

fn main() -> dtd_audit::Result<()> {
    let config = ExperimentConfig::default();
    let net = generate_network(&config)?;
    let x = sample_inputs(&net, &config)?.remove(0);
    let trace = relevance_train_free(&net, &x, 0, RuleKind::ZPlus)?;
    println!("layer neuron  pattern  gradient  output  output_gap");
    for record in &trace.roots {
        let c = check_root_region(&net, &x, 0, &record.root)?;
        println!(
            "{:>5} {:>6}  {:>7}  {:>8}  {:>6}  {:.3e}",
            record.root.layer, record.root.neuron, c.same_fingerprint, c.same_gradient, c.same_output, c.output_gap
        );
    }
    Ok(())
}
