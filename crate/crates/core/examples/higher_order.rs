//! The second-order Taylor term vanishes on ReLU networks and not on smooth ones.

use dtd_audit::diagnostics::higher_order_term;
use dtd_audit::experiment::{generate_network_with, sample_normal_inputs, BiasMode};
use dtd_audit::Activation;

fn main() -> dtd_audit::Result<()> {
    for activation in [Activation::Relu, Activation::Softplus { beta: 1.0 }] {
        let net = generate_network_with(&[10, 10, 10, 10], BiasMode::Unrestricted, activation, 5)?;
        let mut terms = Vec::new();
        for x in sample_normal_inputs(10, 20, 5)? {
            let a2 = net.forward(&x)?.input(2).to_vec();
            let root: Vec<f64> = a2.iter().map(|v| 0.9 * v).collect();
            if let Ok(t) = higher_order_term(&net, &x, 0, 2, &root) {
                terms.push(t);
            }
        }
        terms.sort_by(f64::total_cmp);
        println!("{:<9} median second-order term {:.3e} over {} inputs", activation.name(), terms[terms.len() / 2], terms.len());
    }
    Ok(())
}
