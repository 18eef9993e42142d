//! With one fixed root per region, the recursive relevance equals the relevance at the
//! root plus gradient times displacement. On a bias-free network `a_l / 2` stays in the
//! region of `a_l`, so it serves as the region's root.

use dtd_audit::diagnostics::verify_prop2;
use dtd_audit::engine::RegionRootTable;
use dtd_audit::experiment::{generate_network_with, sample_normal_inputs, BiasMode};
use dtd_audit::{Activation, RootPolicy};

fn main() -> dtd_audit::Result<()> {
    let net = generate_network_with(&[4, 6, 6, 2], BiasMode::Zero, Activation::Relu, 1)?;
    for x in sample_normal_inputs(4, 5, 1)? {
        let trace = net.forward(&x)?;
        let Some(class) = trace.output().iter().position(|&v| v > 0.0) else {
            continue;
        };
        let roots: Vec<Vec<f64>> = (1..=net.depth()).map(|l| trace.input(l).iter().map(|v| 0.5 * v).collect()).collect();
        let policy = RootPolicy::ConstantPerRegion(RegionRootTable::for_input(&net, &x, &roots)?);
        let report = verify_prop2(&net, &x, class, &policy)?;
        println!("class {class}  max error {:.2e}  R^1 {:.3?}", report.max_error, report.relevance);
    }
    Ok(())
}
