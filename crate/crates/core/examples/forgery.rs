//! A hand-picked root on the neuron's hyperplane makes a one-layer network attribute
//! any chosen pattern.

use dtd_audit::diagnostics::forge_relevance;
use dtd_audit::{Activation, LayerSpec, Network};

fn main() -> dtd_audit::Result<()> {
    let layer = LayerSpec::new(vec![vec![0.8, -0.5, 1.2, 0.3]], vec![-0.2], Activation::Relu)?;
    let net = Network::new(4, vec![layer])?;
    let x = [1.0, -1.0, 0.5, 2.0];
    let h = net.output(&x)?[0];
    for target in [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [1.0, -1.0, 1.0, 0.5]] {
        let forged = forge_relevance(&net, &x, 0, &target)?;
        println!(
            "target {target:?} -> relevance {:?} (sum {:.3} = h {:.3}, root residual {:.1e})",
            forged.achieved.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
            forged.achieved.iter().sum::<f64>(),
            h,
            forged.root.residual
        );
    }
    Ok(())
}
