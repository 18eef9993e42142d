//! Rebuilds last-layer relevance from first derivatives, including the Jacobian of the
//! root function, and shows how much is lost without that term.

use dtd_audit::diagnostics::verify_prop3;
use dtd_audit::experiment::{generate_network_with, sample_inputs_seeded, BiasMode};
use dtd_audit::{Activation, RootPolicy, RuleKind};

fn main() -> dtd_audit::Result<()> {
    let policy = RootPolicy::RuleBased(RuleKind::ZPlus);
    for seed in 0..5 {
        let net = generate_network_with(&[6, 6, 6], BiasMode::NonPositive, Activation::Relu, seed)?;
        let Ok(x) = sample_inputs_seeded(&net, 1, 0.1, 0, seed).map(|mut v| v.remove(0)) else {
            continue;
        };
        match (verify_prop3(&net, &x, 0, 2, &policy, false), verify_prop3(&net, &x, 0, 2, &policy, true)) {
            (Ok(full), _) if full.direct.iter().all(|&r| r == 0.0) => println!("seed {seed}: no relevance reaches layer 1"),
            (Ok(full), Ok(ablated)) => {
                println!("seed {seed}: gap {:.2e}, without root Jacobian {:.2e}", full.max_error, ablated.max_error)
            }
            (Err(e), _) | (_, Err(e)) => println!("seed {seed}: skipped ({e})"),
        }
    }
    Ok(())
}
