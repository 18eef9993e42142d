//! Runs the invariant suite, then again with the bias-dropping fault injected.

use dtd_audit::experiment::ExperimentConfig;
use dtd_audit::verify::{run_verify, Fault, VerifyOptions};

fn main() -> dtd_audit::Result<()> {
    let config = ExperimentConfig {
        n_samples: 100,
        ..ExperimentConfig::default()
    };
    for fault in [None, Some(Fault::Lrp0NoBias)] {
        let report = run_verify(&config, &VerifyOptions { fault, ..VerifyOptions::default() })?;
        println!("fault {fault:?}: passed = {}", report.passed);
        for check in report.checks.iter().filter(|c| !c.passed) {
            println!("  failed {}", check.name);
        }
    }
    Ok(())
}
