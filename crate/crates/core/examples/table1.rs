//! Runs the root-region audit on a small sample and writes the CSV report to stdout.
//! Pass a sample count as the first argument (default 200).

use dtd_audit::diagnostics::run_table1;
use dtd_audit::experiment::{format_table1, generate_network, write_table1_csv, ExperimentConfig};

fn main() -> dtd_audit::Result<()> {
    let n_samples = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let config = ExperimentConfig {
        n_samples,
        ..ExperimentConfig::default()
    };
    let net = generate_network(&config)?;
    let reports = run_table1(&net, &config.rules, &config.table1_options())?;
    print!("{}", format_table1(&reports));
    println!();
    write_table1_csv(&reports, std::io::stdout().lock())?;
    Ok(())
}
