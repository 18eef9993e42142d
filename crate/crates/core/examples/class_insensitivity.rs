//! z+ saliency maps barely depend on the explained class or on the last layer's weights.

use dtd_audit::diagnostics::InsensitivityStudy;
use dtd_audit::RuleKind;

fn main() -> dtd_audit::Result<()> {
    let study = InsensitivityStudy {
        nets: 5,
        ..InsensitivityStudy::default()
    };
    for rule in [RuleKind::ZPlus, RuleKind::Lrp0] {
        let s = study.run(rule)?;
        println!(
            "{rule:<6} median cosine across classes {:.4}, after last-layer randomization {:.4}",
            s.median_cosine, s.median_randomized_cosine
        );
    }
    Ok(())
}
