//! Checks the bundled analog networks against the data requirements of each
//! model variant, before and after cutting continuous tests back to their
//! reference thresholds.

use dtanet::dataset::{build_network_graph, validate_for_model, Dataset};
use dtanet::model::ModelVariant;
use dtanet::networks::{bundled_hcc, bundled_prostate};

fn report(label: &str, d: &Dataset) {
    let g = build_network_graph(d);
    println!(
        "{label}: {} studies, {} tests ({} continuous), {} edges, {} component(s)",
        d.studies().len(),
        d.tests().len(),
        d.tests().iter().filter(|t| t.is_continuous()).count(),
        g.edges.len(),
        g.components.len()
    );
    for v in ModelVariant::ALL {
        let r = validate_for_model(d, &g, v);
        let errors: Vec<String> = r.errors().map(|f| format!("{} {}", f.rule.label(), f.location)).collect();
        if errors.is_empty() {
            println!("  {v:<16} ok");
        } else {
            let more = if errors.len() > 3 { format!(" (+{} more)", errors.len() - 3) } else { String::new() };
            println!("  {v:<16} rejected: {}{more}", errors[..errors.len().min(3)].join("; "));
        }
    }
}

fn main() {
    for (name, d) in [("hcc", bundled_hcc()), ("prostate", bundled_prostate())] {
        report(name, &d);
        report(&format!("{name} at C* only"), &d.at_reference_thresholds());
        println!();
    }
}
