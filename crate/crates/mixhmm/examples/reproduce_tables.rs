//! Small-scale reproduction of the published simulation tables: per-state
//! relative density errors and transition-probability errors for the
//! scenario's estimators, aggregated over seeded replications.
//!
//! The full tables use thousands of replications; ten at n = 250 finish in
//! well under a minute and already show the structure.

use mixhmm::{reproduce, FitConfig, ScenarioSpec};

fn main() -> mixhmm::Result<()> {
    let spec = ScenarioSpec::by_name("scenario-a")?;
    let config = FitConfig::with_seed(0);
    let (rel, trans) = reproduce(&spec, 250, 10, &config)?;

    println!(
        "{}: {} replications at n = {} ({} failed)",
        rel.scenario, rel.replications, rel.n, rel.failed
    );
    for (state, pts) in rel.points.iter().enumerate() {
        println!("state {}:", state + 1);
        let header: Vec<String> = pts.iter().map(|y| format!("{y:>8.2}")).collect();
        println!("  {:<8} {}", "y", header.join(" "));
        for (e, name) in rel.estimators.iter().enumerate() {
            let row: Vec<String> = rel.values[e][state]
                .iter()
                .map(|v| format!("{v:>8.2}"))
                .collect();
            println!("  {:<8} {}", name, row.join(" "));
        }
    }

    println!("\ntransition errors (x100, mean absolute per origin state):");
    for (e, name) in trans.estimators.iter().enumerate() {
        let row: Vec<String> = trans.values[e].iter().map(|v| format!("{v:.2}")).collect();
        println!("  {:<8} [{}]", name, row.join(", "));
    }
    Ok(())
}
