//! Parametric-bootstrap goodness-of-fit test of the Gaussian-emissions null
//! against a mixture alternative, run twice: once on data the null describes
//! correctly, once on data it does not.

use mixhmm::{
    gof::run_gof, simulate, Alternative, Emission, FiniteMixtureDensity, FitConfig,
    GaussianComponent, HmmModel, TransitionMatrix,
};

fn report(label: &str, rep: &mixhmm::GofReport) {
    println!("{label}: statistic {:.3}", rep.statistic);
    for d in &rep.decisions {
        println!(
            "  level {:.0}%: critical value {:7.3} -> {}",
            d.level * 100.0,
            d.critical_value,
            if d.reject { "reject" } else { "retain" }
        );
    }
}

fn main() -> mixhmm::Result<()> {
    let gamma = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.15, 0.85]])?;
    let config = FitConfig::with_seed(3);
    let (n, b) = (300, 100);

    // Data from a null model: Gaussian emissions.
    let null_truth = HmmModel::stationary(
        gamma.clone(),
        vec![
            Emission::Finite(FiniteMixtureDensity::single(-2.0, 1.0)?),
            Emission::Finite(FiniteMixtureDensity::single(2.0, 1.0)?),
        ],
    )?;
    let series = simulate(&null_truth, n, 5)?;
    let rep = run_gof(&series, 2, Alternative::TwoComp, b, &config)?;
    report("Gaussian truth", &rep);

    // Data from a clearly bimodal state-1 emission.
    let alt_truth = HmmModel::stationary(
        gamma,
        vec![
            Emission::Finite(FiniteMixtureDensity::new(
                vec![0.5, 0.5],
                vec![
                    GaussianComponent::new(-5.0, 0.8)?,
                    GaussianComponent::new(-1.0, 0.8)?,
                ],
            )?),
            Emission::Finite(FiniteMixtureDensity::single(4.0, 1.0)?),
        ],
    )?;
    let series = simulate(&alt_truth, n, 6)?;
    let rep = run_gof(&series, 2, Alternative::TwoComp, b, &config)?;
    report("mixture truth", &rep);
    Ok(())
}
