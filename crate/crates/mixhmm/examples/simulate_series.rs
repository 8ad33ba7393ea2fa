//! Build a small hidden Markov model by hand, simulate a series from it and
//! summarise what came out. Identical (model, n, seed) always reproduces the
//! same series bit for bit.

use mixhmm::{
    simulate, stationary_distribution, Emission, FiniteMixtureDensity, HmmModel, TransitionMatrix,
};

fn main() -> mixhmm::Result<()> {
    let gamma = TransitionMatrix::new(vec![
        vec![0.5, 0.25, 0.25],
        vec![0.4, 0.4, 0.2],
        vec![0.2, 0.2, 0.6],
    ])?;
    let pi = stationary_distribution(&gamma)?;
    println!("stationary distribution: {:?}", pi.as_slice());

    let emissions = vec![
        Emission::Finite(FiniteMixtureDensity::single(-7.0, 1.5)?),
        Emission::Finite(FiniteMixtureDensity::new(
            vec![0.5, 0.5],
            vec![
                mixhmm::GaussianComponent::new(-0.5, 1.0)?,
                mixhmm::GaussianComponent::new(1.5, 2.0)?,
            ],
        )?),
        Emission::Finite(FiniteMixtureDensity::single(10.0, 1.5)?),
    ];
    let model = HmmModel::stationary(gamma, emissions)?;

    let n = 2000;
    let series = simulate(&model, n, 42)?;
    let states = series.true_states.as_ref().expect("simulate records states");

    let mut counts = [0usize; 3];
    for &s in states {
        counts[s] += 1;
    }
    println!("simulated n = {n}, seed = {}", series.seed);
    for (k, c) in counts.iter().enumerate() {
        println!(
            "state {}: visited {:5} times ({:.3} observed vs {:.3} stationary)",
            k + 1,
            c,
            *c as f64 / n as f64,
            pi.get(k)
        );
    }

    let (mean, sd) = mixhmm::numeric::mean_sd(&series.obs);
    println!("marginal mean {mean:.3}, sd {sd:.3}");
    println!("first ten observations: {:?}", &series.obs[..10]);
    Ok(())
}
