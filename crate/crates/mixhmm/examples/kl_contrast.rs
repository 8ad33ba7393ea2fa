//! The Kullback-Leibler contrast (L0 - L)/n between two HMM laws: exactly
//! zero against the same model, numerically zero against a label swap of it,
//! and strictly positive against anything else. This is the population
//! quantity whose maximization the likelihood methods implement.

use mixhmm::{
    kl_divergence_estimate, Emission, FiniteMixtureDensity, HmmModel, TransitionMatrix,
};

fn main() -> mixhmm::Result<()> {
    let truth = HmmModel::stationary(
        TransitionMatrix::new(vec![vec![0.8, 0.2], vec![0.3, 0.7]])?,
        vec![
            Emission::Finite(FiniteMixtureDensity::single(-2.0, 1.0)?),
            Emission::Finite(FiniteMixtureDensity::single(2.0, 1.2)?),
        ],
    )?;
    let n = 100_000;

    let same = kl_divergence_estimate(&truth, &truth, n, 1)?;
    println!("same model:        {same:.6} (exactly zero)");

    let swapped = truth.permuted(&[1, 0])?;
    let swap = kl_divergence_estimate(&truth, &swapped, n, 1)?;
    println!("label swap:        {swap:.6} (zero up to Monte Carlo noise)");

    let perturbed = HmmModel::stationary(
        TransitionMatrix::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]])?,
        vec![
            Emission::Finite(FiniteMixtureDensity::single(-2.2, 1.0)?),
            Emission::Finite(FiniteMixtureDensity::single(2.0, 1.2)?),
        ],
    )?;
    let contrast = kl_divergence_estimate(&truth, &perturbed, n, 1)?;
    println!("perturbed model:   {contrast:.6} (strictly positive)");
    Ok(())
}
