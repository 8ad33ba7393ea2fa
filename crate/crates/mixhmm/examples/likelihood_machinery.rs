//! The likelihood layer: the scaled forward recursion agrees with an
//! explicit sum over all K^n state paths, and the forward-backward pass
//! yields properly normalized smoothing probabilities.

use mixhmm::{
    brute_force_log_density, forward_backward, log_likelihood, simulate, Emission,
    FiniteMixtureDensity, HmmModel, TransitionMatrix,
};

fn main() -> mixhmm::Result<()> {
    let model = HmmModel::stationary(
        TransitionMatrix::new(vec![
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.3, 0.4],
        ])?,
        vec![
            Emission::Finite(FiniteMixtureDensity::single(-3.0, 1.0)?),
            Emission::Finite(FiniteMixtureDensity::single(0.0, 1.0)?),
            Emission::Finite(FiniteMixtureDensity::single(3.0, 1.0)?),
        ],
    )?;

    // Short series: the path sum over 3^8 paths is still exact and cheap.
    let series = simulate(&model, 8, 13)?;
    let forward = log_likelihood(&model, &series).value;
    let brute = brute_force_log_density(&model, &series)?;
    println!("scaled forward loglik: {forward:.12}");
    println!("path-sum loglik:       {brute:.12}");
    println!("difference:            {:.3e}", (forward - brute).abs());

    let post = forward_backward(&model, &series)?;
    println!("\nsmoothing probabilities P(X_t = k | Y_1..Y_n):");
    for t in 0..series.n() {
        let probs: Vec<String> = (0..3).map(|s| format!("{:.3}", post.gamma_at(t, s))).collect();
        let total: f64 = (0..3).map(|s| post.gamma_at(t, s)).sum();
        println!(
            "  t={t} y={:7.3}  [{}]  (sum {:.6})",
            series.obs[t],
            probs.join(", "),
            total
        );
    }
    Ok(())
}
