use mixhmm::*;
use rand::Rng;

fn random_stochastic<R: Rng>(r: &mut R, k: usize, floor: f64) -> TransitionMatrix {
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| r.gen_range(floor..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    TransitionMatrix::new(rows).unwrap()
}

fn random_identified_model<R: Rng>(r: &mut R, k: usize) -> HmmModel {
    loop {
        let gamma = random_stochastic(r, k, 0.1);
        let emissions: Vec<Emission> = (0..k)
            .map(|s| {
                let base = -6.0 + 12.0 * s as f64 / (k - 1) as f64;
                Emission::Finite(
                    FiniteMixtureDensity::single(base + r.gen_range(-1.0..1.0), r.gen_range(0.8..1.6)).unwrap(),
                )
            })
            .collect();
        let model = HmmModel::stationary(gamma, emissions).unwrap();
        if validate_model(&model, 1e-6).all_satisfied() {
            return model;
        }
    }
}

fn main() {
    let mut r = mixhmm::rng::master(0xacc3);
    for &k in &[2usize, 3] {
        for case in 0..50 {
            let model = random_identified_model(&mut r, k);
            let t = k - 1;
            let pool = default_candidate_pool(&model, t, 7).unwrap();
            let grid = find_full_rank_grid(&model, t, &pool).unwrap();
            let array = build_threeway(&model, &grid).unwrap();
            match spectral_recover(&array, k) {
                Ok(rec) => {
                    let err = recovery_error(&model, &grid, &rec).unwrap();
                    if err > 1e-8 { println!("k={k} case={case}: err {err:.3e}"); }
                }
                Err(e) => {
                    println!("k={k} case={case}: FAILED {e}");
                    for i in 0..k {
                        println!("  gamma row {i}: {:?}", (0..k).map(|j| model.gamma.get(i,j)).collect::<Vec<_>>());
                    }
                    for (i, em) in model.emissions.iter().enumerate() {
                        println!("  state {i}: mean {:.3}", em.mean());
                    }
                    println!("  probe {:?} singletons {:?}", grid.probe_singleton(), grid.singleton_points);
                }
            }
        }
    }
    println!("done");
}
