//! Command-line surface: simulate | fit | identify | gof | reproduce.
//!
//! Exit codes: 0 success, 2 validation error, 3 fit failure, 4 size-guard
//! refusal.

use crate::estimation::{em_fit, npmle_fit, FitConfig, FitResult};
use crate::gof::{run_gof, Alternative};
use crate::identification::{
    build_threeway, default_candidate_pool, find_full_rank_grid, joint_cdf, kruskal_rank,
    primitivity_exponent_check, rank_deficient_counterexample, recovery_error, required_window,
    spectral_recover, verify_kruskal_condition, RANK_TOL,
};
use crate::model::{
    simulate, validate_model, FiniteMixtureDensity, HmmModel, ObservationSeries, TransitionMatrix,
};
use crate::persist;
use crate::scenario::{reproduce, ScenarioSpec};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "mixhmm",
    about = "Hidden Markov models with Gaussian-mixture state densities: \
             simulation, estimation, identification audits and goodness-of-fit tests",
    version
)]
struct Cli {
    /// Worker threads for replication loops (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FitOpts {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
}

impl FitOpts {
    fn resolve(&self) -> Result<FitConfig> {
        let mut config = match &self.config {
            Some(path) => persist::read_config(path)?,
            None => FitConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a series from a built-in scenario or a model file.
    Simulate {
        /// Built-in scenario name (scenario-a | scenario-b).
        #[arg(long, conflicts_with = "model")]
        scenario: Option<String>,
        /// Model file to simulate from.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (header `t,y,state`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a K-state model to a data CSV.
    Fit {
        /// Input CSV (header `t,y` or `t,y,state`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        /// Estimator: gauss | two-comp | nonpar.
        #[arg(long, default_value = "gauss")]
        mode: String,
        #[command(flatten)]
        fit: FitOpts,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit a model's identifiability, or build the rank-deficiency
    /// counterexample.
    Identify {
        /// Model file to audit.
        #[arg(long, required_unless_present = "counterexample")]
        model: Option<PathBuf>,
        /// Build the rank-deficient pair instead, e.g. "delta=0.3 beta=0.6".
        #[arg(long)]
        counterexample: Option<String>,
    },
    /// Likelihood-ratio goodness-of-fit test with parametric-bootstrap
    /// calibration.
    Gof {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        /// Alternative family: two-comp | nonpar.
        #[arg(long, default_value = "nonpar")]
        alt: String,
        /// Bootstrap replications (minimum 100).
        #[arg(long = "B", default_value_t = 200)]
        b: usize,
        #[command(flatten)]
        fit: FitOpts,
        /// Output JSON report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun a scenario's estimator comparison and write its tables.
    Reproduce {
        #[arg(long)]
        scenario: String,
        /// Series length (default: the scenario's).
        #[arg(long)]
        n: Option<usize>,
        /// Replications (default: the scenario's).
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        fit: FitOpts,
        /// Output directory for the CSV tables.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments from the environment, runs, and maps errors to the
/// documented exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // Ignore failure: the global pool can only be initialized once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Guard(_) => 4,
                Error::FitFailure(_) | Error::NegativeLrt(_) => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            scenario,
            model,
            n,
            seed,
            out,
        } => cmd_simulate(scenario.as_deref(), model.as_deref(), n, seed, &out),
        Command::Fit {
            data,
            k,
            mode,
            fit,
            out,
        } => cmd_fit(&data, k, &mode, &fit.resolve()?, &out),
        Command::Identify {
            model,
            counterexample,
        } => cmd_identify(model.as_deref(), counterexample.as_deref()),
        Command::Gof {
            data,
            k,
            alt,
            b,
            fit,
            out,
        } => cmd_gof(&data, k, &alt, b, &fit.resolve()?, &out),
        Command::Reproduce {
            scenario,
            n,
            reps,
            fit,
            out,
        } => cmd_reproduce(&scenario, n, reps, &fit.resolve()?, &out),
    }
}

fn load_source_model(scenario: Option<&str>, model: Option<&Path>) -> Result<HmmModel> {
    match (scenario, model) {
        (Some(name), None) => ScenarioSpec::by_name(name)?.truth_model(),
        (None, Some(path)) => Ok(persist::read_model_file(path)?.0),
        _ => Err(Error::Invalid("give exactly one of --scenario and --model".into())),
    }
}

fn cmd_simulate(
    scenario: Option<&str>,
    model: Option<&Path>,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let model = load_source_model(scenario, model)?;
    let series = simulate(&model, n, seed)?;
    persist::write_series_csv(out, &series)?;
    println!("wrote {n} observations to {}", out.display());
    Ok(())
}

fn fit_by_mode(series: &ObservationSeries, k: usize, mode: &str, config: &FitConfig) -> Result<FitResult> {
    match mode {
        "gauss" => em_fit(series, k, &vec![1; k], config),
        "two-comp" | "twocomp" | "2-comp" => em_fit(series, k, &vec![2; k], config),
        "nonpar" | "nonparametric" => npmle_fit(series, k, config),
        other => Err(Error::Invalid(format!(
            "unknown mode '{other}' (expected gauss, two-comp or nonpar)"
        ))),
    }
}

fn config_echo(config: &FitConfig) -> Vec<(String, String)> {
    let mut echo = vec![
        ("max_iter".into(), config.max_iter.to_string()),
        ("rel_tol".into(), config.rel_tol.to_string()),
        ("restarts".into(), config.restarts.to_string()),
        ("component_gain_tol".into(), config.component_gain_tol.to_string()),
        ("max_components".into(), config.max_components.to_string()),
        ("seed".into(), config.seed.to_string()),
    ];
    if let Some(b) = config.theta_box {
        echo.push(("mean_lo".into(), b.mean_lo.to_string()));
        echo.push(("mean_hi".into(), b.mean_hi.to_string()));
        echo.push(("sd_lo".into(), b.sd_lo.to_string()));
        echo.push(("sd_hi".into(), b.sd_hi.to_string()));
    }
    echo
}

fn cmd_fit(data: &Path, k: usize, mode: &str, config: &FitConfig, out: &Path) -> Result<()> {
    let series = persist::read_series_csv(data)?;
    let fit = fit_by_mode(&series, k, mode, config)?;
    let meta = persist::ModelMeta {
        loglik: Some(fit.loglik),
        m_schedule: fit.m_schedule.clone(),
        permutation: fit.permutation.clone(),
        seed: config.seed,
        config_echo: config_echo(config),
    };
    persist::write_model_file(out, &fit.model, &meta)?;
    println!("mode            {mode}");
    println!("n               {}", series.n());
    println!("states          {k}");
    println!("log-likelihood  {:.6}", fit.loglik);
    println!("m schedule      {:?}", fit.m_schedule);
    println!("converged       {}", fit.converged);
    println!("iterations      {}", fit.loglik_trace.len());
    println!("model file      {}", out.display());
    Ok(())
}

fn cmd_identify(model_path: Option<&Path>, counterexample: Option<&str>) -> Result<()> {
    if let Some(params) = counterexample {
        return identify_counterexample(params);
    }
    let (model, _) = persist::read_model_file(model_path.expect("clap enforces presence"))?;
    let k = model.k();
    let report = validate_model(&model, RANK_TOL);
    println!("assumption checks");
    println!("  full rank          {} (smallest singular value {:.3e})",
        report.full_rank, report.smallest_singular_value);
    println!("  ergodic            {}", report.ergodic);
    println!("  densities distinct {}", report.densities_distinct);
    if let Some((i, j)) = report.indistinct_pair {
        println!("  indistinct pair    states {} and {}", i + 1, j + 1);
    }
    println!("window length T = {} for K = {k}", required_window(k));
    println!(
        "primitivity at t0 = K^2-2K+2: {}",
        primitivity_exponent_check(&model.gamma)?
    );
    if !report.all_satisfied() {
        return Err(Error::Invalid("model violates the identification assumptions".into()));
    }

    let t = (k - 1).max(1);
    let pool = default_candidate_pool(&model, t, 9)?;
    let grid = find_full_rank_grid(&model, t, &pool)?;
    println!("grid search: found a full-rank grid at T = {t}");
    let kr = verify_kruskal_condition(&model, &grid)?;
    println!(
        "Kruskal ranks: {} + {} + {} = {} (need >= {}) -> {}",
        kr.rank_m1_tilde,
        kr.rank_m2,
        kr.rank_m3,
        kr.sum(),
        kr.required,
        if kr.satisfied { "satisfied" } else { "NOT satisfied" }
    );
    if let Some(note) = &kr.note {
        println!("note: {note}");
    }
    let array = build_threeway(&model, &grid)?;
    let rec = spectral_recover(&array, k)?;
    let err = recovery_error(&model, &grid, &rec)?;
    println!("spectral round-trip max-abs recovery error: {err:.3e}");
    Ok(())
}

fn identify_counterexample(params: &str) -> Result<()> {
    let mut delta = None;
    let mut beta = None;
    for tok in params.split([' ', ',']).filter(|t| !t.is_empty()) {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("expected key=value, got '{tok}'")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Invalid(format!("bad number '{value}'")))?;
        match key {
            "delta" => delta = Some(v),
            "beta" => beta = Some(v),
            other => return Err(Error::Invalid(format!("unknown parameter '{other}'"))),
        }
    }
    let (delta, beta) = (
        delta.ok_or_else(|| Error::Invalid("missing delta".into()))?,
        beta.ok_or_else(|| Error::Invalid("missing beta".into()))?,
    );

    // Two-state full-rank ergodic base with three linearly independent
    // Gaussian densities.
    let base = TransitionMatrix::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]])?;
    let densities = vec![
        FiniteMixtureDensity::single(-3.0, 1.0)?,
        FiniteMixtureDensity::single(0.0, 1.0)?,
        FiniteMixtureDensity::single(3.0, 1.0)?,
    ];
    let (model_a, model_b) = rank_deficient_counterexample(&base, delta, beta, &densities)?;
    let p = beta / (1.0 + beta - delta);
    println!("rank-deficiency counterexample with delta={delta}, beta={beta} (p={p:.6})");
    let report = validate_model(&model_a, RANK_TOL);
    println!(
        "extended transition matrix: full rank = {} (smallest singular value {:.3e})",
        report.full_rank, report.smallest_singular_value
    );
    let rank = kruskal_rank(model_a.gamma.matrix(), RANK_TOL);
    println!("Kruskal rank of the extended matrix: {rank}");

    // Law equality on joint windows up to length 3.
    let pts = [-4.0, -1.0, 0.5, 2.0, 5.0];
    let mut max_dev: f64 = 0.0;
    for l in 1..=3usize {
        let mut idx = vec![0usize; l];
        loop {
            let thresholds: Vec<f64> = idx.iter().map(|&i| pts[i]).collect();
            let ca = joint_cdf(&model_a, &thresholds)?;
            let cb = joint_cdf(&model_b, &thresholds)?;
            max_dev = max_dev.max((ca - cb).abs());
            let mut pos = 0;
            loop {
                if pos == l {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] < pts.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == l {
                break;
            }
        }
    }
    println!("max joint-CDF deviation between the two models (windows up to 3): {max_dev:.3e}");
    println!("the two parameterizations are genuinely different but observationally equal");
    Ok(())
}

fn cmd_gof(
    data: &Path,
    k: usize,
    alt: &str,
    b: usize,
    config: &FitConfig,
    out: &Path,
) -> Result<()> {
    let alternative = Alternative::parse(alt)?;
    let series = persist::read_series_csv(data)?;
    let report = run_gof(&series, k, alternative, b, config)?;
    persist::write_gof_report(out, &report)?;
    println!("statistic  {:.4}", report.statistic);
    for d in &report.decisions {
        println!(
            "level {:.0}%: critical value {:.4} -> {}",
            d.level * 100.0,
            d.critical_value,
            if d.reject { "reject" } else { "retain" }
        );
    }
    println!("report     {}", out.display());
    Ok(())
}

fn cmd_reproduce(
    scenario: &str,
    n: Option<usize>,
    reps: Option<usize>,
    config: &FitConfig,
    out: &Path,
) -> Result<()> {
    let spec = ScenarioSpec::by_name(scenario)?;
    let n = n.unwrap_or(spec.n);
    let reps = reps.unwrap_or(spec.replications);
    std::fs::create_dir_all(out)?;
    let (rel, trans) = reproduce(&spec, n, reps, config)?;
    let rel_path = out.join("relative_errors.csv");
    let trans_path = out.join("transition_errors.csv");
    persist::write_relative_error_csv(&rel_path, &rel)?;
    persist::write_transition_error_csv(&trans_path, &trans)?;
    println!(
        "{}: {} replications at n={} ({} failed)",
        spec.name, rel.replications, n, rel.failed
    );
    println!("relative errors    {}", rel_path.display());
    println!("transition errors  {}", trans_path.display());
    Ok(())
}
