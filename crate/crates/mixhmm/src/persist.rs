//! On-disk formats: observation CSV, structured-text model files, flat
//! key=value configs, JSON test reports, and the reproduction-table CSVs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! written and re-read model scores the same log-likelihood bit for bit.

use crate::estimation::FitConfig;
use crate::gof::GofReport;
use crate::model::{
    Emission, FiniteMixtureDensity, GaussianComponent, HmmModel, ObservationSeries,
    ProbabilityVector, TransitionMatrix,
};
use crate::scenario::{RelativeErrorTable, TransitionErrorTable};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Fit metadata carried alongside a model in its file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMeta {
    pub loglik: Option<f64>,
    pub m_schedule: Vec<usize>,
    pub permutation: Vec<usize>,
    pub seed: u64,
    /// Echo of the fitting configuration, verbatim key=value pairs.
    pub config_echo: Vec<(String, String)>,
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad {what}: '{s}'")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("bad {what}: '{s}'")))
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| parse_f64(v, what)).collect()
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes a series as CSV with header `t,y` or `t,y,state` (1-based times
/// and state labels).
pub fn write_series_csv(path: &Path, series: &ObservationSeries) -> Result<()> {
    let mut out = String::new();
    match &series.true_states {
        Some(states) => {
            out.push_str("t,y,state\n");
            for (t, (&y, &s)) in series.obs.iter().zip(states).enumerate() {
                writeln!(out, "{},{},{}", t + 1, y, s + 1).expect("string write");
            }
        }
        None => {
            out.push_str("t,y\n");
            for (t, &y) in series.obs.iter().enumerate() {
                writeln!(out, "{},{}", t + 1, y).expect("string write");
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<ObservationSeries> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty data file".into()))?
        .trim();
    let with_states = match header {
        "t,y" => false,
        "t,y,state" => true,
        other => {
            return Err(Error::Parse(format!(
                "unexpected header '{other}' (expected 't,y' or 't,y,state')"
            )))
        }
    };
    let mut obs = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if with_states { 3 } else { 2 };
        if fields.len() != expected {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                expected,
                fields.len()
            )));
        }
        obs.push(parse_f64(fields[1], "observation")?);
        if with_states {
            let s = parse_usize(fields[2], "state label")?;
            if s == 0 {
                return Err(Error::Parse(format!("line {}: state labels are 1-based", lineno + 2)));
            }
            states.push(s - 1);
        }
    }
    let mut series = ObservationSeries::from_obs(obs)?;
    if with_states {
        series.true_states = Some(states);
    }
    Ok(series)
}

/// Writes a model (finite-mixture emissions only) plus fit metadata as
/// versioned structured text.
pub fn write_model_file(path: &Path, model: &HmmModel, meta: &ModelMeta) -> Result<()> {
    let densities = model
        .finite_densities()
        .ok_or_else(|| Error::Invalid("only finite-mixture models can be persisted".into()))?;
    let k = model.k();
    let mut out = String::new();
    writeln!(out, "schema_version={MODEL_SCHEMA_VERSION}").unwrap();
    writeln!(out, "k={k}").unwrap();
    writeln!(out, "seed={}", meta.seed).unwrap();
    if let Some(ll) = meta.loglik {
        writeln!(out, "loglik={ll}").unwrap();
    }
    if !meta.m_schedule.is_empty() {
        writeln!(
            out,
            "m_schedule={}",
            meta.m_schedule.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
        )
        .unwrap();
    }
    if !meta.permutation.is_empty() {
        writeln!(
            out,
            "permutation={}",
            meta.permutation.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
        )
        .unwrap();
    }
    writeln!(
        out,
        "initial={}",
        join_f64(model.initial.as_slice())
    )
    .unwrap();
    for j in 0..k {
        let row: Vec<f64> = (0..k).map(|l| model.gamma.get(j, l)).collect();
        writeln!(out, "gamma_row_{}={}", j + 1, join_f64(&row)).unwrap();
    }
    for (s, f) in densities.iter().enumerate() {
        writeln!(out, "state_{}_weights={}", s + 1, join_f64(f.weights())).unwrap();
        let means: Vec<f64> = f.components().iter().map(|c| c.mean).collect();
        let sds: Vec<f64> = f.components().iter().map(|c| c.sd).collect();
        writeln!(out, "state_{}_means={}", s + 1, join_f64(&means)).unwrap();
        writeln!(out, "state_{}_sds={}", s + 1, join_f64(&sds)).unwrap();
    }
    for (key, value) in &meta.config_echo {
        writeln!(out, "config_{key}={value}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<(HmmModel, ModelMeta)> {
    let text = std::fs::read_to_string(path)?;
    let mut kv: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got '{line}'")))?;
        kv.push((key.trim().to_string(), value.trim().to_string()));
    }
    let get = |key: &str| -> Option<&str> {
        kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    };
    let version = parse_usize(
        get("schema_version").ok_or_else(|| Error::Parse("missing schema_version".into()))?,
        "schema_version",
    )?;
    if version != MODEL_SCHEMA_VERSION as usize {
        return Err(Error::Parse(format!("unsupported schema_version {version}")));
    }
    let k = parse_usize(get("k").ok_or_else(|| Error::Parse("missing k".into()))?, "k")?;

    let mut rows = Vec::with_capacity(k);
    for j in 0..k {
        let key = format!("gamma_row_{}", j + 1);
        let row = parse_f64_list(
            get(&key).ok_or_else(|| Error::Parse(format!("missing {key}")))?,
            "transition probability",
        )?;
        rows.push(row);
    }
    let gamma = TransitionMatrix::new(rows)?;
    let initial = match get("initial") {
        Some(v) => ProbabilityVector::new(parse_f64_list(v, "initial probability")?)?,
        None => ProbabilityVector::uniform(k),
    };

    let mut emissions = Vec::with_capacity(k);
    for s in 0..k {
        let weights = parse_f64_list(
            get(&format!("state_{}_weights", s + 1))
                .ok_or_else(|| Error::Parse(format!("missing state_{}_weights", s + 1)))?,
            "mixture weight",
        )?;
        let means = parse_f64_list(
            get(&format!("state_{}_means", s + 1))
                .ok_or_else(|| Error::Parse(format!("missing state_{}_means", s + 1)))?,
            "component mean",
        )?;
        let sds = parse_f64_list(
            get(&format!("state_{}_sds", s + 1))
                .ok_or_else(|| Error::Parse(format!("missing state_{}_sds", s + 1)))?,
            "component sd",
        )?;
        if means.len() != weights.len() || sds.len() != weights.len() {
            return Err(Error::Parse(format!("state {} component lists disagree in length", s + 1)));
        }
        let comps: Result<Vec<GaussianComponent>> = means
            .iter()
            .zip(&sds)
            .map(|(&m, &sd)| GaussianComponent::new(m, sd))
            .collect();
        emissions.push(Emission::Finite(FiniteMixtureDensity::new(weights, comps?)?));
    }

    let meta = ModelMeta {
        loglik: get("loglik").map(|v| parse_f64(v, "loglik")).transpose()?,
        m_schedule: match get("m_schedule") {
            Some(v) => v
                .split(',')
                .map(|x| parse_usize(x, "m_schedule entry"))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        },
        permutation: match get("permutation") {
            Some(v) => v
                .split(',')
                .map(|x| parse_usize(x, "permutation entry"))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        },
        seed: match get("seed") {
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::Parse(format!("bad seed: '{v}'")))?,
            None => 0,
        },
        config_echo: kv
            .iter()
            .filter_map(|(key, value)| {
                key.strip_prefix("config_")
                    .map(|k| (k.to_string(), value.clone()))
            })
            .collect(),
    };
    Ok((HmmModel::new(gamma, initial, emissions)?, meta))
}

/// Reads a flat key=value config file and overlays it on the defaults.
/// Unknown keys are rejected so typos cannot silently revert to defaults.
pub fn read_config(path: &Path) -> Result<FitConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = FitConfig::default();
    let mut theta: [Option<f64>; 4] = [None; 4];
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "max_iter" => config.max_iter = parse_usize(value, key)?,
            "rel_tol" => config.rel_tol = parse_f64(value, key)?,
            "restarts" => config.restarts = parse_usize(value, key)?,
            "component_gain_tol" => config.component_gain_tol = parse_f64(value, key)?,
            "max_components" => config.max_components = parse_usize(value, key)?,
            "seed" => {
                config.seed = value
                    .parse::<u64>()
                    .map_err(|_| Error::Parse(format!("bad seed: '{value}'")))?
            }
            "mean_lo" => theta[0] = Some(parse_f64(value, key)?),
            "mean_hi" => theta[1] = Some(parse_f64(value, key)?),
            "sd_lo" => theta[2] = Some(parse_f64(value, key)?),
            "sd_hi" => theta[3] = Some(parse_f64(value, key)?),
            other => return Err(Error::Parse(format!("unknown config key '{other}'"))),
        }
    }
    if theta.iter().any(|t| t.is_some()) {
        if let [Some(ml), Some(mh), Some(sl), Some(sh)] = theta {
            config.theta_box = Some(crate::model::ThetaBox::new(ml, mh, sl, sh)?);
        } else {
            return Err(Error::Parse(
                "a parameter box needs all of mean_lo, mean_hi, sd_lo, sd_hi".into(),
            ));
        }
    }
    Ok(config)
}

pub fn write_gof_report(path: &Path, report: &GofReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_gof_report(path: &Path) -> Result<GofReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("report parse: {e}")))
}

/// Relative-error table as CSV, one block per state mirroring the published
/// layout: a `y` row of points followed by one row per estimator.
pub fn write_relative_error_csv(path: &Path, table: &RelativeErrorTable) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# scenario={} n={} replications={} failed={}",
        table.scenario, table.n, table.replications, table.failed).unwrap();
    for (state, points) in table.points.iter().enumerate() {
        writeln!(out, "state,{}", state + 1).unwrap();
        writeln!(out, "y,{}", join_f64(points)).unwrap();
        for (e, name) in table.estimators.iter().enumerate() {
            let row: Vec<String> = table.values[e][state]
                .iter()
                .map(|v| format!("{v:.2}"))
                .collect();
            writeln!(out, "{},{}", name, row.join(",")).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Transition-error table as CSV: one row per origin state, one column per
/// estimator.
pub fn write_transition_error_csv(path: &Path, table: &TransitionErrorTable) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# scenario={} n={} replications={}",
        table.scenario, table.n, table.replications).unwrap();
    writeln!(out, "state,{}", table.estimators.join(",")).unwrap();
    let k = table.values.first().map_or(0, |v| v.len());
    for state in 0..k {
        let row: Vec<String> = table
            .values
            .iter()
            .map(|per_state| format!("{:.2}", per_state[state]))
            .collect();
        writeln!(out, "{},{}", state + 1, row.join(",")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}
