//! CSV and JSON emission. Every file carries the config hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use actc_core::allocation::KktReport;
use actc_core::diffusion::Trajectory;
use actc_core::theory::TheoryReport;
use serde_json::{json, Value};

use crate::scenario::{ScenarioResult, Scenario};
use crate::{db, HarnessError};

/// Provenance stamped on every output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunStamp {
    pub config_hash: String,
    pub seed: u64,
    pub runs: usize,
}

pub fn trajectory_csv(traj: &Trajectory<f64>, stamp: &RunStamp, label: &str) -> String {
    let n = traj.n_agents();
    let mut out = String::new();
    writeln!(
        out,
        "# config_hash={} seed={} runs={} curve={label}",
        stamp.config_hash, stamp.seed, stamp.runs
    )
    .unwrap();
    out.push_str("iter,mse_net");
    for k in 0..n {
        write!(out, ",mse_agent_{k}").unwrap();
    }
    out.push_str(",bits_cum\n");
    for i in 0..traj.mse_net.len() {
        write!(out, "{i},{}", traj.mse_net[i]).unwrap();
        for v in &traj.agent_sq_err[i] {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{}", traj.bits_cum[i]).unwrap();
    }
    out
}

fn db_or_null(x: f64) -> Value {
    db(x).map(Value::from).unwrap_or(Value::Null)
}

pub fn theory_json(report: &TheoryReport<f64>) -> Value {
    let b = &report.bounds;
    json!({
        "mu": b.mu,
        "zeta": report.zeta,
        "nu": report.nu,
        "c": report.c,
        "delta_s": b.delta_s,
        "delta_omega": b.delta_omega,
        "lower": b.lower,
        "upper": b.upper,
        "lower_db": db_or_null(b.lower),
        "upper_db": db_or_null(b.upper),
        "decomposition": {
            "uncompressed": b.decomposition.uncompressed,
            "gradient_noise_compression": b.decomposition.gradient_noise_compression,
            "network_error_compression": b.decomposition.network_error_compression,
        },
    })
}

pub fn kkt_json(r: &KktReport<f64>) -> Value {
    json!({
        "stationarity": r.stationarity,
        "primal_feasibility": r.primal_feasibility,
        "dual_feasibility": r.dual_feasibility,
        "complementarity": r.complementarity,
    })
}

fn steady_summary(traj: &Trajectory<f64>) -> Value {
    let mse = traj.steady_state_mse();
    json!({
        "window_start": traj.steady_start,
        "steady_mse": mse,
        "steady_mse_db": db_or_null(mse),
        "final_bits": traj.bits_cum.last().copied().unwrap_or(0.0),
    })
}

fn stamped(stamp: &RunStamp, mut body: Value) -> Value {
    body["config_hash"] = Value::from(stamp.config_hash.clone());
    body["seed"] = Value::from(stamp.seed);
    body["runs"] = Value::from(stamp.runs);
    body
}

/// Writes all outputs of a scenario into `dir` and returns the written paths.
pub fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    result: &ScenarioResult,
    stamp: &RunStamp,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    let mut write = |name: &str, text: String| -> Result<(), HarnessError> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for curve in &result.curves {
        write(
            &format!("{}.csv", curve.label),
            trajectory_csv(&curve.result.mean, stamp, &curve.label),
        )?;
    }

    let mut theory = serde_json::Map::new();
    for curve in &result.curves {
        if let Some(t) = &curve.theory {
            theory.insert(curve.label.clone(), theory_json(t));
        }
    }
    let theory = stamped(stamp, json!({ "perron": scenario.perron, "curves": theory }));
    write("theory.json", pretty(&theory))?;

    if let Some(a) = &result.allocation {
        let directive = scenario.config.allocation.as_ref().expect("allocation outcome implies directive");
        let agree = a.online_x.iter().filter(|x| **x == a.oracle_x).count();
        let body = json!({
            "family": directive.family,
            "budget": directive.budget,
            "x_min": directive.x_min,
            "x_max": directive.x_max,
            "t_opt": directive.t_opt,
            "repair": directive.repair,
            "perron_true": scenario.perron,
            "perron_consensus": a.consensus_perron,
            "consensus_iterations": a.consensus_iterations,
            "distortions_true": scenario.distortions(),
            "distortion_estimates_mean": a.mean_estimates,
            "oracle": {
                "x_real": a.oracle.x_real,
                "x_int": a.oracle_x,
                "lambda0": a.oracle.lambda0,
                "objective_real": a.oracle.objective_real,
                "kkt": kkt_json(&a.oracle_kkt),
            },
            "online_matches_oracle": agree,
            "online_first_run": a.online_x.first(),
        });
        write("allocation.json", pretty(&stamped(stamp, body)))?;
    }

    let mut curves = serde_json::Map::new();
    for c in &result.curves {
        curves.insert(c.label.clone(), steady_summary(&c.result.mean));
    }
    let meta = stamped(
        stamp,
        json!({
            "scenario": scenario.config.name,
            "horizon": scenario.config.horizon,
            "agents": scenario.n(),
            "dim": scenario.dim(),
            "steady_fraction": scenario.config.steady_fraction,
            "curves": curves,
            "config": serde_json::to_value(&scenario.config).expect("config serializes"),
        }),
    );
    write("metadata.json", pretty(&meta))?;
    Ok(written)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}
