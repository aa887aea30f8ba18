use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::config::ScenarioConfig;
use super::montecarlo::{AlgoSummary, RunResult, TrackEstimate};
use super::snr::SnrMap;

#[derive(Serialize)]
struct AlgoReport {
    max_rmse: Option<f64>,
    max_error_first_run: f64,
    coverage_first_run: f64,
    coverage_mean: f64,
    seconds: f64,
}

impl From<&AlgoSummary> for AlgoReport {
    fn from(s: &AlgoSummary) -> Self {
        Self {
            max_rmse: s.max_rmse,
            max_error_first_run: s.max_error_first_run,
            coverage_first_run: s.coverage_first_run,
            coverage_mean: s.coverage_mean,
            seconds: s.seconds,
        }
    }
}

/// Headline numbers written to `summary.json`.
#[derive(Serialize)]
struct Summary {
    runs: usize,
    seed: u64,
    pulses: usize,
    radars: usize,
    min_snr_db: f64,
    max_snr_db: f64,
    /// Indices with min-over-radars SNR below `LOW_SNR_DB`.
    low_snr_indices: usize,
    /// Of those, indices where MRBLaT's RMSE exceeds the KF's.
    low_snr_mrblat_worse: Option<usize>,
    nodes_agree: bool,
    bus_bytes_per_run: u64,
    mrblat: Option<AlgoReport>,
    kf: Option<AlgoReport>,
    wall_clock_seconds: f64,
}

/// SNR below which the baseline is expected to lose the target, dB.
pub const LOW_SNR_DB: f64 = 5.0;

/// Count of low-SNR indices, and of those where MRBLaT's RMSE is above the KF's.
pub fn low_snr_comparison(result: &RunResult) -> (usize, Option<usize>) {
    let low: Vec<usize> = (0..result.min_snr_db.len()).filter(|&n| result.min_snr_db[n] < LOW_SNR_DB).collect();
    let worse = match (&result.mrblat, &result.kf) {
        (Some(m), Some(k)) => match (&m.rmse, &k.rmse) {
            (Some(rm), Some(rk)) => Some(low.iter().filter(|&&n| rm[n] > rk[n]).count()),
            _ => None,
        },
        _ => None,
    };
    (low.len(), worse)
}

/// Writes the full experiment directory.
pub fn write_experiment(dir: &Path, cfg: &ScenarioConfig, result: &RunResult, map: &SnrMap) -> Result<()> {
    fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("config.json"))?), cfg)?;
    write_truth(&dir.join("truth.csv"), result)?;
    if result.mrblat.is_some() {
        let tracks: Vec<_> = result.runs.iter().filter_map(|r| r.mrblat.as_ref()).collect();
        write_tracks(&dir.join("mrblat_track.csv"), &tracks)?;
    }
    if result.kf.is_some() {
        let tracks: Vec<_> = result.runs.iter().filter_map(|r| r.kf.as_ref()).collect();
        write_tracks(&dir.join("kf_track.csv"), &tracks)?;
    }
    if result.runs.len() >= 2 {
        write_rmse(&dir.join("rmse.csv"), result)?;
    }
    write_snr_map(&dir.join("snr_map.csv"), map)?;
    write_bus_log(&dir.join("bus.jsonl"), result)?;
    let (low, worse) = low_snr_comparison(result);
    let summary = Summary {
        runs: result.runs.len(),
        seed: cfg.seed,
        pulses: result.truth.len(),
        radars: cfg.radars.len(),
        min_snr_db: result.min_snr_db.iter().cloned().fold(f64::INFINITY, f64::min),
        max_snr_db: result.min_snr_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        low_snr_indices: low,
        low_snr_mrblat_worse: worse,
        nodes_agree: result.nodes_agree(),
        bus_bytes_per_run: result.runs.first().map(|r| r.bus_bytes).unwrap_or(0),
        mrblat: result.mrblat.as_ref().map(AlgoReport::from),
        kf: result.kf.as_ref().map(AlgoReport::from),
        wall_clock_seconds: result.wall_clock_seconds,
    };
    let mut out = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut out, &summary)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn write_truth(path: &Path, result: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "x", "y", "vx", "vy", "min_snr_db"])?;
    for (n, (phi, snr)) in result.truth.iter().zip(&result.min_snr_db).enumerate() {
        w.serialize((n, phi.x, phi.y, phi.vx, phi.vy, snr))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per run and index: mean, covariance diagonal, and the position
/// cross term.
fn write_tracks(path: &Path, tracks: &[&TrackEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "n", "x", "y", "vx", "vy", "var_x", "var_y", "var_vx", "var_vy", "cov_xy"])?;
    for (run, t) in tracks.iter().enumerate() {
        for (n, (m, c)) in t.means.iter().zip(&t.covariances).enumerate() {
            w.serialize((run, n, m[0], m[1], m[2], m[3], c[(0, 0)], c[(1, 1)], c[(2, 2)], c[(3, 3)], c[(0, 1)]))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_rmse(path: &Path, result: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "min_snr_db", "rmse_mrblat", "rmse_kf", "coverage_mrblat", "coverage_kf"])?;
    let rmse = |s: &Option<AlgoSummary>, n: usize| s.as_ref().and_then(|a| a.rmse.as_ref()).map(|r| r[n]);
    let cov = |s: &Option<AlgoSummary>, n: usize| s.as_ref().map(|a| a.coverage_per_index[n]);
    for n in 0..result.truth.len() {
        w.serialize((
            n,
            result.min_snr_db[n],
            rmse(&result.mrblat, n),
            rmse(&result.kf, n),
            cov(&result.mrblat, n),
            cov(&result.kf, n),
        ))?;
    }
    w.flush()?;
    Ok(())
}

/// Long format, one row per grid point: `x, y, snr_r0.., snr_max`.
pub fn write_snr_map(path: &Path, map: &SnrMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend((0..map.per_radar.len()).map(|k| format!("snr_r{k}")));
    header.push("snr_max".into());
    w.write_record(&header)?;
    for (iy, y) in map.ys.iter().enumerate() {
        for (ix, x) in map.xs.iter().enumerate() {
            let i = map.index(ix, iy);
            let mut row = vec![x.to_string(), y.to_string()];
            row.extend(map.per_radar.iter().map(|m| m[i].to_string()));
            row.push(map.combined_max[i].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Bus traffic of the first run, one JSON object per broadcast.
fn write_bus_log(path: &Path, result: &RunResult) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(run) = result.runs.first() {
        for rec in &run.bus_log {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}
