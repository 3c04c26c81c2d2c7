//! CSV and JSON writers. Floats in CSV carry 17 significant digits.

use std::fs;
use std::io;
use std::path::Path;

use mirrorplay::dynamics::DualTrajectory;
use mirrorplay::mdg::DifferentialGame;
use mirrorplay::stochastic::{Ensemble, EnsembleStats};
use serde::Serialize;

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Names `prefix_<i>_<j>` with 1-based player and component indices.
fn block_columns(prefix: &str, dims: &[usize]) -> Vec<String> {
    dims.iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..n).map(move |j| format!("{prefix}_{}_{}", i + 1, j + 1)))
        .collect()
}

pub fn trajectory_header(dims: &[usize]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for p in ["x", "y", "u"] {
        h.extend(block_columns(p, dims));
    }
    h.push("V_total".into());
    h.extend((1..=dims.len()).map(|i| format!("V_{i}")));
    h.extend((1..=dims.len()).map(|i| format!("c_{i}")));
    h
}

/// Writes every `stride`-th node of `traj`.
pub fn write_trajectory_csv(
    path: &Path,
    dg: &DifferentialGame<'_>,
    traj: &DualTrajectory,
    stride: usize,
) -> Result<usize, Box<dyn std::error::Error>> {
    let mirror = dg.mirror();
    let dims = mirror.dims();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(&dims))?;
    let mut rows = 0;
    for k in (0..traj.len()).step_by(stride) {
        let x = traj.state(k);
        let mut rec = vec![fmt_float(traj.times()[k])];
        rec.extend(x.iter().chain(traj.primal(k)).chain(traj.control(k)).map(|v| fmt_float(*v)));
        let values: Vec<f64> = (0..dims.len()).map(|i| dg.value(i, x)).collect::<Result<_, _>>()?;
        rec.push(fmt_float(values.iter().sum()));
        rec.extend(values.iter().map(|v| fmt_float(*v)));
        for i in 0..dims.len() {
            let c = dg.stage_cost(i, x, &traj.control(k)[mirror.block(i)])?;
            rec.push(fmt_float(c));
        }
        w.write_record(&rec)?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

pub fn write_ensemble_csv(path: &Path, dims: &[usize], stats: &EnsembleStats, stride: usize) -> io::Result<usize> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "mean_D".into(), "se_D".into()];
    header.extend(block_columns("mean_x", dims));
    w.write_record(&header)?;
    let mut rows = 0;
    for k in (0..stats.times.len()).step_by(stride) {
        let mut rec = vec![fmt_float(stats.times[k]), fmt_float(stats.mean[k]), fmt_float(stats.se[k])];
        rec.extend(stats.mean_state[k].iter().map(|v| fmt_float(*v)));
        w.write_record(&rec)?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

pub fn write_paths_csv(path: &Path, dims: &[usize], ensemble: &Ensemble, stride: usize) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["path".to_string(), "t".into()];
    header.extend(block_columns("x", dims));
    header.push("D".into());
    w.write_record(&header)?;
    for p in &ensemble.paths {
        for k in (0..ensemble.times.len()).step_by(stride) {
            let mut rec = vec![p.index.to_string(), fmt_float(ensemble.times[k])];
            rec.extend(p.state(k).iter().map(|v| fmt_float(*v)));
            rec.push(fmt_float(p.divergence[k]));
            w.write_record(&rec)?;
        }
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}
