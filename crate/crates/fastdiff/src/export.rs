//! CSV and JSON output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use fastdiff_core::parabolic::Trajectory;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: [&str; 7] = ["t", "sup_u", "sup_v", "ls_u", "lr_v", "res_u", "res_v"];

/// Writes one row per recorded time. The residual columns are empty on the first row.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for i in 0..traj.len() {
        let res = |v: &[f64]| {
            if i == 0 {
                String::new()
            } else {
                v[i].to_string()
            }
        };
        w.write_record([
            traj.times[i].to_string(),
            traj.sup_u[i].to_string(),
            traj.sup_v[i].to_string(),
            traj.ls_u[i].to_string(),
            traj.lr_v[i].to_string(),
            res(&traj.energy_residual_u),
            res(&traj.energy_residual_v),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_csv_string(traj: &Trajectory) -> String {
    let mut buf = Vec::new();
    write_trajectory_csv(traj, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn save_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_trajectory_csv(traj, file).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => HarnessError::io(path, e),
        other => HarnessError::Config(format!("csv: {other:?}")),
    })
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = to_json_string(value);
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
