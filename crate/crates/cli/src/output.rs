//! Profile files: one CSV row per knob value and an optional sidecar of
//! raw log weights, one JSON record per line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::run::ProfilePoint;

pub const PROFILE_FILE: &str = "profile.csv";
pub const SIDECAR_FILE: &str = "log_weights.ndjson";

#[derive(Debug, Serialize)]
struct Row {
    knob: usize,
    estimate_nats: f64,
    stderr_nats: f64,
    n_ref: usize,
    n_inf: usize,
    seed: u64,
    t_ref_ms: f64,
    t_meta_ms: f64,
    t_inf_ms: f64,
    t_weight_ms: f64,
}

#[derive(Debug, Serialize)]
struct SidecarRecord<'a> {
    knob: usize,
    seed: u64,
    reference: &'a [f64],
    inference: &'a [f64],
}

fn millis(d: std::time::Duration, timings: bool) -> f64 {
    if timings {
        d.as_secs_f64() * 1e3
    } else {
        0.0
    }
}

/// Writes the profile (and sidecar) into `dir`, creating it if needed.
/// Returns the paths written.
pub fn write_profile(
    dir: &Path,
    points: &[ProfilePoint],
    timings: bool,
    sidecar: bool,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(PROFILE_FILE);
    let mut w = csv::Writer::from_path(&csv_path)?;
    for p in points {
        let e = &p.estimate;
        w.serialize(Row {
            knob: p.knob,
            estimate_nats: e.estimate,
            stderr_nats: e.stderr,
            n_ref: e.n_reference,
            n_inf: e.n_inference,
            seed: p.seed,
            t_ref_ms: millis(e.timings.reference, timings),
            t_meta_ms: millis(e.timings.meta, timings),
            t_inf_ms: millis(e.timings.inference, timings),
            t_weight_ms: millis(e.timings.weight, timings),
        })?;
    }
    w.flush()?;
    let mut written = vec![csv_path];
    if sidecar {
        let path = dir.join(SIDECAR_FILE);
        let mut out = BufWriter::new(File::create(&path)?);
        for p in points {
            let record = SidecarRecord {
                knob: p.knob,
                seed: p.seed,
                reference: &p.estimate.ref_log_weights,
                inference: &p.estimate.inf_log_weights,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        written.push(path);
    }
    Ok(written)
}
