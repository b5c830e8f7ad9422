//! CSV/JSON artifacts for a scenario run.
//!
//! Floats are written with 17 significant digits so that a reloaded tube
//! reproduces every membership verdict bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ellipsoid::Ellipsoid;
use crate::error::FrsError;
use crate::frs::FrsTube;
use crate::multirotor::Vec3;
use crate::scenario::{RunArtifacts, SampleRecord, CONTAINMENT_SLACK};

const STATE: usize = 9;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Frs(#[from] FrsError),
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn tube_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..STATE).map(|i| format!("center_{i}")));
    h.extend((0..STATE * STATE).map(|i| format!("shape_{i}")));
    h.extend(["trace_inv", "logdet_inv", "step_ns"].map(String::from));
    h
}

pub fn samples_header() -> Vec<String> {
    let mut h = vec!["sample_id".to_string(), "t".to_string()];
    h.extend((0..STATE).map(|i| format!("x_{i}")));
    h.extend((0..3).map(|i| format!("d_{i}")));
    h.extend((0..3).map(|i| format!("dhat_{i}")));
    h.push("contained".into());
    h
}

/// Projected tube, one row per grid time; `shape` is the row-major matrix
/// `K` of `{x : (x - c)ᵀ K (x - c) <= 1}`.
pub fn write_tube(path: &Path, tube: &FrsTube) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(tube_header())?;
    for (k, set) in tube.projected.iter().enumerate() {
        let m = &tube.metrics[k];
        let mut row = vec![num(tube.times[k])];
        row.extend(set.center().iter().map(|v| num(*v)));
        let shape = set.shape();
        for i in 0..STATE {
            for j in 0..STATE {
                row.push(num(shape[(i, j)]));
            }
        }
        row.extend([num(m.trace_inv), num(m.logdet_inv), m.step_ns.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-channel half-widths of the projected sets around their centers.
pub fn write_bounds(path: &Path, tube: &FrsTube) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..STATE).map(|i| format!("halfwidth_{i}")));
    w.write_record(&header)?;
    for (k, set) in tube.projected.iter().enumerate() {
        let mut row = vec![num(tube.times[k])];
        row.extend(set.axis_extents()?.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &[SampleRecord]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(samples_header())?;
    for s in samples {
        let mut row = vec![s.sample_id.to_string(), num(s.t)];
        row.extend(s.x.iter().map(|v| num(*v)));
        row.extend(s.d.iter().chain(s.d_hat.iter()).map(|v| num(*v)));
        row.push(u8::from(s.contained).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A projected tube read back from CSV.
#[derive(Debug, Clone)]
pub struct LoadedTube {
    pub times: Vec<f64>,
    pub sets: Vec<Ellipsoid>,
}

impl LoadedTube {
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() < 1e-9)
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> ExportError {
    ExportError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_row(path: &Path, rec: &csv::StringRecord) -> Result<Vec<f64>, ExportError> {
    rec.iter()
        .map(|f| f.parse::<f64>().map_err(|e| malformed(path, format!("bad number {f:?}: {e}"))))
        .collect()
}

pub fn read_tube(path: &Path) -> Result<LoadedTube, ExportError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != tube_header() {
        return Err(malformed(path, "unexpected tube header"));
    }
    let mut out = LoadedTube {
        times: Vec::new(),
        sets: Vec::new(),
    };
    for rec in r.records() {
        let v = parse_row(path, &rec?)?;
        let center = DVector::from_column_slice(&v[1..1 + STATE]);
        let shape = DMatrix::from_row_slice(STATE, STATE, &v[1 + STATE..1 + STATE + STATE * STATE]);
        out.times.push(v[0]);
        out.sets.push(Ellipsoid::new(center, shape)?);
    }
    Ok(out)
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>, ExportError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != samples_header() {
        return Err(malformed(path, "unexpected samples header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec[0].parse().map_err(|e| malformed(path, format!("bad sample id: {e}")))?;
        let v = parse_row(path, &rec)?;
        out.push(SampleRecord {
            sample_id: id,
            t: v[1],
            x: nalgebra::SVector::<f64, 9>::from_column_slice(&v[2..11]),
            d: Vec3::from_column_slice(&v[11..14]),
            d_hat: Vec3::from_column_slice(&v[14..17]),
            contained: v[17] != 0.0,
        });
    }
    Ok(out)
}

/// Re-evaluates each sample against a reloaded tube and returns the indices
/// whose verdict differs from the recorded one.
pub fn verify_samples(tube: &LoadedTube, samples: &[SampleRecord]) -> Result<Vec<usize>, ExportError> {
    let mut mismatches = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let k = tube
            .index_of(s.t)
            .ok_or_else(|| malformed(Path::new("samples"), format!("time {} not on the tube grid", s.t)))?;
        let x = DVector::from_column_slice(s.x.as_slice());
        if tube.sets[k].contains(&x, CONTAINMENT_SLACK)? != s.contained {
            mismatches.push(i);
        }
    }
    Ok(mismatches)
}

/// `git describe --always --dirty`, or `"unknown"` outside a work tree.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn metrics_json(a: &RunArtifacts) -> Value {
    let tubes: Vec<Value> = a
        .tubes
        .iter()
        .map(|nt| {
            let t = &nt.tube;
            let last = t.metrics.last();
            json!({
                "label": nt.label,
                "mode": t.mode,
                "t0": t.times.first(),
                "steps": t.len().saturating_sub(1),
                "wall_ms": t.total_ns() as f64 / 1e6,
                "max_psi_deviation": t.steps.iter().map(|s| s.psi_deviation).fold(0.0, f64::max),
                "max_substeps": t.steps.iter().map(|s| s.substeps).max(),
                "final_trace_inv": last.map(|m| m.trace_inv),
                "final_logdet_inv": last.map(|m| m.logdet_inv),
            })
        })
        .collect();
    let hopf: Vec<Value> = a
        .hopf
        .iter()
        .map(|(label, h)| json!({ "label": label, "audit": h }))
        .collect();
    json!({
        "scenario": a.scenario,
        "config_hash": a.config_hash,
        "seed": a.seed,
        "git_describe": git_describe(),
        "sound": a.sound(),
        "samples_tube": a.samples_tube,
        "samples_baseline_tube": a.samples_baseline_tube,
        "tubes": tubes,
        "containment": a.containment,
        "hopf": hopf,
        "ordering": a.ordering,
        "dominance": a.dominance,
        "config": a.config,
    })
}

/// Writes every artifact of `a` into `out`, creating it if needed, and
/// returns the written paths.
pub fn export(a: &RunArtifacts, out: &Path) -> Result<Vec<PathBuf>, ExportError> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for nt in &a.tubes {
        let p = out.join(format!("tube_{}.csv", nt.label));
        write_tube(&p, &nt.tube)?;
        written.push(p);
        let p = out.join(format!("bounds_{}.csv", nt.label));
        write_bounds(&p, &nt.tube)?;
        written.push(p);
    }
    for (name, samples) in [("samples.csv", &a.samples), ("samples_baseline.csv", &a.samples_baseline)] {
        if !samples.is_empty() {
            let p = out.join(name);
            write_samples(&p, samples)?;
            written.push(p);
        }
    }
    let p = out.join("metrics.json");
    write_json(&p, &metrics_json(a))?;
    written.push(p);
    if let Some(s) = &a.stability {
        let p = out.join("stability.json");
        let mut v = serde_json::to_value(s)?;
        v["config_hash"] = json!(a.config_hash);
        v["seed"] = json!(a.seed);
        write_json(&p, &v)?;
        written.push(p);
    }
    Ok(written)
}

fn write_json(path: &Path, value: &Value) -> Result<(), ExportError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
