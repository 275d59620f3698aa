//! CSV and JSON artifacts.
//!
//! Floats are written as `{:.16e}` (17 significant digits) so that outputs
//! can be compared byte for byte.
//!
//! | file                 | columns                                      |
//! |----------------------|----------------------------------------------|
//! | `f_tNNNN.csv`        | `x, v, f`                                    |
//! | `field_tNNNN.csv`    | `x, rho, E`                                  |
//! | `summary.csv`        | `t, rho_norm, max_abs_e, q_meas, triple_norm`|
//! | `path_sample.csv`    | `s, X, V`                                    |
//! | `*_probes.csv`       | `x, value, weighted`                         |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{support_curve, ProbeRow};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::picard::SolutionHistory;

#[inline]
fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn csv_line(out: &mut String, vals: &[f64]) {
    for (k, &v) in vals.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        num(out, v);
    }
    out.push('\n');
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}

/// `f` at every `stride`-th time node (the last node is always written).
pub fn write_f_snapshots(dir: &Path, sol: &SolutionHistory, stride: usize) -> Result<Vec<PathBuf>> {
    let grid = sol.grid;
    let nv = grid.v_count;
    let stride = stride.max(1);
    let mut files = Vec::new();
    for m in 0..grid.time_count {
        if m % stride != 0 && m + 1 != grid.time_count {
            continue;
        }
        let mut text = String::with_capacity(grid.phase_len() * 72 + 16);
        text.push_str("x,v,f\n");
        for (k, &f) in sol.level(m).iter().enumerate() {
            csv_line(&mut text, &[grid.x(k / nv), grid.v(k % nv), f]);
        }
        files.push(write_text(dir, &format!("f_t{m:04}.csv"), &text)?);
    }
    Ok(files)
}

pub fn write_field_snapshots(dir: &Path, sol: &SolutionHistory) -> Result<Vec<PathBuf>> {
    let grid = sol.grid;
    let mut files = Vec::new();
    for m in 0..grid.time_count {
        let mut text = String::from("x,rho,E\n");
        let rho = &sol.densities[m].values;
        let e = &sol.field.snapshots[m].values;
        for j in 0..grid.x_count {
            csv_line(&mut text, &[grid.x(j), rho[j], e[j]]);
        }
        files.push(write_text(dir, &format!("field_t{m:04}.csv"), &text)?);
    }
    Ok(files)
}

/// One stored field snapshot read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub e: Vec<f64>,
}

pub fn read_field_csv(path: &Path) -> Result<FieldTable> {
    let text = fs::read_to_string(path)?;
    let mut t = FieldTable {
        x: Vec::new(),
        rho: Vec::new(),
        e: Vec::new(),
    };
    for (n, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidProfile(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if cols.len() != 3 {
            return Err(Error::InvalidProfile(format!("{}:{}: expected 3 columns", path.display(), n + 1)));
        }
        t.x.push(cols[0]);
        t.rho.push(cols[1]);
        t.e.push(cols[2]);
    }
    Ok(t)
}

/// Per-node summary rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t: f64,
    pub rho_norm: f64,
    pub max_abs_e: f64,
    pub q_meas: f64,
    pub triple_norm: f64,
}

pub fn summary_rows(sol: &SolutionHistory, execution: Execution) -> Result<Vec<SummaryRow>> {
    let q = support_curve(sol).envelope;
    let tn = sol.triple_norms(execution)?;
    Ok((0..sol.grid.time_count)
        .map(|m| SummaryRow {
            t: sol.grid.t(m),
            rho_norm: sol.densities[m].norm,
            max_abs_e: sol.field.snapshots[m].max_abs_nodes(),
            q_meas: q[m],
            triple_norm: tn[m],
        })
        .collect())
}

pub fn write_summary_csv(dir: &Path, rows: &[SummaryRow]) -> Result<PathBuf> {
    let mut text = String::from("t,rho_norm,max_abs_e,q_meas,triple_norm\n");
    for r in rows {
        csv_line(&mut text, &[r.t, r.rho_norm, r.max_abs_e, r.q_meas, r.triple_norm]);
    }
    write_text(dir, "summary.csv", &text)
}

pub fn write_path_csv(dir: &Path, name: &str, path: &[(f64, f64, f64)]) -> Result<PathBuf> {
    let mut text = String::from("s,X,V\n");
    for &(s, x, v) in path {
        csv_line(&mut text, &[s, x, v]);
    }
    write_text(dir, name, &text)
}

pub fn write_probes_csv(dir: &Path, name: &str, rows: &[ProbeRow]) -> Result<PathBuf> {
    let mut text = String::from("x,value,weighted\n");
    for r in rows {
        csv_line(&mut text, &[r.x, r.value, r.weighted]);
    }
    write_text(dir, name, &text)
}

pub fn write_table_csv(dir: &Path, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<PathBuf> {
    let mut text = format!("{header}\n");
    for r in rows {
        csv_line(&mut text, r);
    }
    write_text(dir, name, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub exit_code: i32,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Write `manifest.json` listing `files` (relative to `dir`, sorted) with
/// their checksums.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    exit_code: i32,
    files: &[PathBuf],
) -> Result<PathBuf> {
    let mut entries = files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned();
            Ok(ManifestEntry {
                path: rel,
                sha256: sha256_file(p)?,
                bytes: fs::metadata(p)?.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    entries.dedup_by(|a, b| a.path == b.path);
    let manifest = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config,
        exit_code,
        files: entries,
    };
    write_json(dir, MANIFEST_NAME, &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let mut s = String::new();
        num(&mut s, 0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn field_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![-1.0, 0.5, 1.0 / 3.0], vec![1.0, 0.25, -2.0 / 3.0]];
        let p = write_table_csv(dir.path(), "field_t0000.csv", "x,rho,E", &rows).unwrap();
        let t = read_field_csv(&p).unwrap();
        assert_eq!(t.e, vec![1.0 / 3.0, -2.0 / 3.0]);
        assert_eq!(t.x, vec![-1.0, 1.0]);
    }
}
