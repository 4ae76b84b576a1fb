//! Report persistence: CSV tables with a fixed column order, JSON
//! summaries, and the columnar field/trajectory formats.
//!
//! Everything rendered here is a pure function of the run results, so
//! equal-seed runs produce byte-identical files. Wall-clock metadata goes
//! into a separate `metadata.json`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::harness::sweep::{
    AblationReport, DiagnosticsReport, MuSummary, SweepReport, SweepRow,
};
use crate::spectral::{Field, SpectralSpace};
use std::sync::Arc;

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub const SWEEP_COLUMNS: &str = "mu,replica,seed,sup_err,int_err,total_err,sup_u_h2_sq,sup_v_h1_sq,int_u_h1_sq,int_v_h_sq,path_checksum,flagged";

fn push_row(out: &mut String, row: &SweepRow) {
    let _ = writeln!(
        out,
        "{},{},{:016x},{},{},{},{},{},{},{},{:016x},{}",
        fmt(row.mu),
        row.replica,
        row.seed,
        fmt(row.sup_err),
        fmt(row.int_err),
        fmt(row.total_err),
        fmt(row.sup_u_h2_sq),
        fmt(row.sup_v_h1_sq),
        fmt(row.int_u_h1_sq),
        fmt(row.int_v_h_sq),
        row.path_checksum,
        row.flagged
    );
}

/// Render the sweep rows as CSV (deterministic, timestamp-free).
pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SWEEP_COLUMNS}");
    for row in &report.rows {
        push_row(&mut out, row);
    }
    out
}

/// Ablation rows with an arm column prepended.
pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "arm,{SWEEP_COLUMNS}");
    for (arm, rows) in [("with_drift", &report.rows_with), ("without_drift", &report.rows_without)]
    {
        for row in rows {
            let mut line = String::new();
            push_row(&mut line, row);
            let _ = write!(out, "{arm},{line}");
        }
    }
    out
}

pub fn diagnostics_csv(report: &DiagnosticsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mu,replica,finite,sup_u_h_sq,sup_u_h1_sq,sup_u_h2_sq,sup_v_h_sq,sup_v_h1_sq,int_u_h1_sq,int_u_h2_sq,int_v_h_sq,int_v_h1_sq,int_cross,int_v_h_4th,sup_v_h_4th,sup_u_h1_4th"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt(r.mu),
            r.replica,
            r.finite,
            fmt(r.sup_u_h_sq),
            fmt(r.sup_u_h1_sq),
            fmt(r.sup_u_h2_sq),
            fmt(r.sup_v_h_sq),
            fmt(r.sup_v_h1_sq),
            fmt(r.int_u_h1_sq),
            fmt(r.int_u_h2_sq),
            fmt(r.int_v_h_sq),
            fmt(r.int_v_h1_sq),
            fmt(r.int_cross),
            fmt(r.int_v_h_4th),
            fmt(r.sup_v_h_4th),
            fmt(r.sup_u_h1_4th)
        );
    }
    out
}

#[derive(Serialize)]
pub struct SweepJson<'a> {
    pub config_hash: &'a str,
    pub pass: bool,
    pub failures: &'a [String],
    pub per_mu: &'a [MuSummary],
}

pub fn sweep_summary_json(report: &SweepReport) -> String {
    serde_json::to_string_pretty(&SweepJson {
        config_hash: &report.config_hash,
        pass: report.pass,
        failures: &report.failures,
        per_mu: &report.summaries,
    })
    .expect("summary serialization cannot fail")
}

#[derive(Serialize)]
pub struct AblationJson<'a> {
    pub config_hash: &'a str,
    pub pass: bool,
    pub drift_active: bool,
    pub gap: f64,
    pub iqr: f64,
    pub failures: &'a [String],
    pub per_mu: &'a [crate::harness::sweep::AblationSummary],
}

pub fn ablation_summary_json(report: &AblationReport) -> String {
    serde_json::to_string_pretty(&AblationJson {
        config_hash: &report.config_hash,
        pass: report.pass,
        drift_active: report.drift_active,
        gap: report.gap,
        iqr: report.iqr,
        failures: &report.failures,
        per_mu: &report.per_mu,
    })
    .expect("summary serialization cannot fail")
}

#[derive(Serialize)]
pub struct DiagnosticsJson<'a> {
    pub config_hash: &'a str,
    pub pass: bool,
    pub failures: &'a [String],
    pub per_mu: &'a [crate::harness::sweep::MuDiagnostics],
}

pub fn diagnostics_summary_json(report: &DiagnosticsReport) -> String {
    serde_json::to_string_pretty(&DiagnosticsJson {
        config_hash: &report.config_hash,
        pass: report.pass,
        failures: &report.failures,
        per_mu: &report.per_mu,
    })
    .expect("summary serialization cannot fail")
}

/// Columnar trajectory snapshots: a `#`-prefixed header carrying the run
/// identity, then one row per snapshot time with all spectral coefficients
/// in component-major order.
pub fn snapshots_csv(
    config_hash: &str,
    seed: u64,
    mu: f64,
    times: &[f64],
    fields: &[Field],
) -> String {
    let mut out = String::new();
    let space = fields[0].space();
    let (r, n) = (space.n_components(), space.n_modes());
    let _ = writeln!(
        out,
        "# config_hash={config_hash} seed={seed:016x} mu={} n_components={r} n_modes={n} length={}",
        fmt(mu),
        fmt(space.length())
    );
    let mut header = String::from("t");
    for c in 0..r {
        for i in 0..n {
            let _ = write!(header, ",c{c}_m{}", i + 1);
        }
    }
    let _ = writeln!(out, "{header}");
    for (t, f) in times.iter().zip(fields) {
        let mut line = fmt(*t);
        for c in 0..r {
            for i in 0..n {
                line.push(',');
                line.push_str(&fmt(f.coeffs()[(c, i)]));
            }
        }
        let _ = writeln!(out, "{line}");
    }
    out
}

/// One field as `component,mode,value` rows under a shape header.
pub fn field_to_string(f: &Field) -> String {
    let space = f.space();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# n_components={} n_modes={} length={}",
        space.n_components(),
        space.n_modes(),
        fmt(space.length())
    );
    let _ = writeln!(out, "component,mode,value");
    for c in 0..space.n_components() {
        for i in 0..space.n_modes() {
            let _ = writeln!(out, "{c},{},{}", i + 1, fmt(f.coeffs()[(c, i)]));
        }
    }
    out
}

pub fn field_from_str(space: &Arc<SpectralSpace>, text: &str) -> Result<Field> {
    let mut f = Field::zeros(space);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("component") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(SimError::InvalidConfig(format!("bad field row '{line}'")));
        }
        let c: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| SimError::InvalidConfig(format!("bad component in '{line}'")))?;
        let mode: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| SimError::InvalidConfig(format!("bad mode in '{line}'")))?;
        let v: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| SimError::InvalidConfig(format!("bad value in '{line}'")))?;
        if c >= space.n_components() || mode == 0 || mode > space.n_modes() {
            return Err(SimError::InvalidConfig(format!(
                "field row '{line}' outside the {}x{} space",
                space.n_components(),
                space.n_modes()
            )));
        }
        f.coeffs_mut()[(c, mode - 1)] = v;
    }
    if !f.is_finite() {
        return Err(SimError::InvalidConfig("field file contains non-finite values".into()));
    }
    Ok(f)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
