use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use sof_core::landscape::ScanReport;
use sof_core::DescentTrace;

use crate::config::TraceFormat;
use crate::error::{CliError, Result};

/// Writes `contents` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let context = || format!("writing {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(context(), e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(context(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(context(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(context(), e.error))?;
    Ok(())
}

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn opt(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        num(out, v);
    }
}

/// `iter,J,grad_fro,rho,eta`, plus `est_J,est_gradnorm` when the trace
/// carries estimates. Floats use 17 significant digits.
pub fn trace_csv(trace: &DescentTrace) -> String {
    let estimated = trace.records.iter().any(|r| r.est_j.is_some() || r.est_grad_fro.is_some());
    let mut out = String::from("iter,J,grad_fro,rho,eta");
    if estimated {
        out.push_str(",est_J,est_gradnorm");
    }
    out.push('\n');
    for r in &trace.records {
        write!(out, "{},", r.iter).unwrap();
        for (i, v) in [r.j, r.grad_fro, r.rho, r.eta].into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            num(&mut out, v);
        }
        if estimated {
            out.push(',');
            opt(&mut out, r.est_j);
            out.push(',');
            opt(&mut out, r.est_grad_fro);
        }
        out.push('\n');
    }
    out
}

pub fn export_trace(trace: &DescentTrace, path: &Path, format: TraceFormat) -> Result<()> {
    if trace.records.is_empty() {
        return Err(CliError::field("trace", "cannot export an empty trace"));
    }
    let body = match format {
        TraceFormat::Csv => trace_csv(trace).into_bytes(),
        TraceFormat::Json => {
            let mut s = serde_json::to_string_pretty(trace).expect("trace serializes");
            s.push('\n');
            s.into_bytes()
        }
    };
    write_atomic(path, &body)
}

/// `k1,k2,stabilizing,J,gradnorm`; `k2` is empty on a one-axis grid and the
/// value columns are empty for unstabilizing cells.
pub fn scan_csv(report: &ScanReport) -> String {
    let mut out = String::from("k1,k2,stabilizing,J,gradnorm\n");
    for cell in &report.cells {
        num(&mut out, cell.coords[0]);
        out.push(',');
        opt(&mut out, cell.coords.get(1).copied());
        write!(out, ",{},", cell.stabilizing).unwrap();
        opt(&mut out, cell.j);
        out.push(',');
        opt(&mut out, cell.gradnorm);
        out.push('\n');
    }
    out
}
