//! Trace files: one row per record, floats with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::controller::RunTrace;
use crate::error::Result;

pub fn header(n_u: usize, n_y: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=n_u).map(|i| format!("u_{i}")));
    cols.extend((1..=n_y).map(|i| format!("y_{i}")));
    cols.push("phi".into());
    cols.push("alpha".into());
    cols.extend((1..=n_u).map(|i| format!("w_{i}")));
    cols.extend((1..=n_u).map(|i| format!("S_eig_{i}")));
    cols.push("D_fro".into());
    cols.push("active".into());
    cols.push("adapted".into());
    cols.join(",")
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders the whole trace. Active constraint indices are joined by `;`.
pub fn trace_to_csv(trace: &RunTrace) -> String {
    let first = &trace.records[0];
    let mut out = header(first.u.len(), first.y.len());
    out.push('\n');
    for r in &trace.records {
        let mut fields = vec![r.k.to_string()];
        fields.extend(r.u.iter().map(|v| fmt_float(*v)));
        fields.extend(r.y.iter().map(|v| fmt_float(*v)));
        fields.push(fmt_float(r.phi));
        fields.push(fmt_float(r.alpha));
        fields.extend(r.w.iter().map(|v| fmt_float(*v)));
        fields.extend(r.s_eigs.iter().map(|v| fmt_float(*v)));
        fields.push(fmt_float(r.d_norm));
        let active: Vec<String> = r.active_constraints.iter().map(usize::to_string).collect();
        fields.push(active.join(";"));
        fields.push(u8::from(r.adapted).to_string());
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn write_trace(trace: &RunTrace, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, trace_to_csv(trace))?;
    Ok(())
}
