//! CSV writers for estimates, bootstrap RMSE, simulation RRMSE and the fit trace.
//!
//! Non-finite numbers are written as empty cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::bootstrap::AreaRmse;
use crate::error::{Result, SaeError};
use crate::gibbs::EbEstimate;
use crate::mcem::BLOCKS;
use crate::mcem::TraceRecord;
use crate::simulate::RrmseTable;

fn cell(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn with_file(path: &Path, body: impl FnOnce(&mut csv::Writer<BufWriter<File>>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| SaeError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
    body(&mut w)?;
    w.flush().map_err(|e| SaeError::io(path, e))
}

/// One estimate row plus the naive mean (`None` out of sample).
pub fn write_estimates<W: Write>(out: W, rows: &[(EbEstimate, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_estimate_rows(&mut w, rows)?;
    w.flush().map_err(|e| SaeError::io("<estimates>", e))
}

fn write_estimate_rows<W: Write>(w: &mut csv::Writer<W>, rows: &[(EbEstimate, Option<f64>)]) -> Result<()> {
    w.write_record([
        "area_id",
        "in_sample",
        "mean_eb",
        "gini_eb",
        "mean_naive",
        "draws_used",
        "clamped_draws",
    ])?;
    for (e, naive) in rows {
        w.write_record([
            e.area_id.clone(),
            e.in_sample.to_string(),
            cell(e.mean_eb),
            cell(e.gini_eb),
            naive.map(cell).unwrap_or_default(),
            e.draws_used.to_string(),
            e.clamped_draws.to_string(),
        ])?;
    }
    Ok(())
}

pub fn save_estimates(path: impl AsRef<Path>, rows: &[(EbEstimate, Option<f64>)]) -> Result<()> {
    with_file(path.as_ref(), |w| write_estimate_rows(w, rows))
}

fn write_rmse_rows<W: Write>(w: &mut csv::Writer<W>, names: &[&str], rows: &[AreaRmse]) -> Result<()> {
    let mut header = vec!["area_id".to_string(), "n".to_string()];
    header.extend(names.iter().map(|n| format!("rmse_{n}")));
    header.push("B".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.area_id.clone(), r.n.to_string()];
        rec.extend(r.rmse.iter().map(|&v| cell(v)));
        rec.push(r.replicates.to_string());
        w.write_record(&rec)?;
    }
    Ok(())
}

/// Bootstrap RMSE with one `rmse_<name>` column per estimator.
pub fn write_rmse<W: Write>(out: W, names: &[&str], rows: &[AreaRmse]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_rmse_rows(&mut w, names, rows)?;
    w.flush().map_err(|e| SaeError::io("<rmse>", e))
}

pub fn save_rmse(path: impl AsRef<Path>, names: &[&str], rows: &[AreaRmse]) -> Result<()> {
    with_file(path.as_ref(), |w| write_rmse_rows(w, names, rows))
}

fn write_rrmse_rows<W: Write>(w: &mut csv::Writer<W>, table: &RrmseTable) -> Result<()> {
    let mut header = vec!["area_index".to_string(), "n".to_string()];
    header.extend(table.estimators.iter().map(|n| format!("rrmse_{n}")));
    header.push("G".into());
    header.push("R".into());
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.area_index.to_string(), r.n.to_string()];
        rec.extend(r.rrmse.iter().map(|&v| cell(v)));
        rec.push(table.groups.to_string());
        rec.push(table.replicates.to_string());
        w.write_record(&rec)?;
    }
    Ok(())
}

pub fn write_rrmse<W: Write>(out: W, table: &RrmseTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_rrmse_rows(&mut w, table)?;
    w.flush().map_err(|e| SaeError::io("<rrmse>", e))
}

pub fn save_rrmse(path: impl AsRef<Path>, table: &RrmseTable) -> Result<()> {
    with_file(path.as_ref(), |w| write_rrmse_rows(w, table))
}

/// Long format: one row per EM iteration and monitored block. `e_k` is empty
/// until both convergence windows are filled.
fn write_trace_rows<W: Write>(w: &mut csv::Writer<W>, trace: &[TraceRecord]) -> Result<()> {
    let Some(first) = trace.first() else {
        w.write_record(["iter", "block", "e_k", "ess_q10", "ess_q50", "ess_q90"])?;
        return Ok(());
    };
    let p = first.psi.p();
    let mut header: Vec<String> = ["iter", "block", "e_k", "ess_q10", "ess_q50", "ess_q90"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=p).map(|j| format!("beta_{j}")));
    header.extend(["tau2", "lambda", "kappa"].iter().map(|s| s.to_string()));
    header.extend((1..=p).map(|j| format!("gamma_{j}")));
    w.write_record(&header)?;
    for rec in trace {
        let psi = &rec.psi;
        let mut tail: Vec<String> = vec![cell(rec.ess_q10), cell(rec.ess_q50), cell(rec.ess_q90)];
        tail.extend(psi.beta.iter().map(|&v| cell(v)));
        tail.extend([cell(psi.tau2), cell(psi.lambda), cell(psi.kappa)]);
        tail.extend(psi.gamma.iter().map(|&v| cell(v)));
        for (k, block) in BLOCKS.iter().enumerate() {
            let e = rec.errors.map(|e| cell(e.values()[k])).unwrap_or_default();
            let mut row = vec![rec.iter.to_string(), block.to_string(), e];
            row.extend(tail.iter().cloned());
            w.write_record(&row)?;
        }
    }
    Ok(())
}

pub fn write_trace<W: Write>(out: W, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_trace_rows(&mut w, trace)?;
    w.flush().map_err(|e| SaeError::io("<trace>", e))
}

pub fn save_trace(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<()> {
    with_file(path.as_ref(), |w| write_trace_rows(w, trace))
}
