//! CSV and JSON writers for fields, verdicts and diagnostic curves.
//!
//! CSV output has a header row and is UTF-8; JSON documents carry a
//! `schema_version` field.

use std::io::Write;

use serde::Serialize;

use crate::cones::PathClassification;
use crate::diagnostics::{CesaroRow, CurvePoint, DiagnosticReport, ExceedanceRow};
use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::sim::MaxStableField;

pub const SCHEMA_VERSION: u32 = 1;

fn io(e: impl std::fmt::Display) -> crate::error::Error {
    invalid(format!("write failed: {e}"))
}

/// Any serializable artifact as one pretty-printed JSON document. Objects
/// without a `schema_version` get one; other values are wrapped as `data`.
pub fn write_json<T: Serialize>(value: &T, w: impl Write) -> Result<()> {
    let v = match serde_json::to_value(value).map_err(io)? {
        serde_json::Value::Object(mut m) => {
            m.entry("schema_version").or_insert(SCHEMA_VERSION.into());
            serde_json::Value::Object(m)
        }
        other => serde_json::json!({ "schema_version": SCHEMA_VERSION, "data": other }),
    };
    serde_json::to_writer_pretty(w, &v).map_err(io)
}

fn coord_header(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|k| format!("x{k}")).collect()
    }
}

fn coords(grid: &Grid, p: usize) -> Vec<String> {
    grid.coord(p)[..grid.dim()].iter().map(|c| c.to_string()).collect()
}

/// One row per grid point: coordinates then one column per named series.
pub fn write_grid_csv(grid: &Grid, series: &[(&str, &[f64])], w: impl Write) -> Result<()> {
    if series.iter().any(|(_, v)| v.len() != grid.len()) {
        return Err(invalid("series length differs from the grid"));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = coord_header(grid.dim());
    header.extend(series.iter().map(|(n, _)| n.to_string()));
    out.write_record(&header).map_err(io)?;
    for p in 0..grid.len() {
        let mut row = coords(grid, p);
        row.extend(series.iter().map(|(_, v)| v[p].to_string()));
        out.write_record(&row).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_field_csv(field: &MaxStableField, w: impl Write) -> Result<()> {
    write_grid_csv(field.grid(), &[("value", field.values())], w)
}

/// Serializable rows as CSV, header taken from the field names.
pub fn write_rows_csv<T: Serialize>(rows: &[T], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Serialize)]
struct VerdictRow {
    path: usize,
    integral: &'static str,
    decay: &'static str,
    cesaro: &'static str,
    sup_local: &'static str,
    dual_conflict: bool,
}

/// One row per path with its label under each test.
pub fn write_verdicts_csv(verdicts: &[PathClassification], w: impl Write) -> Result<()> {
    let rows: Vec<VerdictRow> = verdicts
        .iter()
        .enumerate()
        .map(|(path, v)| VerdictRow {
            path,
            integral: v.integral.label.as_str(),
            decay: v.decay.label.as_str(),
            cesaro: v.cesaro.label.as_str(),
            sup_local: v.sup_local.as_ref().map_or("", |s| s.label.as_str()),
            dual_conflict: v.dual_conflict,
        })
        .collect();
    write_rows_csv(&rows, w)
}

/// The curve tables of a report, keyed by file stem.
pub fn report_curves(r: &DiagnosticReport) -> Result<Vec<(&'static str, Vec<u8>)>> {
    fn csv_of<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_rows_csv(rows, &mut buf)?;
        Ok(buf)
    }
    Ok(vec![
        ("min_expectation", csv_of::<CurvePoint>(&r.min_expectation)?),
        ("exceedance", csv_of::<ExceedanceRow>(&r.exceedance)?),
        ("cesaro", csv_of::<CesaroRow>(&r.cesaro)?),
        ("theta", csv_of(&r.theta)?),
    ])
}
