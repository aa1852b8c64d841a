//! CSV tables for plotting and for the diagnostic report.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::diagnostics::{DiagnosticRow, ExtremaRow};
use crate::error::{Error, Result};
use crate::flowmap::PicardTrace;
use crate::geometry::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Field,
    Trace,
    Extrema,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "field" => Ok(Self::Field),
            "trace" => Ok(Self::Trace),
            "extrema" => Ok(Self::Extrema),
            other => Err(Error::UnknownPlotKind(other.to_string())),
        }
    }
}

/// Data that can be turned into one of the plot tables.
pub enum PlotData<'a> {
    Field(&'a ScalarField),
    Trace(&'a PicardTrace),
    Extrema(&'a [ExtremaRow]),
}

impl PlotData<'_> {
    pub fn kind(&self) -> PlotKind {
        match self {
            Self::Field(_) => PlotKind::Field,
            Self::Trace(_) => PlotKind::Trace,
            Self::Extrema(_) => PlotKind::Extrema,
        }
    }
}

#[derive(Serialize)]
struct FieldRow {
    x: f64,
    y: f64,
    value: f64,
}

#[derive(Serialize)]
struct TraceRow {
    k: usize,
    rho: f64,
    e: f64,
}

fn write_rows<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
    header: &[&str],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut any = false;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
        any = true;
    }
    if !any {
        w.write_record(header).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Writes `data` as CSV after checking it matches the requested `what`.
pub fn emit_plot_data(data: PlotData<'_>, what: &str, path: &Path) -> Result<()> {
    let kind: PlotKind = what.parse()?;
    if kind != data.kind() {
        return Err(Error::InvalidArgument(format!(
            "plot kind `{what}` does not match the supplied data"
        )));
    }
    match data {
        PlotData::Field(f) => {
            let d = f.domain();
            let rows = d.valid().iter().map(|&k| {
                let p = d.node(k);
                FieldRow {
                    x: p.x,
                    y: p.y,
                    value: f.get(k),
                }
            });
            write_rows(path, rows, &["x", "y", "value"])
        }
        PlotData::Trace(t) => {
            let rows = t
                .rho
                .iter()
                .zip(t.envelope())
                .enumerate()
                .map(|(i, (&rho, e))| TraceRow { k: i + 1, rho, e });
            write_rows(path, rows, &["k", "rho", "e"])
        }
        PlotData::Extrema(rows) => write_rows(
            path,
            rows.iter(),
            &["t", "min", "max", "bound", "overshoot", "l2_step"],
        ),
    }
}

pub fn write_diagnostics_csv(rows: &[DiagnosticRow], path: &Path) -> Result<()> {
    write_rows(
        path,
        rows.iter(),
        &["name", "value", "bound", "pass", "context"],
    )
}
