//! Deterministic text output: JSON with every float at 17 significant digits
//! and `x,y,value` CSV field snapshots.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{Number, Value};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// A float in the fixed output format, `d.dddddddddddddddde±x`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn reformat(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                *n = serde_json::from_str::<Number>(&format_float(x)).expect("formatted float is a JSON number");
            }
        }
        Value::Array(items) => items.iter_mut().for_each(reformat),
        Value::Object(map) => map.values_mut().for_each(reformat),
        _ => {}
    }
}

/// Pretty JSON with floats at 17 significant digits and non-finite values as
/// `null`.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(io_err)?;
    reformat(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(io_err)?;
    s.push('\n');
    Ok(s)
}

pub fn write_field_csv(field: &Field, mut out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(["x", "y", "value"]).map_err(io_err)?;
    for (p, v) in field.grid().nodes().iter().zip(field.values()) {
        w.write_record([format_float(p[0]), format_float(p[1]), format_float(*v)])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a snapshot written by [`write_field_csv`] back onto `grid`. The
/// rows must list exactly the grid's nodes in order.
pub fn read_field_csv(grid: &Arc<Grid>, input: impl Read) -> Result<Field> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(io_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "value"] {
        return Err(Error::Io("snapshot header must be `x,y,value`".into()));
    }
    let tol = 1e-9 * grid.h();
    let mut values = Vec::with_capacity(grid.node_count());
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(io_err)?;
        let parse = |j: usize| -> Result<f64> {
            record
                .get(j)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Io(format!("snapshot row {}: bad number", i + 2)))
        };
        let (x, y, v) = (parse(0)?, parse(1)?, parse(2)?);
        if i >= grid.node_count() {
            return Err(Error::GridMismatch);
        }
        let p = grid.node(i);
        if (p[0] - x).abs() > tol || (p[1] - y).abs() > tol {
            return Err(Error::GridMismatch);
        }
        values.push(v);
    }
    if values.len() != grid.node_count() {
        return Err(Error::GridMismatch);
    }
    Field::new(grid.clone(), values)
}
