//! Text checkpoints: `layers L`, then for each layer a `rows cols activation`
//! line, `rows` lines of row-major weights and one line of biases. Values
//! carry 17 significant digits so `f64` parameters round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AuditError, Result};
use crate::netcore::model::{Activation, Layer, MlpModel};
use crate::scalar::Scalar;

fn push_row<T: Scalar>(out: &mut String, values: &[T]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{:.16e}", v.as_f64());
    }
    out.push('\n');
}

pub fn model_to_string<T: Scalar>(model: &MlpModel<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "layers {}", model.layers().len());
    for layer in model.layers() {
        let _ = writeln!(out, "{} {} {}", layer.rows, layer.cols, layer.activation.name());
        for r in 0..layer.rows {
            push_row(&mut out, &layer.weights[r * layer.cols..(r + 1) * layer.cols]);
        }
        push_row(&mut out, &layer.bias);
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| AuditError::Parse {
                line: 0,
                msg: format!("unexpected end of checkpoint while reading {what}"),
            })
    }
}

fn parse_values<T: Scalar>(line_no: usize, line: &str, expected: usize) -> Result<Vec<T>> {
    let vals: Vec<T> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map(T::lit).map_err(|_| AuditError::Parse {
                line: line_no,
                msg: format!("bad number {t:?}"),
            })
        })
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(AuditError::Parse {
            line: line_no,
            msg: format!("expected {expected} values, got {}", vals.len()),
        });
    }
    Ok(vals)
}

pub fn model_from_str<T: Scalar>(text: &str) -> Result<MlpModel<T>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (ln, header) = lines.next("header")?;
    let count: usize = header
        .strip_prefix("layers ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| AuditError::Parse {
            line: ln,
            msg: format!("expected `layers L`, got {header:?}"),
        })?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, spec) = lines.next("layer header")?;
        let parts: Vec<&str> = spec.split_whitespace().collect();
        let bad = || AuditError::Parse {
            line: ln,
            msg: format!("expected `rows cols activation`, got {spec:?}"),
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        let rows: usize = parts[0].parse().map_err(|_| bad())?;
        let cols: usize = parts[1].parse().map_err(|_| bad())?;
        let activation = Activation::parse(parts[2]).ok_or_else(bad)?;
        let mut weights = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, line) = lines.next("weights")?;
            weights.extend(parse_values::<T>(ln, line, cols)?);
        }
        let (ln, line) = lines.next("biases")?;
        let bias = parse_values(ln, line, rows)?;
        layers.push(Layer {
            rows,
            cols,
            weights,
            bias,
            activation,
        });
    }
    MlpModel::new(layers)
}

pub fn write_model<T: Scalar>(model: &MlpModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)).map_err(|e| AuditError::io(path, e))
}

pub fn read_model<T: Scalar>(path: &Path) -> Result<MlpModel<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    model_from_str(&text)
}
