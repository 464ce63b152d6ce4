//! File formats.
//!
//! Chains and state-space systems are JSON documents with row-major matrices;
//! a complex entry is a two-element array `[re, im]`. Flow traces are CSV
//! with header `t,G_fro,G_1_fro,...,G_{N-1}_fro,W_normsq,loss,fiber_drift,balance_residual`
//! and every float written as `{:.16e}` (17 significant digits). An absent
//! loss is an empty field.

use std::io::{Read, Write};

use serde_json::{json, Value};

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::flows::{FlowSample, FlowTrace};
use crate::linalg::Mat;
use crate::realization::{BalancingResult, StateSpace};
use crate::scalar::{Field, Scalar};
use crate::variational::MinimizationResult;
use crate::Complex64;

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

fn entry_to_json<T: Scalar>(x: T) -> Value {
    let mut parts = Vec::with_capacity(2);
    x.push_reals(&mut parts);
    match T::FIELD {
        Field::Real => json!(parts[0]),
        Field::Complex => json!(parts),
    }
}

fn entry_from_json<T: Scalar>(v: &Value) -> Result<T> {
    let num = |v: &Value| v.as_f64().ok_or_else(|| Error::Parse(format!("expected a number, got {v}")));
    match (T::FIELD, v) {
        (Field::Real, Value::Number(_)) => Ok(T::from_parts(num(v)?, 0.0)),
        (Field::Complex, Value::Array(a)) if a.len() == 2 => Ok(T::from_parts(num(&a[0])?, num(&a[1])?)),
        (Field::Complex, Value::Number(_)) => Ok(T::from_parts(num(v)?, 0.0)),
        (field, other) => Err(Error::Parse(format!("bad {field} matrix entry {other}"))),
    }
}

/// Row-major nested array.
pub fn matrix_to_json<T: Scalar>(m: &Mat<T>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| entry_to_json(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Parse a row-major nested array; `shape` is checked when given.
pub fn matrix_from_json<T: Scalar>(v: &Value, shape: Option<(usize, usize)>) -> Result<Mat<T>> {
    let rows = v.as_array().ok_or_else(|| Error::Parse("matrix must be an array of rows".into()))?;
    let nrows = rows.len();
    let ncols = rows
        .first()
        .and_then(Value::as_array)
        .map_or(0, Vec::len);
    if let Some(expected) = shape {
        if (nrows, ncols) != expected {
            return Err(Error::Parse(format!(
                "matrix is {nrows} x {ncols}, expected {} x {}",
                expected.0, expected.1
            )));
        }
    }
    let mut m = Mat::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| Error::Parse("matrix row must be an array".into()))?;
        if row.len() != ncols {
            return Err(Error::Parse(format!("ragged matrix: row {i} has {} entries, expected {ncols}", row.len())));
        }
        for (j, x) in row.iter().enumerate() {
            m[(i, j)] = entry_from_json(x)?;
        }
    }
    Ok(m)
}

fn field_of(v: &Value) -> Result<Field> {
    v.get("field")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse("missing `field`".into()))?
        .parse()
}

fn usize_of(v: &Value, key: &str) -> Result<usize> {
    v.get(key)
        .and_then(Value::as_u64)
        .map(|x| x as usize)
        .ok_or_else(|| Error::Parse(format!("missing or invalid `{key}`")))
}

/// `{"N", "d", "field", "matrices": [W_N, ..., W_1]}`.
pub fn chain_to_json<T: Scalar>(w: &Chain<T>) -> Value {
    json!({
        "N": w.depth(),
        "d": w.width(),
        "field": T::FIELD,
        "matrices": w.layers().iter().map(matrix_to_json).collect::<Vec<_>>(),
    })
}

pub fn chain_from_json<T: Scalar>(v: &Value) -> Result<Chain<T>> {
    let field = field_of(v)?;
    if field != T::FIELD {
        return Err(Error::Parse(format!("chain is {field}, expected {}", T::FIELD)));
    }
    let n = usize_of(v, "N")?;
    let d = usize_of(v, "d")?;
    let mats = v
        .get("matrices")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse("missing `matrices`".into()))?;
    if mats.len() != n {
        return Err(Error::Parse(format!("`N` is {n} but {} matrices given", mats.len())));
    }
    let layers = mats
        .iter()
        .map(|m| matrix_from_json(m, Some((d, d))))
        .collect::<Result<Vec<_>>>()?;
    Chain::new(layers)
}

/// A chain whose field is only known at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyChain {
    Real(Chain<f64>),
    Complex(Chain<Complex64>),
}

impl AnyChain {
    pub fn field(&self) -> Field {
        match self {
            AnyChain::Real(_) => Field::Real,
            AnyChain::Complex(_) => Field::Complex,
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        match field_of(v)? {
            Field::Real => chain_from_json(v).map(AnyChain::Real),
            Field::Complex => chain_from_json(v).map(AnyChain::Complex),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            AnyChain::Real(w) => chain_to_json(w),
            AnyChain::Complex(w) => chain_to_json(w),
        }
    }
}

pub fn write_chain<T: Scalar, W: Write>(w: &Chain<T>, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &chain_to_json(w)).map_err(parse_err)
}

pub fn read_chain<T: Scalar, R: Read>(input: R) -> Result<Chain<T>> {
    let v: Value = serde_json::from_reader(input).map_err(parse_err)?;
    chain_from_json(&v)
}

/// `{"n", "m", "p", "field", "A", "B", "C"}`.
pub fn state_space_to_json<T: Scalar>(sys: &StateSpace<T>) -> Value {
    json!({
        "n": sys.states(),
        "m": sys.inputs(),
        "p": sys.outputs(),
        "field": T::FIELD,
        "A": matrix_to_json(sys.a()),
        "B": matrix_to_json(sys.b()),
        "C": matrix_to_json(sys.c()),
    })
}

pub fn state_space_from_json<T: Scalar>(v: &Value) -> Result<StateSpace<T>> {
    let field = field_of(v)?;
    if field != T::FIELD {
        return Err(Error::Parse(format!("system is {field}, expected {}", T::FIELD)));
    }
    let n = usize_of(v, "n")?;
    let m = usize_of(v, "m")?;
    let p = usize_of(v, "p")?;
    let get = |key: &str| v.get(key).ok_or_else(|| Error::Parse(format!("missing `{key}`")));
    StateSpace::new(
        matrix_from_json(get("A")?, Some((n, n)))?,
        matrix_from_json(get("B")?, Some((n, m)))?,
        matrix_from_json(get("C")?, Some((p, n)))?,
    )
}

/// Minimization report with the minimizer chain and its end-to-end matrix.
pub fn minimization_to_json<T: Scalar>(r: &MinimizationResult<T>) -> Value {
    let mut v = serde_json::to_value(&r.report).expect("report serializes");
    v["minimizer"] = chain_to_json(&r.minimizer);
    v["end_to_end"] = matrix_to_json(&crate::chain::end_to_end(&r.minimizer));
    v
}

pub fn balancing_to_json<T: Scalar>(r: &BalancingResult<T>) -> Value {
    json!({
        "status": r.status,
        "minimality": r.minimality,
        "initial_cost": r.initial_cost,
        "cost": r.cost,
        "gradient_norm": r.gradient_norm,
        "iterations": r.iterations,
        "restart": r.restart,
        "restart_spread": r.restart_spread,
        "tf_drift": r.tf_drift,
        "probes": r.probes.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "cost_trajectory": r.cost_trajectory,
        "per_restart": r.per_restart,
        "M": matrix_to_json(&r.m),
        "transformed": state_space_to_json(&r.transformed),
    })
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any f64.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// The CSV header for a depth-`depth` trace.
pub fn trace_header(depth: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "G_fro".to_string()];
    h.extend((1..depth).map(|k| format!("G_{k}_fro")));
    h.extend(["W_normsq", "loss", "fiber_drift", "balance_residual"].map(String::from));
    h
}

pub fn write_trace_csv<W: Write>(trace: &FlowTrace, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(trace_header(trace.depth)).map_err(parse_err)?;
    for s in &trace.samples {
        let mut row = vec![format_float(s.t), format_float(s.g_fro)];
        row.extend(s.g_k_fro.iter().map(|&x| format_float(x)));
        row.push(format_float(s.w_normsq));
        row.push(s.loss.map(format_float).unwrap_or_default());
        row.push(format_float(s.fiber_drift));
        row.push(format_float(s.balance_residual));
        wtr.write_record(&row).map_err(parse_err)?;
    }
    wtr.flush().map_err(parse_err)?;
    Ok(())
}

/// Read a trace written by [`write_trace_csv`]. Fields not stored in the CSV
/// (the Ness speed and the seed) come back as `None`.
pub fn read_trace_csv<R: Read>(input: R) -> Result<FlowTrace> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(parse_err)?.iter().map(String::from).collect();
    let depth = header.len().checked_sub(6).map(|k| k + 1).filter(|&n| n >= 2).ok_or_else(|| {
        Error::Parse(format!("trace header has {} columns, need at least 7", header.len()))
    })?;
    if header != trace_header(depth) {
        return Err(Error::Parse(format!("unexpected trace header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        let f: Vec<&str> = rec.iter().collect();
        let g_k_fro = f[2..depth + 1].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let rest = &f[depth + 1..];
        samples.push(FlowSample {
            t: num(f[0])?,
            g_fro: num(f[1])?,
            g_k_fro,
            w_normsq: num(rest[0])?,
            loss: if rest[1].is_empty() { None } else { Some(num(rest[1])?) },
            fiber_drift: num(rest[2])?,
            balance_residual: num(rest[3])?,
            ness_speed_sq: None,
            moment_drift: None,
        });
    }
    Ok(FlowTrace {
        depth,
        samples,
        seed: None,
    })
}
