//! Text formats for scores, labels, thresholds and group maps.
//!
//! Score and label CSVs share the header `sample_id,class_0,...,class_{C-1}`.
//! Scores are printed with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64` exactly. Thresholds and group maps are headerless
//! `class_index,value` lines.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use super::{LabelMatrix, ScoreMatrix};
use crate::error::{Error, Result};
use crate::fsutil;

fn header(num_classes: usize) -> String {
    let mut h = String::from("sample_id");
    for c in 0..num_classes {
        write!(h, ",class_{c}").unwrap();
    }
    h
}

fn parse_table<T: FromStr>(path: &Path, text: &str) -> Result<(Vec<u64>, Array2<T>)> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file; expected header `sample_id,class_0,...`"))?;
    let cols: Vec<&str> = head.trim_end().split(',').collect();
    let num_classes = cols.len().saturating_sub(1);
    if num_classes == 0 || head.trim_end() != header(num_classes) {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!(
                "malformed header `{head}`; expected schema `sample_id,class_0,...,class_{{C-1}}`"
            ),
        });
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != num_classes + 1 {
            return Err(parse_err(format!("expected {} fields, found {}", num_classes + 1, fields.len())));
        }
        ids.push(
            fields[0]
                .parse::<u64>()
                .map_err(|_| parse_err(format!("bad sample id `{}`", fields[0])))?,
        );
        for f in &fields[1..] {
            values.push(f.parse::<T>().map_err(|_| parse_err(format!("bad value `{f}`")))?);
        }
    }
    let rows = ids.len();
    let table = Array2::from_shape_vec((rows, num_classes), values).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((ids, table))
}

pub fn encode_score_csv(m: &ScoreMatrix) -> String {
    let mut out = header(m.num_classes());
    out.push('\n');
    for (id, row) in m.ids.iter().zip(m.scores.outer_iter()) {
        write!(out, "{id}").unwrap();
        for v in row {
            write!(out, ",{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_score_csv(path: impl AsRef<Path>, m: &ScoreMatrix) -> Result<()> {
    fsutil::write_atomic(path, encode_score_csv(m).as_bytes())
}

pub fn read_score_csv(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    let (ids, scores) = parse_table::<f64>(path, &fsutil::read_string(path)?)?;
    ScoreMatrix::new(ids, scores).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_label_csv(path: impl AsRef<Path>, m: &LabelMatrix) -> Result<()> {
    let mut out = header(m.labels.ncols());
    out.push('\n');
    for (id, row) in m.ids.iter().zip(m.labels.outer_iter()) {
        write!(out, "{id}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fsutil::write_atomic(path, out.as_bytes())
}

pub fn read_label_csv(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    let path = path.as_ref();
    let (ids, labels) = parse_table::<u8>(path, &fsutil::read_string(path)?)?;
    LabelMatrix::new(ids, labels).map_err(|e| Error::format(path, e.to_string()))
}

fn read_indexed<T: FromStr>(path: &Path) -> Result<Vec<T>> {
    let text = fsutil::read_string(path)?;
    let mut entries: Vec<(usize, T)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.into(),
            line: idx + 1,
            message,
        };
        let (c, v) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `class_index,value`, found `{line}`")))?;
        let c: usize = c.trim().parse().map_err(|_| err(format!("bad class index `{c}`")))?;
        let v: T = v.trim().parse().map_err(|_| err(format!("bad value `{v}`")))?;
        entries.push((c, v));
    }
    entries.sort_by_key(|(c, _)| *c);
    for (expected, (c, _)) in entries.iter().enumerate() {
        if *c != expected {
            return Err(Error::format(
                path,
                format!("class indices must cover 0..C exactly once (problem at class {expected})"),
            ));
        }
    }
    Ok(entries.into_iter().map(|(_, v)| v).collect())
}

fn write_indexed<T: std::fmt::Display>(path: &Path, values: &[T]) -> Result<()> {
    let mut out = String::new();
    for (c, v) in values.iter().enumerate() {
        writeln!(out, "{c},{v}").unwrap();
    }
    fsutil::write_atomic(path, out.as_bytes())
}

pub fn read_group_map(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read_indexed(path.as_ref())
}

pub fn write_group_map(path: impl AsRef<Path>, group_map: &[usize]) -> Result<()> {
    write_indexed(path.as_ref(), group_map)
}

pub fn read_thresholds(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let t: Vec<f64> = read_indexed(path)?;
    if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::format(path, "thresholds must lie in [0, 1]"));
    }
    Ok(t)
}

/// Thresholds are written in shortest round-trip form.
pub fn write_thresholds(path: impl AsRef<Path>, thresholds: &[f64]) -> Result<()> {
    write_indexed(path.as_ref(), thresholds)
}
