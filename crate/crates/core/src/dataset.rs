//! Dataset ingestion (LIBSVM and CSV) and column preprocessing.
//!
//! LIBSVM lines look like `<label> <index>:<value> ...` with 1-based feature
//! indices. CSV rows are all-numeric with the label in the first or last
//! column. Sparse input is densified on load.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelPosition {
    First,
    #[default]
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: DataFormat,
    #[serde(default)]
    pub label_position: LabelPosition,
    #[serde(default)]
    pub has_header: bool,
    /// Minimum feature count for LIBSVM input; the actual count is the max of
    /// this and the largest index seen.
    #[serde(default)]
    pub n_features: Option<usize>,
}

impl LoadOptions {
    pub fn libsvm() -> Self {
        Self {
            format: DataFormat::Libsvm,
            label_position: LabelPosition::Last,
            has_header: false,
            n_features: None,
        }
    }

    pub fn csv(label_position: LabelPosition) -> Self {
        Self {
            format: DataFormat::Csv,
            label_position,
            has_header: false,
            n_features: None,
        }
    }
}

/// How raw labels were turned into {-1, +1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMapping {
    /// Labels already were -1/+1.
    Identity,
    /// 0 -> -1, 1 -> +1.
    ZeroOne,
    /// 1 -> -1, 2 -> +1.
    OneTwo,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: Vector,
    pub label_mapping: LabelMapping,
}

fn remap_labels(raw: &[f64]) -> Result<(Vector, LabelMapping)> {
    let all_in = |set: &[f64]| raw.iter().all(|v| set.contains(v));
    let (mapping, f): (LabelMapping, fn(f64) -> f64) = if all_in(&[-1.0, 1.0]) {
        (LabelMapping::Identity, |v| v)
    } else if all_in(&[0.0, 1.0]) {
        (LabelMapping::ZeroOne, |v| if v == 0.0 { -1.0 } else { 1.0 })
    } else if all_in(&[1.0, 2.0]) {
        (LabelMapping::OneTwo, |v| if v == 1.0 { -1.0 } else { 1.0 })
    } else {
        let bad = raw
            .iter()
            .position(|v| ![-1.0, 0.0, 1.0, 2.0].contains(v))
            .unwrap_or(0);
        return Err(Error::Parse {
            line: bad + 1,
            message: format!("label {} cannot be mapped to -1/+1", raw[bad]),
        });
    };
    Ok((Vector::from_iterator(raw.len(), raw.iter().map(|&v| f(v))), mapping))
}

pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let file = File::open(path)?;
    match opts.format {
        DataFormat::Libsvm => parse_libsvm(BufReader::new(file), opts.n_features),
        DataFormat::Csv => parse_csv(file, opts.label_position, opts.has_header),
    }
}

pub fn parse_libsvm<R: BufRead>(reader: R, n_features: Option<usize>) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad label '{label_tok}'"),
        })?;
        let mut feats = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("feature '{tok}' is not index:value"),
            })?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad feature index '{idx}'"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad feature value '{val}'"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite feature value '{val}'"),
                });
            }
            max_index = max_index.max(idx);
            feats.push((idx - 1, val));
        }
        labels.push((label, line_no));
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let d = max_index.max(n_features.unwrap_or(0));
    if d == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "no features present".into(),
        });
    }
    let mut x = DenseMatrix::zeros(rows.len(), d);
    for (i, feats) in rows.iter().enumerate() {
        for &(j, v) in feats {
            x[(i, j)] = v;
        }
    }
    let raw: Vec<f64> = labels.iter().map(|&(l, _)| l).collect();
    let (y, label_mapping) = remap_labels(&raw).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line: labels[line - 1].1,
            message,
        },
        other => other,
    })?;
    Ok(Dataset {
        x,
        y,
        label_mapping,
    })
}

pub fn parse_csv<R: Read>(reader: R, label_position: LabelPosition, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut label_lines = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let nums: Vec<f64> = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("non-numeric field '{f}'"),
                    })
            })
            .collect::<Result<_>>()?;
        if nums.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(nums.len()),
            Some(w) if w != nums.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", w, nums.len()),
                })
            }
            _ => {}
        }
        let (label, feats) = match label_position {
            LabelPosition::First => (nums[0], &nums[1..]),
            LabelPosition::Last => (nums[nums.len() - 1], &nums[..nums.len() - 1]),
        };
        labels.push(label);
        label_lines.push(line);
        values.extend_from_slice(feats);
    }
    let Some(w) = width else {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    };
    let x = DenseMatrix::from_row_slice(labels.len(), w - 1, &values);
    let (y, label_mapping) = remap_labels(&labels).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line: label_lines[line - 1],
            message,
        },
        other => other,
    })?;
    Ok(Dataset {
        x,
        y,
        label_mapping,
    })
}

/// Writes LIBSVM text, skipping zero entries. Values use shortest round-trip
/// formatting so a re-read is bit-identical.
pub fn write_libsvm<W: Write>(mut out: W, x: &DenseMatrix, y: &Vector) -> Result<()> {
    for i in 0..x.nrows() {
        write!(out, "{}", y[i])?;
        for j in 0..x.ncols() {
            let v = x[(i, j)];
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(out: W, x: &DenseMatrix, y: &Vector, label_position: LabelPosition) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..x.nrows() {
        let mut fields: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        match label_position {
            LabelPosition::First => fields.insert(0, y[i].to_string()),
            LabelPosition::Last => fields.push(y[i].to_string()),
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub normalize_columns: bool,
    pub add_intercept: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            normalize_columns: true,
            add_intercept: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    /// Zero-based indices of all-zero columns that were left unscaled.
    pub zero_columns: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Scales every nonzero column to unit Euclidean norm, then optionally
/// appends an all-ones intercept column.
pub fn preprocess(x: &DenseMatrix, opts: &PreprocessOptions) -> Result<(DenseMatrix, PreprocessReport)> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::DimensionMismatch("cannot preprocess an empty matrix".into()));
    }
    let mut out = x.clone();
    let mut report = PreprocessReport::default();
    if opts.normalize_columns {
        for j in 0..out.ncols() {
            let norm = out.column(j).norm();
            if norm == 0.0 {
                report.zero_columns.push(j);
                report
                    .warnings
                    .push(format!("column {} is all zeros and was left unscaled", j + 1));
            } else {
                out.column_mut(j).unscale_mut(norm);
            }
        }
    }
    if opts.add_intercept {
        let n = out.nrows();
        let cols = out.ncols();
        out = out.insert_column(cols, 1.0);
        debug_assert_eq!(out.nrows(), n);
    }
    Ok((out, report))
}
