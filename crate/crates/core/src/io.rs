//! Dataset CSV loading and the text model format.
//!
//! Dataset files are UTF-8 CSV with a header naming the columns `x1..xm`,
//! `y1..yZ` and `d` (any order), comma separated, `.` as decimal point.
//!
//! Model files are line oriented, `key value...`, with every float written
//! with 17 significant digits so a save/load round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::kernel::KernelSpec;
use crate::linalg::Matrix;
use crate::model::{HyperplaneCoeffs, ModelError, ModelMode, ShmModel, ShmWeights, SupportVector, TrainMeta};
use crate::train::{QpMode, TrainError, TrainingSet};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &str = "# shm model";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("dataset has no header line")]
    MissingHeader,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    Parse { line: u64, column: String, value: String },
    #[error("line {line}: label {value:?} is not -1 or +1")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("unsupported model format version {found} (expected {MODEL_FORMAT_VERSION})")]
    VersionMismatch { found: String },
    #[error("corrupt model field {field:?}: {reason}")]
    CorruptField { field: String, reason: String },
    #[error(transparent)]
    Dataset(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Inputs read from a dataset file; labels are optional so the same reader
/// serves prediction inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetColumns {
    pub x: Matrix,
    pub y: Matrix,
    pub labels: Option<Vec<f64>>,
}

#[derive(Debug)]
struct Layout {
    x_cols: Vec<usize>,
    y_cols: Vec<usize>,
    d_col: Option<usize>,
    width: usize,
}

fn parse_header(names: &csv::StringRecord) -> Result<Layout, IoError> {
    let mut xs: Vec<(usize, usize)> = Vec::new();
    let mut ys: Vec<(usize, usize)> = Vec::new();
    let mut d_col = None;
    for (pos, raw) in names.iter().enumerate() {
        let name = raw.trim();
        if name == "d" {
            if d_col.replace(pos).is_some() {
                return Err(IoError::BadHeader("column d appears twice".into()));
            }
            continue;
        }
        let (target, rest) = match name.split_at_checked(1) {
            Some(("x", rest)) => (&mut xs, rest),
            Some(("y", rest)) => (&mut ys, rest),
            _ => return Err(IoError::BadHeader(format!("unknown column {name:?}"))),
        };
        match rest.parse::<usize>() {
            Ok(k) if k >= 1 && !rest.starts_with('0') => target.push((k, pos)),
            _ => return Err(IoError::BadHeader(format!("unknown column {name:?}"))),
        }
    }
    let order = |mut cols: Vec<(usize, usize)>, prefix: &str| -> Result<Vec<usize>, IoError> {
        cols.sort();
        if cols.is_empty() {
            return Err(IoError::BadHeader(format!("no {prefix} columns")));
        }
        for (expected, (k, _)) in cols.iter().enumerate() {
            if *k != expected + 1 {
                return Err(IoError::BadHeader(format!(
                    "{prefix} columns must be numbered 1..{} without gaps or duplicates",
                    cols.len()
                )));
            }
        }
        Ok(cols.into_iter().map(|(_, pos)| pos).collect())
    };
    Ok(Layout {
        x_cols: order(xs, "x")?,
        y_cols: order(ys, "y")?,
        d_col,
        width: names.len(),
    })
}

fn parse_label(value: &str, line: u64) -> Result<f64, IoError> {
    match value.trim().parse::<f64>() {
        Ok(v) if v == 1.0 || v == -1.0 => Ok(v),
        _ => Err(IoError::BadLabel {
            line,
            value: value.to_string(),
        }),
    }
}

/// Reads a dataset. The `d` column is optional here.
pub fn read_columns(reader: impl Read) -> Result<DatasetColumns, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| IoError::Csv(e.to_string()))?.clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(IoError::MissingHeader);
    }
    let layout = parse_header(&header)?;

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IoError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != layout.width {
            return Err(IoError::RaggedRow {
                line,
                expected: layout.width,
                found: record.len(),
            });
        }
        let number = |pos: usize| -> Result<f64, IoError> {
            let value = record[pos].trim();
            match value.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(IoError::Parse {
                    line,
                    column: header[pos].trim().to_string(),
                    value: value.to_string(),
                }),
            }
        };
        xs.push(layout.x_cols.iter().map(|&p| number(p)).collect::<Result<_, _>>()?);
        ys.push(layout.y_cols.iter().map(|&p| number(p)).collect::<Result<_, _>>()?);
        if let Some(p) = layout.d_col {
            labels.push(parse_label(&record[p], line)?);
        }
    }
    let to_matrix = |cols: &[Vec<f64>], rows: usize| -> Result<Matrix, IoError> {
        let data = (0..rows).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
        Matrix::new(rows, cols.len(), data).map_err(|e| IoError::Csv(e.to_string()))
    };
    Ok(DatasetColumns {
        x: to_matrix(&xs, layout.x_cols.len())?,
        y: to_matrix(&ys, layout.y_cols.len())?,
        labels: layout.d_col.map(|_| labels),
    })
}

/// Parses a labelled dataset into a [`TrainingSet`].
pub fn parse_dataset(reader: impl Read) -> Result<TrainingSet, IoError> {
    let cols = read_columns(reader)?;
    let labels = cols
        .labels
        .ok_or_else(|| IoError::BadHeader("missing label column d".into()))?;
    Ok(TrainingSet::new(cols.x, cols.y, labels)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrainingSet, IoError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_dataset(file)
}

pub fn load_columns(path: impl AsRef<Path>) -> Result<DatasetColumns, IoError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_columns(file)
}

/// Writes a training set in the dataset CSV layout.
pub fn dataset_to_csv(ts: &TrainingSet) -> String {
    let (m, z) = (ts.input_dim(), ts.output_dim());
    let mut out = String::new();
    let names: Vec<String> = (1..=m)
        .map(|k| format!("x{k}"))
        .chain((1..=z).map(|k| format!("y{k}")))
        .chain(std::iter::once("d".to_string()))
        .collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..ts.len() {
        let (x, y, d) = ts.example(i);
        let fields: Vec<String> = x.iter().chain(&y).map(|v| v.to_string()).chain([d.to_string()]).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn nums(values: &[f64]) -> String {
    values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" ")
}

pub fn model_to_string(model: &ShmModel) -> String {
    let mut out = String::new();
    let meta = model.meta();
    let _ = writeln!(out, "{MODEL_MAGIC}");
    let _ = writeln!(out, "format_version {MODEL_FORMAT_VERSION}");
    let _ = writeln!(out, "mode {}", model.mode());
    let _ = match model.kernel() {
        KernelSpec::Linear => writeln!(out, "kernel linear"),
        KernelSpec::Polynomial { degree, offset } => writeln!(out, "kernel poly {degree} {}", num(*offset)),
        KernelSpec::Rbf { gamma } => writeln!(out, "kernel rbf {}", num(*gamma)),
    };
    let _ = writeln!(out, "input_dim {}", model.input_dim());
    let _ = writeln!(out, "output_dim {}", model.output_dim());
    match model.weights() {
        Some(wt) => {
            let _ = writeln!(out, "w {}", nums(wt.w.as_slice()));
            let _ = writeln!(out, "w0 {}", nums(&wt.w0));
        }
        None => {
            let _ = writeln!(out, "w none");
            let _ = writeln!(out, "w0 none");
        }
    }
    let _ = writeln!(out, "b {}", num(model.threshold()));
    let _ = writeln!(out, "inv_xxt {}", nums(model.inv_xxt().as_slice()));
    let _ = writeln!(out, "ridge_used {}", num(meta.ridge_used));
    let _ = writeln!(out, "objective {}", num(meta.objective));
    let _ = writeln!(out, "qp_mode {}", meta.qp_mode);
    let _ = writeln!(out, "c {}", num(meta.c));
    let _ = writeln!(out, "qp_iterations {}", meta.qp_iterations);
    let _ = writeln!(out, "kkt_residual {}", num(meta.kkt_residual));
    let _ = writeln!(out, "supports {}", model.supports().len());
    for sv in model.supports() {
        let _ = writeln!(
            out,
            "sv {} {} {} {} {}",
            sv.index,
            num(sv.label),
            num(sv.alpha),
            nums(&sv.x),
            nums(&sv.y)
        );
    }
    let _ = writeln!(out, "end");
    out
}

struct Fields<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = &'a str> + 'a>>,
}

fn corrupt(field: &str, reason: impl Into<String>) -> IoError {
    IoError::CorruptField {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl<'a> Fields<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = &'a str> + 'a> = Box::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        );
        Self { lines: it.peekable() }
    }

    /// Values of the next line, which must start with `key`.
    fn take(&mut self, key: &str) -> Result<Vec<&'a str>, IoError> {
        let line = self.lines.next().ok_or_else(|| corrupt(key, "missing (file truncated?)"))?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            Some(k) => Err(corrupt(key, format!("expected {key:?}, found {k:?}"))),
            None => Err(corrupt(key, "empty line")),
        }
    }

    fn one(&mut self, key: &str) -> Result<&'a str, IoError> {
        match self.take(key)?.as_slice() {
            [v] => Ok(v),
            other => Err(corrupt(key, format!("expected one value, found {}", other.len()))),
        }
    }

    fn float(&mut self, key: &str) -> Result<f64, IoError> {
        parse_f64(self.one(key)?, key)
    }

    fn count(&mut self, key: &str) -> Result<usize, IoError> {
        self.one(key)?.parse().map_err(|_| corrupt(key, "not a count"))
    }

    fn floats(&mut self, key: &str, expected: usize) -> Result<Option<Vec<f64>>, IoError> {
        let values = self.take(key)?;
        if values == ["none"] {
            return Ok(None);
        }
        if values.len() != expected {
            return Err(corrupt(key, format!("expected {expected} values, found {}", values.len())));
        }
        values.iter().map(|v| parse_f64(v, key)).collect::<Result<_, _>>().map(Some)
    }
}

fn parse_f64(s: &str, field: &str) -> Result<f64, IoError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .ok_or_else(|| corrupt(field, format!("cannot parse {s:?} as a number")))
}

fn finite(v: f64, field: &str) -> Result<f64, IoError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(corrupt(field, "must be finite"))
    }
}

pub fn model_from_str(text: &str) -> Result<ShmModel, IoError> {
    let mut f = Fields::new(text);
    let version = f.one("format_version")?;
    if version.parse::<u32>().ok() != Some(MODEL_FORMAT_VERSION) {
        return Err(IoError::VersionMismatch {
            found: version.to_string(),
        });
    }
    let mode: ModelMode = f.one("mode")?.parse().map_err(|e: String| corrupt("mode", e))?;
    let kernel = match f.take("kernel")?.as_slice() {
        ["linear"] => KernelSpec::Linear,
        ["poly", degree, offset] => KernelSpec::Polynomial {
            degree: degree.parse().map_err(|_| corrupt("kernel", "bad degree"))?,
            offset: parse_f64(offset, "kernel")?,
        },
        ["rbf", gamma] => KernelSpec::Rbf {
            gamma: parse_f64(gamma, "kernel")?,
        },
        _ => return Err(corrupt("kernel", "unrecognized kernel spec")),
    };
    let m = f.count("input_dim")?;
    let z = f.count("output_dim")?;
    let w = f.floats("w", m * z)?;
    let w0 = f.floats("w0", m)?;
    let weights = match (w, w0) {
        (Some(w), Some(w0)) => Some(ShmWeights {
            w: Matrix::new(m, z, w).map_err(|e| corrupt("w", e.to_string()))?,
            w0,
        }),
        (None, None) => None,
        _ => return Err(corrupt("w0", "w and w0 must both be present or both be none")),
    };
    let b = finite(f.float("b")?, "b")?;
    let inv = f.floats("inv_xxt", m * m)?.ok_or_else(|| corrupt("inv_xxt", "required"))?;
    let inv_xxt = Matrix::new(m, m, inv).map_err(|e| corrupt("inv_xxt", e.to_string()))?;
    let meta = TrainMeta {
        ridge_used: finite(f.float("ridge_used")?, "ridge_used")?,
        objective: finite(f.float("objective")?, "objective")?,
        qp_mode: f.one("qp_mode")?.parse::<QpMode>().map_err(|e| corrupt("qp_mode", e))?,
        c: f.float("c")?,
        qp_iterations: f.count("qp_iterations")?,
        kkt_residual: finite(f.float("kkt_residual")?, "kkt_residual")?,
    };
    let n_sv = f.count("supports")?;
    let mut supports = Vec::with_capacity(n_sv);
    for _ in 0..n_sv {
        let values = f.take("sv")?;
        if values.len() != 3 + m + z {
            return Err(corrupt("sv", format!("expected {} values, found {}", 3 + m + z, values.len())));
        }
        let index = values[0].parse().map_err(|_| corrupt("sv", "bad index"))?;
        let rest: Vec<f64> = values[1..].iter().map(|v| parse_f64(v, "sv")).collect::<Result<_, _>>()?;
        supports.push(SupportVector {
            index,
            label: rest[0],
            alpha: rest[1],
            x: rest[2..2 + m].to_vec(),
            y: rest[2 + m..].to_vec(),
        });
    }
    f.take("end")?;
    if let Some(extra) = f.lines.peek() {
        return Err(corrupt("end", format!("unexpected trailing content {extra:?}")));
    }
    Ok(ShmModel::new(mode, kernel, m, z, weights, supports, inv_xxt, b, meta)?)
}

pub fn save_model(model: &ShmModel, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)).map_err(io_err(path))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ShmModel, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    model_from_str(&text)
}

/// Prediction CSV: header `h,label`, one row per input.
pub fn predictions_to_csv(rows: &[(f64, i8)]) -> String {
    let mut out = String::from("h,label\n");
    for (h, label) in rows {
        let _ = writeln!(out, "{h},{label}");
    }
    out
}

/// Hyperplane CSV: header `index,A1..AZ,C`; `index` is the 1-based
/// training position of the support vector.
pub fn hyperplanes_to_csv(rows: &[HyperplaneCoeffs], output_dim: usize) -> String {
    let mut out = String::from("index");
    for t in 1..=output_dim {
        let _ = write!(out, ",A{t}");
    }
    out.push_str(",C\n");
    for hp in rows {
        let _ = write!(out, "{}", hp.support_index + 1);
        for a in &hp.normal {
            let _ = write!(out, ",{a}");
        }
        let _ = writeln!(out, ",{}", hp.offset);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_dataset() {
        let text = "x1,x2,y1,y2,d\n1,2,3,4,1\n5,6,7,8,-1\n";
        let ts = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!((ts.input_dim(), ts.output_dim(), ts.len()), (2, 2, 2));
        assert_eq!(ts.example(1), (vec![5.0, 6.0], vec![7.0, 8.0], -1.0));
    }

    #[test]
    fn columns_are_mapped_by_name() {
        let text = "d,y1,x2,x1\n1,9,2,1\n-1,8,4,3\n";
        let ts = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(ts.example(0), (vec![1.0, 2.0], vec![9.0], 1.0));
        assert_eq!(ts.example(1), (vec![3.0, 4.0], vec![8.0], -1.0));
    }

    #[test]
    fn bad_label_names_the_line() {
        let text = "x1,y1,d\n1,2,1\n3,4,0\n";
        match parse_dataset(text.as_bytes()) {
            Err(IoError::BadLabel { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, "0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_unparsable_rows() {
        let ragged = "x1,y1,d\n1,2,1\n3,4\n";
        assert!(matches!(
            parse_dataset(ragged.as_bytes()),
            Err(IoError::RaggedRow { line: 3, expected: 3, found: 2 })
        ));
        let junk = "x1,y1,d\n1,abc,1\n";
        match parse_dataset(junk.as_bytes()) {
            Err(IoError::Parse { line, column, value }) => {
                assert_eq!((line, column.as_str(), value.as_str()), (2, "y1", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let comma = "x1,y1,d\n\"1,5\",2,1\n";
        assert!(matches!(parse_dataset(comma.as_bytes()), Err(IoError::Parse { .. })));
    }

    #[test]
    fn header_problems() {
        assert!(matches!(parse_dataset("".as_bytes()), Err(IoError::MissingHeader)));
        assert!(matches!(parse_dataset("x1,z1,d\n".as_bytes()), Err(IoError::BadHeader(_))));
        assert!(matches!(parse_dataset("x1,x3,y1,d\n".as_bytes()), Err(IoError::BadHeader(_))));
        assert!(matches!(parse_dataset("x1,y1\n1,2\n3,4\n".as_bytes()), Err(IoError::BadHeader(_))));
        assert!(matches!(parse_dataset("y1,d\n1,1\n".as_bytes()), Err(IoError::BadHeader(_))));
        // labels optional for prediction inputs
        let cols = read_columns("x1,y1\n1,2\n".as_bytes()).unwrap();
        assert!(cols.labels.is_none());
    }

    #[test]
    fn version_and_truncation_errors() {
        assert!(matches!(
            model_from_str("format_version 0\n"),
            Err(IoError::VersionMismatch { .. })
        ));
        assert!(matches!(
            model_from_str("format_version 1\nmode linear-explicit\n"),
            Err(IoError::CorruptField { .. })
        ));
    }

    #[test]
    fn csv_writers() {
        assert_eq!(predictions_to_csv(&[(1.5, 1), (-0.25, -1)]), "h,label\n1.5,1\n-0.25,-1\n");
        let hp = HyperplaneCoeffs {
            normal: vec![0.5, -1.0],
            offset: 2.0,
            support_index: 1,
        };
        assert_eq!(hyperplanes_to_csv(&[hp], 2), "index,A1,A2,C\n2,0.5,-1,2\n");
    }
}
