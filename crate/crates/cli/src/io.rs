//! File formats and number formatting.
//!
//! Matrices and vectors are CSV with a `rows,cols` header line followed by `rows` lines
//! of `cols` comma-separated values. Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// `%.12g`: 12 significant digits, trailing zeros dropped.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn round_value(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let rounded: f64 = fmt_num(x).parse().unwrap_or(x);
            if let Some(r) = serde_json::Number::from_f64(rounded) {
                *n = r;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_value),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::Internal(e.to_string()))?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Parse {
        file: path.display().to_string(),
        line: None,
        msg: e.to_string(),
    })
}

pub fn parse_matrix(text: &str, file: &str) -> Result<DMatrix<f64>, CliError> {
    let err = |line: usize, msg: String| CliError::Parse {
        file: file.to_string(),
        line: Some(line),
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing rows,cols header".into()))?;
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    let [rows, cols] = dims[..] else {
        return Err(err(
            hline,
            format!("expected header `rows,cols`, found `{header}`"),
        ));
    };
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| err(hline, format!("invalid dimension `{s}`")))
    };
    let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
    if rows == 0 || cols == 0 {
        return Err(err(hline, "dimensions must be positive".into()));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if seen == rows {
            return Err(err(lineno, format!("more than {rows} data rows")));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(err(
                lineno,
                format!("expected {cols} values, found {}", fields.len()),
            ));
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("invalid number `{f}`")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value `{f}`")));
            }
            data.push(v);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(err(
            text.lines().count().max(1),
            format!("expected {rows} data rows, found {seen}"),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    parse_matrix(&read_text(path)?, &path.display().to_string())
}

/// Accepts either an `n,1` or a `1,n` file.
pub fn read_vector(path: &Path) -> Result<DVector<f64>, CliError> {
    let m = read_matrix(path)?;
    if m.ncols() == 1 {
        Ok(m.column(0).into_owned())
    } else if m.nrows() == 1 {
        Ok(m.row(0).transpose())
    } else {
        Err(CliError::Parse {
            file: path.display().to_string(),
            line: Some(1),
            msg: format!(
                "expected a vector, found a {}x{} matrix",
                m.nrows(),
                m.ncols()
            ),
        })
    }
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{},{}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn format_vector(v: &[f64]) -> String {
    format_matrix(&DMatrix::from_column_slice(v.len(), 1, v))
}

/// Hex SHA-256 over the input files, each prefixed by its length.
pub fn digest(paths: &[&Path]) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| CliError::Parse {
            file: p.display().to_string(),
            line: None,
            msg: e.to_string(),
        })?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    let mut hex = String::with_capacity(64);
    for b in hasher.finalize().iter() {
        write!(hex, "{b:02x}").expect("write to string");
    }
    Ok(hex)
}

/// Writes output files under one directory and remembers their paths.
pub struct OutDir {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }
}
