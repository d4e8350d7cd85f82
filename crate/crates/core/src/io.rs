//! On-disk formats.
//!
//! * Matrices (sensitivity, measurements, stacks): CSV whose first line is
//!   `rows,cols`, followed by one line per row. A binary variant holds two
//!   little-endian `u64` dimensions and then row-major little-endian `f64`s.
//! * Masks: `H` lines of `W` characters `0`/`1`, or the same as CSV.
//! * Measurement sidecar: JSON with `frequencies`, `mode` and
//!   `reference_frequency`, stored next to the CSV with a `.json` extension.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ImagingMode, MeasurementFrameSet, PixelGrid};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn matrix_to_csv(m: &Matrix<f64>) -> String {
    let mut s = format!("{},{}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str, path: &Path) -> Result<Matrix<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, format!("header {header:?} is not \"rows,cols\"")))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::parse(path, format!("header {header:?} is not \"rows,cols\"")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (n, line) in lines {
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad number {tok:?}", n + 1)))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                path,
                format!("line {}: expected {cols} values, found {}", n + 1, data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::parse(path, format!("expected {rows} rows, found {seen}")));
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn matrix_to_binary(m: &Matrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.as_slice().len());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_from_binary(bytes: &[u8], path: &Path) -> Result<Matrix<f64>> {
    let word = |i: usize| -> Result<[u8; 8]> {
        bytes
            .get(i * 8..i * 8 + 8)
            .map(|b| b.try_into().expect("eight bytes"))
            .ok_or_else(|| Error::parse(path, "truncated binary matrix"))
    };
    let rows = u64::from_le_bytes(word(0)?) as usize;
    let cols = u64::from_le_bytes(word(1)?) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::parse(path, "matrix dimensions overflow"))?;
    if bytes.len() != 16 + 8 * n {
        return Err(Error::parse(
            path,
            format!("{rows}x{cols} matrix needs {} bytes, file has {}", 16 + 8 * n, bytes.len()),
        ));
    }
    let data = (0..n).map(|i| word(i + 2).map(f64::from_le_bytes)).collect::<Result<_>>()?;
    Matrix::from_vec(rows, cols, data)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Reads CSV, or the binary layout when the extension is `.bin`.
pub fn read_matrix(path: &Path) -> Result<Matrix<f64>> {
    if is_binary(path) {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        matrix_from_binary(&bytes, path)
    } else {
        matrix_from_csv(&read_text(path)?, path)
    }
}

pub fn write_matrix(path: &Path, m: &Matrix<f64>) -> Result<()> {
    if is_binary(path) {
        fs::write(path, matrix_to_binary(m)).map_err(|e| Error::io(path, e))
    } else {
        write_text(path, &matrix_to_csv(m))
    }
}

pub fn mask_from_text(text: &str, path: &Path) -> Result<PixelGrid> {
    let mut rows: Vec<Vec<bool>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split("").filter(|s| !s.is_empty()).collect()
        };
        let row = cells
            .iter()
            .map(|c| match *c {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::parse(path, format!("line {}: mask cell {other:?} is not 0 or 1", n + 1))),
            })
            .collect::<Result<Vec<bool>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    format!("line {}: {} cells, expected {}", n + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 {
        return Err(Error::parse(path, "empty mask"));
    }
    PixelGrid::from_mask(h, w, rows.concat())
}

pub fn mask_to_text(grid: &PixelGrid) -> String {
    let mut s = String::with_capacity(grid.slot_count() + grid.height());
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            s.push(if grid.contains(r, c) { '1' } else { '0' });
        }
        s.push('\n');
    }
    s
}

pub fn read_mask(path: &Path) -> Result<PixelGrid> {
    mask_from_text(&read_text(path)?, path)
}

pub fn write_mask(path: &Path, grid: &PixelGrid) -> Result<()> {
    write_text(path, &mask_to_text(grid))
}

/// Frame metadata stored beside a measurement CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSidecar {
    pub frequencies: Vec<f64>,
    /// `"td"` or `"fd"`.
    pub mode: String,
    #[serde(default)]
    pub reference_frequency: Option<f64>,
}

impl MeasurementSidecar {
    pub fn from_frames(frames: &MeasurementFrameSet<f64>) -> Self {
        let (mode, reference_frequency) = match frames.mode() {
            ImagingMode::TimeDifference => ("td", None),
            ImagingMode::FrequencyDifference { reference_hz } => ("fd", Some(reference_hz)),
        };
        Self {
            frequencies: frames.frequencies().to_vec(),
            mode: mode.into(),
            reference_frequency,
        }
    }

    pub fn imaging_mode(&self, path: &Path) -> Result<ImagingMode> {
        match (self.mode.as_str(), self.reference_frequency) {
            ("td", _) => Ok(ImagingMode::TimeDifference),
            ("fd", Some(reference_hz)) => Ok(ImagingMode::FrequencyDifference { reference_hz }),
            ("fd", None) => Err(Error::parse(path, "fd mode needs reference_frequency")),
            (other, _) => Err(Error::parse(path, format!("unknown mode {other:?}, expected td or fd"))),
        }
    }
}

/// `measurements.csv` -> `measurements.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn read_measurements(path: &Path) -> Result<MeasurementFrameSet<f64>> {
    let values = read_matrix(path)?;
    let side_path = sidecar_path(path);
    let side: MeasurementSidecar =
        serde_json::from_str(&read_text(&side_path)?).map_err(|e| Error::parse(&side_path, e.to_string()))?;
    let mode = side.imaging_mode(&side_path)?;
    MeasurementFrameSet::new(values, side.frequencies, mode)
}

pub fn write_measurements(path: &Path, frames: &MeasurementFrameSet<f64>) -> Result<()> {
    write_matrix(path, frames.values())?;
    let side = serde_json::to_string_pretty(&MeasurementSidecar::from_frames(frames)).expect("serializable");
    write_text(&sidecar_path(path), &side)
}

/// Parses a JSON document, attributing failures to `path`.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e.to_string()))
}
