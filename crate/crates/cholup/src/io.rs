//! Matrix file I/O: the CWM1 binary container and a CSV twin.
//!
//! Binary layout (little-endian throughout):
//!
//! | bytes  | content                                             |
//! |--------|-----------------------------------------------------|
//! | 0–3    | magic `CWM1`                                        |
//! | 4      | precision: 0 = binary32, 1 = binary64               |
//! | 5      | layout: 0 = dense row-major, 1 = packed-upper,      |
//! |        | 2 = column-major update matrix                      |
//! | 6–7    | reserved, must be zero                              |
//! | 8–15   | rows (u64 LE)                                       |
//! | 16–23  | cols (u64 LE; equals rows for packed-upper)         |
//! | 24–    | raw little-endian element payload                   |
//!
//! The CSV twin (chosen whenever the path ends in `.csv`) starts with the
//! header `CWM1,<layout>,<precision>,<rows>,<cols>` followed by one line per
//! matrix row. Elements are printed with 17 (f64) / 9 (f32) significant
//! digits so the round trip is value-exact. The two forms are distinguished
//! on read by byte 4: `,` for CSV, 0/1 for binary.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::matrix::{packed_len, DenseMat, MatrixError, TriFactor, UpdateMat};
use crate::scalar::{Precision, Scalar};

const MAGIC: &[u8; 4] = b"CWM1";
const HEADER_LEN: usize = 24;

/// Storage layout selector carried in the file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Dense,
    PackedUpper,
    Update,
}

impl Layout {
    pub fn code(self) -> u8 {
        match self {
            Layout::Dense => 0,
            Layout::PackedUpper => 1,
            Layout::Update => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Layout::Dense),
            1 => Some(Layout::PackedUpper),
            2 => Some(Layout::Update),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Dense => "dense",
            Layout::PackedUpper => "packed-upper",
            Layout::Update => "update",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "dense" => Some(Layout::Dense),
            "packed-upper" => Some(Layout::PackedUpper),
            "update" => Some(Layout::Update),
            _ => None,
        }
    }
}

/// A matrix of any layout and precision, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    DenseF32(DenseMat<f32>),
    DenseF64(DenseMat<f64>),
    TriF32(TriFactor<f32>),
    TriF64(TriFactor<f64>),
    UpdateF32(UpdateMat<f32>),
    UpdateF64(UpdateMat<f64>),
}

impl Matrix {
    pub fn precision(&self) -> Precision {
        match self {
            Matrix::DenseF32(_) | Matrix::TriF32(_) | Matrix::UpdateF32(_) => Precision::Single,
            Matrix::DenseF64(_) | Matrix::TriF64(_) | Matrix::UpdateF64(_) => Precision::Double,
        }
    }

    pub fn layout(&self) -> Layout {
        match self {
            Matrix::DenseF32(_) | Matrix::DenseF64(_) => Layout::Dense,
            Matrix::TriF32(_) | Matrix::TriF64(_) => Layout::PackedUpper,
            Matrix::UpdateF32(_) | Matrix::UpdateF64(_) => Layout::Update,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Matrix::DenseF32(m) => m.rows(),
            Matrix::DenseF64(m) => m.rows(),
            Matrix::TriF32(l) => l.n(),
            Matrix::TriF64(l) => l.n(),
            Matrix::UpdateF32(v) => v.n(),
            Matrix::UpdateF64(v) => v.n(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Matrix::DenseF32(m) => m.cols(),
            Matrix::DenseF64(m) => m.cols(),
            Matrix::TriF32(l) => l.n(),
            Matrix::TriF64(l) => l.n(),
            Matrix::UpdateF32(v) => v.k(),
            Matrix::UpdateF64(v) => v.k(),
        }
    }
}

/// Errors from reading or writing matrix files.
#[derive(Debug)]
pub enum FileError {
    Io { path: String, source: io::Error },
    BadMagic,
    BadPrecisionCode(u8),
    BadLayoutCode(u8),
    ReservedNonzero,
    Truncated { expected_bytes: usize, actual_bytes: usize },
    TrailingBytes { expected_bytes: usize, actual_bytes: usize },
    NanPayload { index: usize },
    CsvHeader(String),
    CsvShape { line: usize, expected_fields: usize, actual_fields: usize },
    CsvRowCount { expected: usize, actual: usize },
    CsvValue { line: usize, field: usize, text: String },
    Shape(MatrixError),
}

impl fmt::Display for FileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileError::Io { path, source } => write!(f, "{path}: {source}"),
            FileError::BadMagic => write!(f, "not a CWM1 file (bad magic)"),
            FileError::BadPrecisionCode(c) => write!(f, "unknown precision code {c}"),
            FileError::BadLayoutCode(c) => write!(f, "unknown layout code {c}"),
            FileError::ReservedNonzero => write!(f, "reserved header bytes are nonzero"),
            FileError::Truncated { expected_bytes, actual_bytes } => {
                write!(f, "truncated payload: expected {expected_bytes} bytes, found {actual_bytes}")
            }
            FileError::TrailingBytes { expected_bytes, actual_bytes } => {
                write!(f, "trailing bytes: expected {expected_bytes} bytes, found {actual_bytes}")
            }
            FileError::NanPayload { index } => write!(f, "NaN in payload at element {index}"),
            FileError::CsvHeader(msg) => write!(f, "malformed CSV header: {msg}"),
            FileError::CsvShape { line, expected_fields, actual_fields } => {
                write!(f, "CSV line {line}: expected {expected_fields} fields, found {actual_fields}")
            }
            FileError::CsvRowCount { expected, actual } => {
                write!(f, "CSV: expected {expected} data rows, found {actual}")
            }
            FileError::CsvValue { line, field, text } => {
                write!(f, "CSV line {line}, field {field}: cannot parse {text:?} as a number")
            }
            FileError::Shape(e) => write!(f, "invalid shape: {e}"),
        }
    }
}

impl std::error::Error for FileError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            FileError::Io { source, .. } => Some(source),
            FileError::Shape(e) => Some(e),
            _ => None,
        }
    }
}

impl From<MatrixError> for FileError {
    fn from(e: MatrixError) -> Self {
        FileError::Shape(e)
    }
}

fn io_err(path: &Path, source: io::Error) -> FileError {
    FileError::Io { path: path.display().to_string(), source }
}

fn is_csv_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Number of payload elements for a given layout and shape.
fn payload_len(layout: Layout, rows: usize, cols: usize) -> usize {
    match layout {
        Layout::Dense => rows * cols,
        Layout::PackedUpper => packed_len(rows),
        Layout::Update => rows * cols,
    }
}

/// Read a matrix file, auto-detecting binary vs CSV form.
pub fn mat_read(path: &Path) -> Result<Matrix, FileError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() >= 5 && &bytes[0..4] == MAGIC && bytes[4] == b',' {
        let text = String::from_utf8_lossy(&bytes);
        return read_csv(&text);
    }
    read_binary(&bytes)
}

/// Write a matrix file; CSV when the path ends in `.csv`, binary otherwise.
pub fn mat_write(m: &Matrix, path: &Path) -> Result<(), FileError> {
    let bytes = if is_csv_path(path) { render_csv(m).into_bytes() } else { render_binary(m) };
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_binary(bytes: &[u8]) -> Result<Matrix, FileError> {
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(FileError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FileError::Truncated { expected_bytes: HEADER_LEN, actual_bytes: bytes.len() });
    }
    let precision =
        Precision::from_code(bytes[4]).ok_or(FileError::BadPrecisionCode(bytes[4]))?;
    let layout = Layout::from_code(bytes[5]).ok_or(FileError::BadLayoutCode(bytes[5]))?;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(FileError::ReservedNonzero);
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if layout == Layout::PackedUpper && cols != rows {
        return Err(FileError::Shape(MatrixError::DimensionMismatch {
            context: "packed-upper header",
            left: rows,
            right: cols,
        }));
    }
    let elems = payload_len(layout, rows, cols);
    let expected = HEADER_LEN + elems * precision.elem_bytes();
    if bytes.len() < expected {
        return Err(FileError::Truncated { expected_bytes: expected, actual_bytes: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FileError::TrailingBytes { expected_bytes: expected, actual_bytes: bytes.len() });
    }
    let payload = &bytes[HEADER_LEN..];
    match precision {
        Precision::Single => build(layout, rows, cols, decode_payload::<f32>(payload)?),
        Precision::Double => build(layout, rows, cols, decode_payload::<f64>(payload)?),
    }
}

fn decode_payload<T: Scalar>(payload: &[u8]) -> Result<Vec<T>, FileError> {
    let size = T::PRECISION.elem_bytes();
    let mut data = Vec::with_capacity(payload.len() / size);
    for (index, chunk) in payload.chunks_exact(size).enumerate() {
        let x = T::read_le(chunk);
        if x.is_nan() {
            return Err(FileError::NanPayload { index });
        }
        data.push(x);
    }
    Ok(data)
}

fn build<T: Scalar>(
    layout: Layout,
    rows: usize,
    cols: usize,
    data: Vec<T>,
) -> Result<Matrix, FileError> {
    Ok(match layout {
        Layout::Dense => wrap_dense(DenseMat::from_data(rows, cols, data)?),
        Layout::PackedUpper => wrap_tri(TriFactor::from_data(rows, data)?),
        Layout::Update => wrap_update(UpdateMat::from_data(rows, cols, data)?),
    })
}

fn wrap_dense<T: Scalar>(m: DenseMat<T>) -> Matrix {
    match T::PRECISION {
        Precision::Single => Matrix::DenseF32(reinterpret(m)),
        Precision::Double => Matrix::DenseF64(reinterpret(m)),
    }
}

fn wrap_tri<T: Scalar>(l: TriFactor<T>) -> Matrix {
    match T::PRECISION {
        Precision::Single => Matrix::TriF32(reinterpret(l)),
        Precision::Double => Matrix::TriF64(reinterpret(l)),
    }
}

fn wrap_update<T: Scalar>(v: UpdateMat<T>) -> Matrix {
    match T::PRECISION {
        Precision::Single => Matrix::UpdateF32(reinterpret(v)),
        Precision::Double => Matrix::UpdateF64(reinterpret(v)),
    }
}

// Identity conversion between a generic container and its concrete-typed
// twin; the match on T::PRECISION above guarantees the types line up.
fn reinterpret<A: 'static, B: 'static>(x: A) -> B {
    let mut slot = Some(x);
    let any: &mut dyn std::any::Any = &mut slot;
    any.downcast_mut::<Option<B>>()
        .expect("precision match guarantees the concrete type")
        .take()
        .unwrap()
}

fn render_binary(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(m.precision().code());
    out.push(m.layout().code());
    out.extend_from_slice(&[0u8, 0u8]);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match m {
        Matrix::DenseF32(x) => encode_payload(x.data(), &mut out),
        Matrix::DenseF64(x) => encode_payload(x.data(), &mut out),
        Matrix::TriF32(x) => encode_payload(x.data(), &mut out),
        Matrix::TriF64(x) => encode_payload(x.data(), &mut out),
        Matrix::UpdateF32(x) => encode_payload(x.data(), &mut out),
        Matrix::UpdateF64(x) => encode_payload(x.data(), &mut out),
    }
    out
}

fn encode_payload<T: Scalar>(data: &[T], out: &mut Vec<u8>) {
    for &x in data {
        x.write_le(out);
    }
}

fn render_csv(m: &Matrix) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "CWM1,{},{},{},{}\n",
        m.layout().name(),
        m.precision().name(),
        m.rows(),
        m.cols()
    ));
    match m {
        Matrix::DenseF32(x) => csv_dense(x, &mut out),
        Matrix::DenseF64(x) => csv_dense(x, &mut out),
        Matrix::TriF32(x) => csv_tri(x, &mut out),
        Matrix::TriF64(x) => csv_tri(x, &mut out),
        Matrix::UpdateF32(x) => csv_update(x, &mut out),
        Matrix::UpdateF64(x) => csv_update(x, &mut out),
    }
    out
}

fn push_csv_row<T: Scalar>(fields: impl Iterator<Item = T>, out: &mut String) {
    let mut first = true;
    for x in fields {
        if !first {
            out.push(',');
        }
        out.push_str(&x.fmt_csv());
        first = false;
    }
    out.push('\n');
}

fn csv_dense<T: Scalar>(m: &DenseMat<T>, out: &mut String) {
    for i in 0..m.rows() {
        push_csv_row((0..m.cols()).map(|j| m[(i, j)]), out);
    }
}

// One CSV line per factor row: row i carries its n − i stored columns.
fn csv_tri<T: Scalar>(l: &TriFactor<T>, out: &mut String) {
    for i in 0..l.n() {
        push_csv_row((i..l.n()).map(|j| l[(i, j)]), out);
    }
}

// Presented row-major for readability even though storage is column-major.
fn csv_update<T: Scalar>(v: &UpdateMat<T>, out: &mut String) {
    for i in 0..v.n() {
        push_csv_row((0..v.k()).map(|e| v[(i, e)]), out);
    }
}

fn read_csv(text: &str) -> Result<Matrix, FileError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| FileError::CsvHeader("empty file".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 5 || fields[0] != "CWM1" {
        return Err(FileError::CsvHeader(format!("expected 5 fields starting with CWM1, got {header:?}")));
    }
    let layout = Layout::from_name(fields[1])
        .ok_or_else(|| FileError::CsvHeader(format!("unknown layout {:?}", fields[1])))?;
    let precision = match fields[2] {
        "f32" => Precision::Single,
        "f64" => Precision::Double,
        other => return Err(FileError::CsvHeader(format!("unknown precision {other:?}"))),
    };
    let rows: usize = fields[3]
        .trim()
        .parse()
        .map_err(|_| FileError::CsvHeader(format!("bad rows field {:?}", fields[3])))?;
    let cols: usize = fields[4]
        .trim()
        .parse()
        .map_err(|_| FileError::CsvHeader(format!("bad cols field {:?}", fields[4])))?;
    if layout == Layout::PackedUpper && cols != rows {
        return Err(FileError::Shape(MatrixError::DimensionMismatch {
            context: "packed-upper header",
            left: rows,
            right: cols,
        }));
    }
    match precision {
        Precision::Single => read_csv_body::<f32>(layout, rows, cols, lines),
        Precision::Double => read_csv_body::<f64>(layout, rows, cols, lines),
    }
}

fn read_csv_body<'a, T: Scalar>(
    layout: Layout,
    rows: usize,
    cols: usize,
    lines: impl Iterator<Item = &'a str>,
) -> Result<Matrix, FileError> {
    // Expected field count per data line, by line index.
    let width_of = |row: usize| -> usize {
        match layout {
            Layout::Dense | Layout::Update => cols,
            Layout::PackedUpper => rows - row,
        }
    };
    let mut grid: Vec<Vec<T>> = Vec::with_capacity(rows);
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 2; // 1-based, header is line 1
        if grid.len() == rows {
            return Err(FileError::CsvRowCount { expected: rows, actual: grid.len() + 1 });
        }
        let expected_fields = width_of(grid.len());
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_fields {
            return Err(FileError::CsvShape {
                line: lineno,
                expected_fields,
                actual_fields: fields.len(),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for (fidx, field) in fields.iter().enumerate() {
            let x: f64 = field.trim().parse().map_err(|_| FileError::CsvValue {
                line: lineno,
                field: fidx + 1,
                text: field.to_string(),
            })?;
            let value = T::from_f64(x);
            if value.is_nan() {
                return Err(FileError::NanPayload { index: fidx });
            }
            row.push(value);
        }
        grid.push(row);
    }
    if grid.len() != rows {
        return Err(FileError::CsvRowCount { expected: rows, actual: grid.len() });
    }
    let data: Vec<T> = match layout {
        Layout::Dense | Layout::PackedUpper => grid.into_iter().flatten().collect(),
        // Transpose the row-major presentation back to column-major storage.
        Layout::Update => {
            let mut data = Vec::with_capacity(rows * cols);
            for e in 0..cols {
                for row in &grid {
                    data.push(row[e]);
                }
            }
            data
        }
    };
    build(layout, rows, cols, data)
}

// f32 CSV values are parsed via f64 then narrowed; a 9-significant-digit
// decimal printed from an f32 converts to the nearest f64 and back to the
// identical f32, so the round trip stays exact.
