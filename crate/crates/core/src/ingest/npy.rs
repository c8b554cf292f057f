//! Minimal NPY v1.0 reader/writer for 4-axis little-endian float tensors.
//!
//! Only `<f4` and `<f8` payloads in C order are accepted. `f4` values are
//! widened to `f64` on read, which is exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// The NPY magic string.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Header blocks are padded so the payload starts on this alignment.
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn item_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self, IngestError> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            other => Err(IngestError::UnsupportedDtype(other.to_string())),
        }
    }
}

/// Dense `[layer, head, query, key]` tensor stored in C order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self, IngestError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(IngestError::PayloadSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn row_offset(&self, layer: usize, head: usize, query: usize) -> usize {
        let [_, h, q, k] = self.shape;
        ((layer * h + head) * q + query) * k
    }

    /// The key-axis row for one (layer, head, query).
    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let start = self.row_offset(layer, head, query);
        &self.data[start..start + self.shape[3]]
    }

    pub fn row_mut(&mut self, layer: usize, head: usize, query: usize) -> &mut [f64] {
        let start = self.row_offset(layer, head, query);
        let k = self.shape[3];
        &mut self.data[start..start + k]
    }

    /// The full `query × key` matrix of one head, row-major.
    pub fn head_matrix(&self, layer: usize, head: usize) -> &[f64] {
        let start = self.row_offset(layer, head, 0);
        &self.data[start..start + self.shape[2] * self.shape[3]]
    }

    pub fn head_matrix_mut(&mut self, layer: usize, head: usize) -> &mut [f64] {
        let start = self.row_offset(layer, head, 0);
        let len = self.shape[2] * self.shape[3];
        &mut self.data[start..start + len]
    }
}

/// A tensor together with the on-disk element type it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyTensor {
    pub tensor: Tensor4,
    pub dtype: Dtype,
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyTensor, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_npy_from(&mut BufReader::new(file))
}

pub fn read_npy_from<R: Read>(reader: &mut R) -> Result<NpyTensor, IngestError> {
    let mut preamble = [0u8; 10];
    read_exact_or(reader, &mut preamble, IngestError::BadMagic)?;
    if preamble[..6] != MAGIC {
        return Err(IngestError::BadMagic);
    }
    let (major, minor) = (preamble[6], preamble[7]);
    if (major, minor) != (1, 0) {
        return Err(IngestError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
    let mut header = vec![0u8; header_len];
    read_exact_or(
        reader,
        &mut header,
        IngestError::MalformedHeader("header truncated".into()),
    )?;
    let header =
        std::str::from_utf8(&header).map_err(|_| IngestError::MalformedHeader("header is not ASCII".into()))?;
    let dict = HeaderDict::parse(header)?;

    let dtype = Dtype::from_descr(&dict.descr)?;
    if dict.fortran_order {
        return Err(IngestError::UnsupportedOrder);
    }
    if dict.shape.len() != 4 {
        return Err(IngestError::ShapeMismatch { ndim: dict.shape.len() });
    }
    let shape = [dict.shape[0], dict.shape[1], dict.shape[2], dict.shape[3]];
    let count: usize = shape.iter().product();

    let mut payload = Vec::with_capacity(count * dtype.item_size());
    reader.read_to_end(&mut payload).map_err(|e| IngestError::Io {
        path: "<stream>".into(),
        source: e,
    })?;
    if payload.len() != count * dtype.item_size() {
        return Err(IngestError::PayloadSize {
            expected: count * dtype.item_size(),
            actual: payload.len(),
        });
    }

    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect(),
    };

    Ok(NpyTensor {
        tensor: Tensor4 { shape, data },
        dtype,
    })
}

pub fn write_npy(path: impl AsRef<Path>, tensor: &Tensor4, dtype: Dtype) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_npy_to(&mut writer, tensor, dtype).map_err(|e| IngestError::io(path, e))?;
    writer.flush().map_err(|e| IngestError::io(path, e))
}

/// Writes the NPY v1.0 encoding of `tensor`. Values are narrowed to `f32`
/// when `dtype` is [`Dtype::F32`].
pub fn write_npy_to<W: Write>(writer: &mut W, tensor: &Tensor4, dtype: Dtype) -> io::Result<()> {
    let [a, b, c, d] = tensor.shape;
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}, {}, {}), }}",
        dtype.descr(),
        a,
        b,
        c,
        d
    );
    // magic + version + u16 length + header + trailing newline
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    writer.write_all(&MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(header.len() as u16).to_le_bytes())?;
    writer.write_all(header.as_bytes())?;
    match dtype {
        Dtype::F32 => {
            for v in &tensor.data {
                writer.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for v in &tensor.data {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8], err: IngestError) -> Result<(), IngestError> {
    match reader.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(err),
        Err(e) => Err(IngestError::Io {
            path: "<stream>".into(),
            source: e,
        }),
    }
}

#[derive(Debug, PartialEq)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

#[derive(Debug, PartialEq)]
enum Literal {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

impl HeaderDict {
    /// Parses the Python dict literal written by `numpy.save`.
    fn parse(text: &str) -> Result<Self, IngestError> {
        let bad = |msg: &str| IngestError::MalformedHeader(msg.to_string());
        let body = text
            .trim()
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| bad("header is not a dict literal"))?;

        let mut cursor = Cursor::new(body);
        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;
        loop {
            cursor.skip_ws();
            if cursor.at_end() {
                break;
            }
            let key = match cursor.literal()? {
                Literal::Str(s) => s,
                _ => return Err(bad("dict key must be a string")),
            };
            cursor.skip_ws();
            cursor.expect(':')?;
            cursor.skip_ws();
            let value = cursor.literal()?;
            match (key.as_str(), value) {
                ("descr", Literal::Str(s)) => descr = Some(s),
                ("fortran_order", Literal::Bool(b)) => fortran_order = Some(b),
                ("shape", Literal::Tuple(t)) => shape = Some(t),
                (k, _) => return Err(bad(&format!("unexpected header entry '{k}'"))),
            }
            cursor.skip_ws();
            if !cursor.at_end() {
                cursor.expect(',')?;
            }
        }

        Ok(HeaderDict {
            descr: descr.ok_or_else(|| bad("missing 'descr'"))?,
            fortran_order: fortran_order.ok_or_else(|| bad("missing 'fortran_order'"))?,
            shape: shape.ok_or_else(|| bad("missing 'shape'"))?,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<(), IngestError> {
        if self.peek() == Some(c as u8) {
            self.pos += 1;
            Ok(())
        } else {
            Err(IngestError::MalformedHeader(format!(
                "expected '{c}' at offset {}",
                self.pos
            )))
        }
    }

    fn literal(&mut self) -> Result<Literal, IngestError> {
        match self.peek() {
            Some(q @ (b'\'' | b'"')) => {
                self.pos += 1;
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if c == q {
                        let s = String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned();
                        self.pos += 1;
                        return Ok(Literal::Str(s));
                    }
                    self.pos += 1;
                }
                Err(IngestError::MalformedHeader("unterminated string".into()))
            }
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            return Ok(Literal::Tuple(dims));
                        }
                        Some(b',') => self.pos += 1,
                        Some(c) if c.is_ascii_digit() => {
                            let start = self.pos;
                            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                                self.pos += 1;
                            }
                            let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
                            let dim = text
                                .parse()
                                .map_err(|_| IngestError::MalformedHeader(format!("bad dimension '{text}'")))?;
                            dims.push(dim);
                        }
                        _ => return Err(IngestError::MalformedHeader("bad shape tuple".into())),
                    }
                }
            }
            _ => {
                let rest = &self.bytes[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Literal::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Literal::Bool(false))
                } else {
                    Err(IngestError::MalformedHeader(format!(
                        "unrecognised literal at offset {}",
                        self.pos
                    )))
                }
            }
        }
    }
}
