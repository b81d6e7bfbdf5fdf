//! Reading and writing arrays in the numpy `.npy` v1.0 format.
//!
//! Only C-order, little-endian, one- and two-dimensional numeric arrays are
//! supported. Writing always produces `<f8` or `<f4`; reading additionally
//! accepts little-endian integer descriptors (label files are commonly int64).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

/// The npy magic string.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Header block (magic + version + length + dict) is padded to this multiple.
const HEADER_ALIGN: usize = 64;

/// On-disk floating point precision.
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
}

/// Element type found in a file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Float { bytes: usize },
    Int { bytes: usize },
    UInt { bytes: usize },
}

impl ElementType {
    fn parse(descr: &str) -> Result<Self> {
        let mut chars = descr.chars();
        let endian = chars
            .next()
            .ok_or_else(|| Error::NpyHeader("empty descr".into()))?;
        let kind = chars
            .next()
            .ok_or_else(|| Error::NpyHeader(format!("descr {descr:?} too short")))?;
        let bytes: usize = chars
            .as_str()
            .parse()
            .map_err(|_| Error::NpyUnsupported(format!("dtype {descr:?}")))?;
        let little = match endian {
            '<' => true,
            '|' => bytes == 1,
            '>' => return Err(Error::NpyUnsupported(format!("big-endian dtype {descr:?}"))),
            _ => false,
        };
        if !little {
            return Err(Error::NpyUnsupported(format!("dtype {descr:?}")));
        }
        match (kind, bytes) {
            ('f', 4 | 8) => Ok(ElementType::Float { bytes }),
            ('i', 1 | 2 | 4 | 8) => Ok(ElementType::Int { bytes }),
            ('u', 1 | 2 | 4 | 8) => Ok(ElementType::UInt { bytes }),
            _ => Err(Error::NpyUnsupported(format!("dtype {descr:?}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::Float { bytes } | ElementType::Int { bytes } | ElementType::UInt { bytes } => {
                bytes
            }
        }
    }

    /// The float dtype this element type corresponds to, if any.
    pub fn float_dtype(self) -> Option<Dtype> {
        match self {
            ElementType::Float { bytes: 4 } => Some(Dtype::F32),
            ElementType::Float { bytes: 8 } => Some(Dtype::F64),
            _ => None,
        }
    }

    fn decode(self, chunk: &[u8]) -> f64 {
        match self {
            ElementType::Float { bytes: 4 } => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            ElementType::Float { .. } => f64::from_le_bytes(chunk.try_into().unwrap()),
            ElementType::Int { bytes } => {
                let mut buf = [0u8; 8];
                buf[..bytes].copy_from_slice(chunk);
                // sign-extend
                if chunk[bytes - 1] & 0x80 != 0 {
                    buf[bytes..].fill(0xff);
                }
                i64::from_le_bytes(buf) as f64
            }
            ElementType::UInt { bytes } => {
                let mut buf = [0u8; 8];
                buf[..bytes].copy_from_slice(chunk);
                u64::from_le_bytes(buf) as f64
            }
        }
    }
}

/// A decoded array: its shape, element type, and values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub element: ElementType,
    pub values: Vec<f64>,
}

impl NpyArray {
    /// Interprets the array as a matrix; 1-D arrays become a single row.
    pub fn into_matrix(self) -> Result<DenseMatrix> {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::NpyUnsupported(format!(
                    "{}-D array (only 1-D and 2-D are supported)",
                    other.len()
                )))
            }
        };
        DenseMatrix::new(rows, cols, self.values)
    }
}

fn header_dict(descr: &str, shape: &[usize]) -> String {
    let shape = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}")
}

fn encode(values: &[f64], shape: &[usize], dtype: Dtype) -> Vec<u8> {
    let dict = header_dict(dtype.descr(), shape);
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    let header_len = dict.len() + padding + 1;

    let elem = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let mut out = Vec::with_capacity(unpadded + padding + values.len() * elem);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(out.len() + padding, b' ');
    out.push(b'\n');
    for &v in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Serializes a matrix as a 2-D array of shape `(rows, cols)`.
pub fn encode_array(matrix: &DenseMatrix, dtype: Dtype) -> Vec<u8> {
    encode(matrix.values(), &[matrix.rows(), matrix.cols()], dtype)
}

/// Serializes a slice as a 1-D array of shape `(len,)`.
pub fn encode_vector(values: &[f64], dtype: Dtype) -> Vec<u8> {
    encode(values, &[values.len()], dtype)
}

pub fn write_array(matrix: &DenseMatrix, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_array(matrix, dtype)).map_err(|e| Error::io(path, e))
}

pub fn write_vector(values: &[f64], path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_vector(values, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a 1-D or 2-D array file as a matrix.
pub fn read_array(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_npy(path)?.into_matrix()
}

/// Decodes a complete `.npy` byte buffer.
pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || bytes[..6] != MAGIC {
        return Err(Error::NpyHeader("missing magic string".into()));
    }
    let (header_len, header_start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::NpyHeader("truncated header length".into()));
            }
            (
                u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
                12,
            )
        }
        v => return Err(Error::NpyHeader(format!("unknown format version {v}"))),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(Error::NpyHeader("truncated header".into()));
    }
    let text = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| Error::NpyHeader("header is not valid text".into()))?;
    let header = HeaderParser::new(text).parse()?;
    if header.fortran_order {
        return Err(Error::NpyUnsupported("fortran_order arrays".into()));
    }
    if header.shape.len() > 2 {
        return Err(Error::NpyUnsupported(format!(
            "{}-D array (only 1-D and 2-D are supported)",
            header.shape.len()
        )));
    }
    if header.shape.is_empty() {
        return Err(Error::NpyUnsupported("0-D array".into()));
    }
    let element = ElementType::parse(&header.descr)?;
    let count: usize = header.shape.iter().product();
    let payload = &bytes[data_start..];
    let expected = count * element.size();
    if payload.len() != expected {
        return Err(Error::Shape(format!(
            "shape {:?} needs {expected} payload bytes, file has {}",
            header.shape,
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(element.size())
        .map(|chunk| element.decode(chunk))
        .collect();
    Ok(NpyArray {
        shape: header.shape,
        element,
        values,
    })
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parser for the restricted python-literal dict numpy writes.
struct HeaderParser<'a> {
    src: &'a str,
    pos: usize,
}

enum Literal {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

impl<'a> HeaderParser<'a> {
    fn new(src: &'a str) -> Self {
        HeaderParser { src, pos: 0 }
    }

    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::NpyHeader(format!("{msg} at offset {}", self.pos)))
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            self.err(&format!("expected {c:?}"))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return self.err("expected string"),
        };
        self.pos += 1;
        let rest = &self.src[self.pos..];
        match rest.find(quote) {
            Some(end) => {
                self.pos += end + 1;
                Ok(rest[..end].to_string())
            }
            None => self.err("unterminated string"),
        }
    }

    fn integer(&mut self) -> Result<usize> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits == 0 {
            return self.err("expected integer");
        }
        let value = rest[..digits]
            .parse()
            .map_err(|_| Error::NpyHeader("shape dimension overflow".into()))?;
        self.pos += digits;
        // python 2 long suffix
        if self.src[self.pos..].starts_with('L') {
            self.pos += 1;
        }
        Ok(value)
    }

    fn literal(&mut self) -> Result<Literal> {
        match self.peek() {
            Some('\'' | '"') => Ok(Literal::Str(self.string()?)),
            Some('(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.peek() == Some(')') {
                        self.pos += 1;
                        break;
                    }
                    dims.push(self.integer()?);
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(')') => {}
                        _ => return self.err("expected ',' or ')' in shape"),
                    }
                }
                Ok(Literal::Tuple(dims))
            }
            _ => {
                let rest = &self.src[self.pos..];
                if rest.starts_with("True") {
                    self.pos += 4;
                    Ok(Literal::Bool(true))
                } else if rest.starts_with("False") {
                    self.pos += 5;
                    Ok(Literal::Bool(false))
                } else {
                    self.err("unsupported header value")
                }
            }
        }
    }

    fn parse(mut self) -> Result<Header> {
        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;
        self.expect('{')?;
        loop {
            if self.peek() == Some('}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(':')?;
            match (key.as_str(), self.literal()?) {
                ("descr", Literal::Str(s)) => descr = Some(s),
                ("fortran_order", Literal::Bool(b)) => fortran_order = Some(b),
                ("shape", Literal::Tuple(t)) => shape = Some(t),
                (k, _) => return self.err(&format!("unexpected key or value type for {k:?}")),
            }
            match self.peek() {
                Some(',') => self.pos += 1,
                Some('}') => {}
                _ => return self.err("expected ',' or '}'"),
            }
        }
        if !self.src[self.pos..].trim().is_empty() {
            return self.err("trailing characters after header dict");
        }
        match (descr, fortran_order, shape) {
            (Some(descr), Some(fortran_order), Some(shape)) => Ok(Header {
                descr,
                fortran_order,
                shape,
            }),
            _ => Err(Error::NpyHeader(
                "header must define descr, fortran_order and shape".into(),
            )),
        }
    }
}
