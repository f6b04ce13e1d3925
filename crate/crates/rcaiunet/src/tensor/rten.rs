//! The "RTEN" binary tensor format and the flat named-tensor archive built
//! from it, used for weights and dataset caching.
//!
//! One record is: magic `RTEN`, u8 version (1), u8 dtype (0 = f32, 1 = f64),
//! u8 rank, rank × u64 little-endian dims, then the raw little-endian scalar
//! data. An archive is a concatenation of records, each prefixed by a u16
//! little-endian name length and the UTF-8 name bytes.

use std::fmt;
use std::io::{self, Read, Write};

use super::{DType, Tensor};

const MAGIC: &[u8; 4] = b"RTEN";
const VERSION: u8 = 1;

/// Errors from RTEN encoding/decoding.
#[derive(Debug)]
pub enum RtenError {
    Io(io::Error),
    BadMagic([u8; 4]),
    BadVersion(u8),
    BadDtype(u8),
    BadName,
    BadShape,
}

impl fmt::Display for RtenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RtenError::Io(e) => write!(f, "rten i/o error: {e}"),
            RtenError::BadMagic(m) => write!(f, "bad rten magic {m:?}"),
            RtenError::BadVersion(v) => write!(f, "unsupported rten version {v}"),
            RtenError::BadDtype(d) => write!(f, "unknown rten dtype tag {d}"),
            RtenError::BadName => write!(f, "archive entry name is not valid UTF-8"),
            RtenError::BadShape => write!(f, "rten dims are invalid"),
        }
    }
}

impl std::error::Error for RtenError {}

impl From<io::Error> for RtenError {
    fn from(e: io::Error) -> Self {
        RtenError::Io(e)
    }
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

/// Writes a single RTEN record.
pub fn write_record(w: &mut impl Write, t: &Tensor) -> Result<(), RtenError> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype_tag(t.dtype()), t.shape().len() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match t.dtype() {
        DType::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a single RTEN record.
pub fn read_record(r: &mut impl Read) -> Result<Tensor, RtenError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RtenError::BadMagic(magic));
    }
    let mut head = [0u8; 3];
    r.read_exact(&mut head)?;
    if head[0] != VERSION {
        return Err(RtenError::BadVersion(head[0]));
    }
    let dtype = match head[1] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(RtenError::BadDtype(other)),
    };
    let rank = head[2] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    if rank == 0 || shape.iter().any(|&d| d == 0) {
        return Err(RtenError::BadShape);
    }
    let mut data = Vec::with_capacity(n);
    match dtype {
        DType::F32 => {
            let mut b = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
        }
        DType::F64 => {
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
        }
    }
    Tensor::from_vec(&shape, data, dtype).map_err(|_| RtenError::BadShape)
}

/// Appends one named entry to an archive stream.
pub fn write_named(w: &mut impl Write, name: &str, t: &Tensor) -> Result<(), RtenError> {
    let bytes = name.as_bytes();
    assert!(bytes.len() <= u16::MAX as usize, "entry name too long");
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    write_record(w, t)
}

/// Reads named entries until EOF, preserving order.
pub fn read_archive(r: &mut impl Read) -> Result<Vec<(String, Tensor)>, RtenError> {
    let mut out = Vec::new();
    loop {
        let mut len_bytes = [0u8; 2];
        match r.read_exact(&mut len_bytes) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u16::from_le_bytes(len_bytes) as usize;
        let mut name_bytes = vec![0u8; len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| RtenError::BadName)?;
        let t = read_record(r)?;
        out.push((name, t));
    }
    Ok(out)
}
