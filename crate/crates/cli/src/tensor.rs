//! The BFPT tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic   "BFPT"
//! offset 4   u16     version (1)
//! offset 6   u16     dtype: 0 f32, 1 packed q3k blocks, 2 packed q8k blocks
//! offset 8   u16     ndim
//! offset 10  u64[n]  dims, row-major
//! then       payload
//! ```
//!
//! Packed dtypes require the last dim to be a multiple of 256; the
//! payload is the row-major sequence of packed super-blocks (110 or 258
//! bytes each). Readers validate magic, version, dims and the exact
//! payload length, reporting byte offsets on failure.

use std::fs;
use std::path::Path;

use sbmm_core::codec::{
    pack_q3k, pack_q8k, unpack_q3k, unpack_q8k, Q3KMatrix, Q8KMatrix, SuperBlockQ3K, SuperBlockQ8K,
    Q3K_PACKED_LEN, Q8K_PACKED_LEN, SB_LEN,
};
use sbmm_core::Error as CoreError;

use crate::error::{io_err, CliError, Result};

pub const MAGIC: [u8; 4] = *b"BFPT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    Q3K,
    Q8K,
}

impl DType {
    pub fn code(&self) -> u16 {
        match self {
            DType::F32 => 0,
            DType::Q3K => 1,
            DType::Q8K => 2,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::Q3K),
            2 => Ok(DType::Q8K),
            other => Err(format_err(format!("unknown dtype code {other}"), 6)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::Q3K => "q3k",
            DType::Q8K => "q8k",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    Q3K(Vec<SuperBlockQ3K>),
    Q8K(Vec<SuperBlockQ8K>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: TensorData,
}

fn format_err(msg: String, offset: usize) -> CliError {
    CliError::Core(CoreError::Format(format!("{msg} (byte offset {offset})")))
}

fn elem_count(dims: &[u64]) -> Result<u64> {
    if dims.is_empty() {
        return Err(CliError::Core(CoreError::Shape(
            "tensor needs at least one dimension".into(),
        )));
    }
    let mut total: u64 = 1;
    for &d in dims {
        if d == 0 {
            return Err(CliError::Core(CoreError::Shape(
                "zero-sized dimensions are not allowed".into(),
            )));
        }
        total = total
            .checked_mul(d)
            .ok_or_else(|| CliError::Core(CoreError::Shape("dimension overflow".into())))?;
    }
    Ok(total)
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let n = elem_count(&dims)?;
        let ok = match &data {
            TensorData::F32(v) => v.len() as u64 == n,
            TensorData::Q3K(b) => {
                dims.last().unwrap().is_multiple_of(SB_LEN as u64)
                    && b.len() as u64 * SB_LEN as u64 == n
            }
            TensorData::Q8K(b) => {
                dims.last().unwrap().is_multiple_of(SB_LEN as u64)
                    && b.len() as u64 * SB_LEN as u64 == n
            }
        };
        if !ok {
            return Err(CliError::Core(CoreError::Shape(format!(
                "payload does not match dims {dims:?}"
            ))));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f32(dims: Vec<u64>, values: Vec<f32>) -> Result<Self> {
        Tensor::new(dims, TensorData::F32(values))
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        match &self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::Q3K(_) => DType::Q3K,
            TensorData::Q8K(_) => DType::Q8K,
        }
    }

    pub fn elem_count(&self) -> u64 {
        elem_count(&self.dims).expect("validated at construction")
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(CliError::Core(CoreError::Format(format!(
                "expected an f32 tensor, found {}",
                self.dtype().name()
            )))),
        }
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [rows, cols] => Ok((*rows as usize, *cols as usize)),
            other => Err(CliError::Core(CoreError::Shape(format!(
                "expected a 2-d tensor, found {} dims",
                other.len()
            )))),
        }
    }

    pub fn as_q3k_matrix(&self) -> Result<Q3KMatrix> {
        let (rows, cols) = self.matrix_dims()?;
        match &self.data {
            TensorData::Q3K(blocks) => {
                Ok(Q3KMatrix::from_blocks(rows, cols / SB_LEN, blocks.clone())?)
            }
            _ => Err(CliError::Core(CoreError::Format(format!(
                "expected a q3k tensor, found {}",
                self.dtype().name()
            )))),
        }
    }

    pub fn as_q8k_matrix(&self) -> Result<Q8KMatrix> {
        let (rows, cols) = self.matrix_dims()?;
        match &self.data {
            TensorData::Q8K(blocks) => {
                Ok(Q8KMatrix::from_blocks(rows, cols / SB_LEN, blocks.clone())?)
            }
            _ => Err(CliError::Core(CoreError::Format(format!(
                "expected a q8k tensor, found {}",
                self.dtype().name()
            )))),
        }
    }

    /// Serialize to the BFPT byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.dtype().code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(values) => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            TensorData::Q3K(blocks) => {
                for b in blocks {
                    out.extend_from_slice(&pack_q3k(b));
                }
            }
            TensorData::Q8K(blocks) => {
                for b in blocks {
                    out.extend_from_slice(&pack_q8k(b));
                }
            }
        }
        out
    }

    /// Parse the BFPT byte layout, validating strictly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        let need = |offset: usize, len: usize, what: &str| -> Result<&[u8]> {
            bytes
                .get(offset..offset + len)
                .ok_or_else(|| format_err(format!("truncated {what}"), offset))
        };
        let magic = need(0, 4, "magic")?;
        if magic != MAGIC {
            return Err(format_err(format!("bad magic {magic:02x?}"), 0));
        }
        let version = u16::from_le_bytes(need(4, 2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}"), 4));
        }
        let dtype = DType::from_code(u16::from_le_bytes(need(6, 2, "dtype")?.try_into().unwrap()))?;
        let ndim = u16::from_le_bytes(need(8, 2, "ndim")?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut offset = 10;
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(
                need(offset, 8, "dims")?.try_into().unwrap(),
            ));
            offset += 8;
        }
        let n = elem_count(&dims)?;
        if matches!(dtype, DType::Q3K | DType::Q8K)
            && !dims.last().unwrap().is_multiple_of(SB_LEN as u64)
        {
            return Err(format_err(
                format!(
                    "dtype {} requires the last dim to be a multiple of {SB_LEN}",
                    dtype.name()
                ),
                8,
            ));
        }
        let payload_len = match dtype {
            DType::F32 => n * 4,
            DType::Q3K => n / SB_LEN as u64 * Q3K_PACKED_LEN as u64,
            DType::Q8K => n / SB_LEN as u64 * Q8K_PACKED_LEN as u64,
        } as usize;
        let payload = need(offset, payload_len, "payload")?;
        if bytes.len() != offset + payload_len {
            return Err(format_err(
                format!("{} trailing bytes", bytes.len() - offset - payload_len),
                offset + payload_len,
            ));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::Q3K => TensorData::Q3K(
                payload
                    .chunks_exact(Q3K_PACKED_LEN)
                    .enumerate()
                    .map(|(i, c)| {
                        unpack_q3k(c).map_err(|e| {
                            format_err(format!("block {i}: {e}"), offset + i * Q3K_PACKED_LEN)
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            DType::Q8K => TensorData::Q8K(
                payload
                    .chunks_exact(Q8K_PACKED_LEN)
                    .enumerate()
                    .map(|(i, c)| {
                        unpack_q8k(c).map_err(|e| {
                            format_err(format!("block {i}: {e}"), offset + i * Q8K_PACKED_LEN)
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Tensor::new(dims, data)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes()).map_err(io_err(path.as_ref()))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor> {
        let bytes = fs::read(path.as_ref()).map_err(io_err(path.as_ref()))?;
        Tensor::from_bytes(&bytes)
    }
}
