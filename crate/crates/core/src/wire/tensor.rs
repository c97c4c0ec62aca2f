//! Tensor payload codec.
//!
//! ```text
//! dtype_code: u8 | ndims: u8 | dims: ndims x u32 LE | data: element bytes, row-major LE
//! ```

use super::WireError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0x01,
    F16 = 0x02,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, WireError> {
        match code {
            0x01 => Ok(Dtype::F32),
            0x02 => Ok(Dtype::F16),
            other => Err(WireError::BadDtype(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorPayload {
    pub dtype: Dtype,
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

/// Product of `dims` times the element width, or `None` on overflow.
pub fn data_len(dtype: Dtype, dims: &[u32]) -> Option<usize> {
    dims.iter()
        .try_fold(dtype.width() as u64, |acc, &d| {
            acc.checked_mul(u64::from(d))
        })
        .and_then(|n| usize::try_from(n).ok())
}

impl TensorPayload {
    pub fn new(dtype: Dtype, dims: Vec<u32>, data: Vec<u8>) -> Result<Self, WireError> {
        if dims.len() > u8::MAX as usize {
            return Err(WireError::Malformed(format!(
                "{} dims exceed 255",
                dims.len()
            )));
        }
        let expected = data_len(dtype, &dims)
            .ok_or_else(|| WireError::Malformed("tensor size overflows".into()))?;
        if expected != data.len() {
            return Err(WireError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dtype, dims, data })
    }

    pub fn from_f32(dims: Vec<u32>, values: &[f32]) -> Result<Self, WireError> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(Dtype::F32, dims, data)
    }

    pub fn element_count(&self) -> usize {
        self.data.len() / self.dtype.width()
    }

    pub fn header_len(&self) -> usize {
        2 + 4 * self.dims.len()
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.data.len()
    }

    /// Reads back 4-byte elements; `None` for other dtypes.
    pub fn to_f32(&self) -> Option<Vec<f32>> {
        (self.dtype == Dtype::F32).then(|| {
            self.data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect()
        })
    }
}

pub fn encode_tensor(t: &TensorPayload) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.encoded_len());
    encode_tensor_into(t, &mut out);
    out
}

pub fn encode_tensor_into(t: &TensorPayload, out: &mut Vec<u8>) {
    out.push(t.dtype as u8);
    out.push(t.dims.len() as u8);
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&t.data);
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode_tensor(buf: &[u8]) -> Result<TensorPayload, WireError> {
    let (t, used) = decode_tensor_prefix(buf)?;
    if used != buf.len() {
        return Err(WireError::LengthMismatch {
            expected: used,
            actual: buf.len(),
        });
    }
    Ok(t)
}

/// Decodes one tensor from the front of `buf` and reports the bytes consumed.
pub fn decode_tensor_prefix(buf: &[u8]) -> Result<(TensorPayload, usize), WireError> {
    if buf.len() < 2 {
        return Err(WireError::Truncated {
            needed: 2,
            available: buf.len(),
        });
    }
    let dtype = Dtype::from_code(buf[0])?;
    let ndims = buf[1] as usize;
    let header = 2 + 4 * ndims;
    if buf.len() < header {
        return Err(WireError::Truncated {
            needed: header,
            available: buf.len(),
        });
    }
    let dims: Vec<u32> = buf[2..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let len = data_len(dtype, &dims)
        .and_then(|l| l.checked_add(header))
        .ok_or_else(|| WireError::Malformed("tensor size overflows".into()))?;
    if buf.len() < len {
        return Err(WireError::Truncated {
            needed: len,
            available: buf.len(),
        });
    }
    Ok((
        TensorPayload {
            dtype,
            dims,
            data: buf[header..len].to_vec(),
        },
        len,
    ))
}
