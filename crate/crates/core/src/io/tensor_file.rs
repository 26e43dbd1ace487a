use super::{put_dims, Reader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"SRFT";

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    /// Narrows 64-bit payloads.
    pub fn into_f32(self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t,
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }
}

pub fn write_tensor<T: Real>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let elem = if T::DTYPE == 0 { 4 } else { 8 };
    let mut out = Vec::with_capacity(10 + 16 + t.len() * elem);
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(T::DTYPE);
    put_dims(&mut out, &t.dims())?;
    for &v in t.data() {
        if T::DTYPE == 0 {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader::new(bytes, "tensor file");
    r.header(TENSOR_MAGIC)?;
    let dtype = r.u8()?;
    let dims = r.dims4()?;
    let t = match dtype {
        0 => {
            let n = r.payload_len(&dims, 4)?;
            let data = r
                .take(n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
                .collect();
            AnyTensor::F32(Tensor::new(dims, data)?)
        }
        1 => {
            let n = r.payload_len(&dims, 8)?;
            let data = r
                .take(n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                .collect();
            AnyTensor::F64(Tensor::new(dims, data)?)
        }
        other => {
            return Err(Error::format(
                "tensor file",
                format!("unknown dtype {other}"),
            ))
        }
    };
    r.finish()?;
    Ok(t)
}
