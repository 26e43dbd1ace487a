//! On-disk formats: binary tensors (`SRFT`), weight stores (`SRFW`), and the
//! JSON annotation / detection document.
//!
//! Both binary formats are little-endian with a 4-byte magic and a version
//! byte. Readers reject trailing bytes and every truncation.

mod annotations;
mod tensor_file;
mod weights;

use std::path::Path;

pub use annotations::{AnnotationDoc, ImageEntry, ObjectEntry, DEFAULT_CLASS_NAMES};
pub use tensor_file::{read_tensor, write_tensor, AnyTensor, TENSOR_MAGIC};
pub use weights::{read_weights, write_weights, WEIGHTS_MAGIC};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u8 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::format(
                    self.what,
                    format!(
                        "truncated: need {n} bytes at offset {}, file has {}",
                        self.pos,
                        self.buf.len()
                    ),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(self.what, format!("bad magic {got:?}")));
        }
        let v = self.u8()?;
        if v != FORMAT_VERSION {
            return Err(Error::format(self.what, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub fn dims4(&mut self) -> Result<[usize; 4]> {
        let rank = self.u8()?;
        if rank != 4 {
            return Err(Error::format(
                self.what,
                format!("rank {rank} (only rank 4 is supported)"),
            ));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = self.u32()? as usize;
        }
        Ok(dims)
    }

    /// Byte length of a payload of `dims` elements of `elem` bytes each.
    pub fn payload_len(&self, dims: &[usize; 4], elem: usize) -> Result<usize> {
        dims.iter()
            .try_fold(elem, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(self.what, format!("dims {dims:?} overflow")))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_dims(out: &mut Vec<u8>, dims: &[usize; 4]) -> Result<()> {
    out.push(4);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::format("dims", format!("{d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

pub fn load_tensor_f32(path: &Path) -> Result<crate::Tensor<f32>> {
    Ok(read_tensor(&std::fs::read(path)?)?.into_f32())
}

pub fn load_weights(path: &Path) -> Result<crate::ParamStore<f32>> {
    read_weights(&std::fs::read(path)?)
}
