use super::{put_dims, Reader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SRFW";

/// Entries are written in the store's (lexicographic) name order.
pub fn write_weights(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(9 + store.total_elems() * 4);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(FORMAT_VERSION);
    let count =
        u32::try_from(store.len()).map_err(|_| Error::format("weight file", "too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::format("weight file", format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        put_dims(&mut out, &t.dims())?;
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_weights(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader::new(bytes, "weight file");
    r.header(WEIGHTS_MAGIC)?;
    let count = r.u32()? as usize;
    let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::format("weight file", format!("name is not UTF-8: {e}")))?
            .to_string();
        if let Some((prev, _)) = entries.last() {
            if *prev >= name {
                return Err(Error::format(
                    "weight file",
                    format!("entries out of order: {prev:?} before {name:?}"),
                ));
            }
        }
        let dims = r.dims4()?;
        let n = r.payload_len(&dims, 4)?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
            .collect();
        entries.push((name, Tensor::new(dims, data)?));
    }
    r.finish()?;
    ParamStore::from_entries(entries)
}
