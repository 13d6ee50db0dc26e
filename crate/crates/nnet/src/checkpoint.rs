//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "HNMTCKPT"
//! version    u32       FORMAT_VERSION
//! config     u32 len + UTF-8 JSON {"model": ModelConfig, "meta": any}
//! count      u32       number of tensors
//! tensor*    u32 len + UTF-8 name, u32 rank, u64 dims[rank], f64 values[∏dims]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::config::ModelConfig;
use crate::error::{NnetError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HNMTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub metadata: Value,
    pub params: ParamStore,
}

fn bad(msg: impl Into<String>) -> NnetError {
    NnetError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    config: &ModelConfig,
    metadata: &Value,
    params: &ParamStore,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let block = json!({ "model": config, "meta": metadata });
    let block = serde_json::to_vec(&block).map_err(|e| bad(e.to_string()))?;
    write_len(&mut w, block.len())?;
    w.write_all(&block)?;
    write_len(&mut w, params.len())?;
    for (_, name, tensor) in params.iter() {
        write_len(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_len(&mut w, tensor.shape().len())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_len<W: Write>(w: &mut W, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| bad("length exceeds u32"))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("string is not UTF-8"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic; not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let block: Value =
        serde_json::from_str(&read_string(&mut r)?).map_err(|e| bad(e.to_string()))?;
    let config: ModelConfig = serde_json::from_value(block["model"].clone())
        .map_err(|e| bad(format!("config block: {e}")))?;
    config.validate()?;
    let metadata = block["meta"].clone();

    let count = read_u32(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.id(&name).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        params.add(name, Tensor::new(shape, data)?);
    }
    Ok(Checkpoint {
        config,
        metadata,
        params,
    })
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    metadata: &Value,
    params: &ParamStore,
) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_checkpoint(file, config, metadata, params)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ModelConfig, ParamStore) {
        let mut store = ParamStore::new();
        store.add(
            "a",
            Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap(),
        );
        store.add(
            "b",
            Tensor::new(vec![3], vec![f64::MIN_POSITIVE, 1e300, -0.0]).unwrap(),
        );
        (ModelConfig::default(), store)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, store) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &json!({"mode": "robust"}), &store).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let ck = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.metadata["mode"], "robust");
        for (id, name, t) in store.iter() {
            let other = ck.params.get(ck.params.id(name).unwrap());
            assert_eq!(other.shape(), t.shape());
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(other), bits(t), "{name} / {id:?}");
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let (cfg, store) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &Value::Null, &store).unwrap();
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn load_into_validates_shapes() {
        let (_, store) = sample();
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(&[2, 2]));
        other.add("b", Tensor::zeros(&[4]));
        assert!(other.load_from(&store).is_err());
        let mut same = ParamStore::new();
        same.add("a", Tensor::zeros(&[2, 2]));
        same.add("b", Tensor::zeros(&[3]));
        same.load_from(&store).unwrap();
        assert_eq!(
            same.get(same.id("a").unwrap()).data(),
            &[1.0, -2.5, 3.25, 0.0]
        );
    }
}
