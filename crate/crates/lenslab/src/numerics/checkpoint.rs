//! Binary weight checkpoints.
//!
//! Layout: magic `DLLAB`, format version u32 LE, then for each tensor a
//! record of (name length u32, name bytes, rank u32, dims u32..., f32 LE
//! payload). Records run to end of file; the loader validates that every
//! record is complete and the file ends on a record boundary.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamSet;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"DLLAB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated or oversized record ({0})")]
    Truncated(String),
    #[error("invalid tensor in checkpoint: {0}")]
    BadTensor(String),
}

pub fn save(params: &ParamSet, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::with_capacity(params.num_scalars() * 4 + 1024);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // Atomic-ish write: temp file then rename.
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse(&bytes)
}

pub fn parse(bytes: &[u8]) -> Result<ParamSet, CheckpointError> {
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut pos = 9usize;
    let mut params = ParamSet::new();
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<usize, CheckpointError> {
        if *pos + n > bytes.len() {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let start = *pos;
        *pos += n;
        Ok(start)
    };
    while pos < bytes.len() {
        let s = take(&mut pos, 4, "name length")?;
        let name_len = u32::from_le_bytes(bytes[s..s + 4].try_into().unwrap()) as usize;
        let s = take(&mut pos, name_len, "name")?;
        let name = std::str::from_utf8(&bytes[s..s + name_len])
            .map_err(|e| CheckpointError::BadTensor(format!("name not utf-8: {e}")))?
            .to_string();
        let s = take(&mut pos, 4, "rank")?;
        let rank = u32::from_le_bytes(bytes[s..s + 4].try_into().unwrap()) as usize;
        if rank > 8 {
            return Err(CheckpointError::BadTensor(format!("rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let s = take(&mut pos, 4, "dim")?;
            shape.push(u32::from_le_bytes(bytes[s..s + 4].try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let s = take(&mut pos, numel * 4, "payload")?;
        let mut data = Vec::with_capacity(numel);
        for chunk in bytes[s..s + numel * 4].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::BadTensor(format!("{name}: {e}")))?;
        params.add(&name, t);
    }
    Ok(params)
}

/// SHA-256 of a file's bytes, hex-encoded. Used as the weights hash in
/// manifests.
pub fn file_sha256(path: &Path) -> Result<String, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes_sha256(&bytes))
}

pub fn bytes_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    #[test]
    fn roundtrip_preserves_names_shapes_data() {
        let mut rng = Rng::new(4, 0);
        let mut p = ParamSet::new();
        p.add("layer.w", Tensor::randn(vec![3, 4], 1.0, &mut rng));
        p.add("layer.b", Tensor::randn(vec![4], 1.0, &mut rng));
        let dir = std::env::temp_dir().join("lenslab_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.dllab");
        save(&p, &path).unwrap();
        let q = load(&path).unwrap();
        assert_eq!(q.len(), 2);
        for ((n1, t1), (n2, t2)) in p.iter().zip(q.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.data(), t2.data());
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let dir = std::env::temp_dir().join("lenslab_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.dllab");
        save(&p, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        // Truncated payload.
        let cut = bytes.len() - 3;
        assert!(matches!(parse(&bytes[..cut]), Err(CheckpointError::Truncated(_))));

        // Bad magic.
        bytes[0] = b'X';
        assert!(matches!(parse(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            bytes_sha256(b"lenslab"),
            bytes_sha256(b"lenslab"),
        );
        assert_ne!(bytes_sha256(b"a"), bytes_sha256(b"b"));
    }
}
