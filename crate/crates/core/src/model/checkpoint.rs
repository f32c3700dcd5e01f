//! Binary checkpoint format.
//!
//! Layout: magic `MMGN`, format version, then a fixed header (counts,
//! embedding dim, propagation depths, per-modality feature dims with 0
//! marking an absent channel, ablation flags, emotion weight), then every
//! learnable array in canonical parameter order as little-endian f32.
//! Live parameters sit on the f32 grid, so save → load is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dataset::Modality;
use crate::error::{Error, Result};

use super::{AblationFlags, ModelParams, Projection};

const MAGIC: &[u8; 4] = b"MMGN";
const VERSION: u32 = 1;

fn ck_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        params.n_users as u64,
        params.n_songs as u64,
        params.dim as u64,
        params.layers as u64,
        params.social_layers as u64,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for m in Modality::ALL {
        let dim = params
            .projections
            .get(&m)
            .map(|p| p.weight.nrows() as u64)
            .unwrap_or(0);
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    let flags = u8::from(params.flags.no_social)
        | u8::from(params.flags.no_mutual) << 1
        | u8::from(params.flags.no_emotion) << 2;
    buf.push(flags);
    buf.extend_from_slice(&params.lambda_emotion.to_le_bytes());
    for (_, slice) in params.learnable_slices() {
        for &v in slice {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ck_err(self.path, "file truncated"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn fill_f32(&mut self, out: &mut [f64]) -> Result<()> {
        let bytes = self.take(4 * out.len())?;
        for (v, chunk) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        Ok(())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };

    if r.take(4)? != MAGIC {
        return Err(ck_err(path, "bad magic (not a model checkpoint)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ck_err(path, format!("unsupported format version {version}")));
    }
    let n_users = r.u64()? as usize;
    let n_songs = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let layers = r.u64()? as usize;
    let social_layers = r.u64()? as usize;
    let mut feature_dims = Vec::new();
    for m in Modality::ALL {
        let fd = r.u64()? as usize;
        if fd > 0 {
            feature_dims.push((m, fd));
        }
    }
    if feature_dims.is_empty() {
        return Err(ck_err(path, "checkpoint declares no modalities"));
    }
    if dim == 0 {
        return Err(ck_err(path, "embedding dim is zero"));
    }
    let flag_bits = r.byte()?;
    let flags = AblationFlags {
        no_social: flag_bits & 1 != 0,
        no_mutual: flag_bits & 2 != 0,
        no_emotion: flag_bits & 4 != 0,
    };
    let lambda_emotion = r.f64()?;

    let modalities: Vec<Modality> = feature_dims.iter().map(|&(m, _)| m).collect();
    let c = modalities.len();
    let blocks = c + usize::from(!flags.no_social);
    let mut params = ModelParams {
        n_users,
        n_songs,
        dim,
        layers,
        social_layers,
        lambda_emotion,
        flags,
        modalities,
        user_tables: feature_dims
            .iter()
            .map(|&(m, _)| (m, Array2::zeros((n_users, dim))))
            .collect(),
        projections: feature_dims
            .iter()
            .map(|&(m, fd)| {
                (
                    m,
                    Projection {
                        weight: Array2::zeros((fd, dim)),
                        bias: Array1::zeros(dim),
                    },
                )
            })
            .collect(),
        social_table: (!flags.no_social).then(|| Array2::zeros((n_users, dim))),
        fuse_weight: Array2::zeros((blocks * dim, dim)),
        item_weight_logits: Array1::zeros(c),
    };

    for (_, slice) in params.learnable_slices_mut() {
        r.fill_f32(slice)?;
    }
    if r.pos != buf.len() {
        return Err(ck_err(path, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if !params.all_finite() {
        return Err(ck_err(path, "non-finite parameter values"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::model::init_params;
    use std::collections::BTreeMap;
    use tempfile::tempdir;

    fn demo_params(no_social: bool) -> ModelParams {
        let cfg = TrainConfig {
            embedding_dim: 8,
            seed: 21,
            no_social,
            lambda_emotion: 0.25,
            layers: 3,
            social_layers: 1,
            ..Default::default()
        };
        let mut dims = BTreeMap::new();
        dims.insert(Modality::Lyrics, 5);
        dims.insert(Modality::Audio, 4);
        dims.insert(Modality::Visual, 3);
        init_params(&cfg, 7, 11, &dims).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = demo_params(false);
        let tmp = tempdir().unwrap();
        let path = tmp.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn round_trip_preserves_header_fields() {
        let params = demo_params(true);
        let tmp = tempdir().unwrap();
        let path = tmp.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.layers, 3);
        assert_eq!(loaded.social_layers, 1);
        assert_eq!(loaded.lambda_emotion, 0.25);
        assert!(loaded.flags.no_social);
        assert!(loaded.social_table.is_none());
        assert_eq!(loaded.fuse_weight.nrows(), 3 * 8);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let params = demo_params(false);
        let tmp = tempdir().unwrap();
        let (a, b) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
        save_checkpoint(&params, &a).unwrap();
        save_checkpoint(&params, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let params = demo_params(false);
        let tmp = tempdir().unwrap();
        let path = tmp.path().join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let bad_magic = tmp.path().join("magic.ckpt");
        let mut bytes = good.clone();
        bytes[0] = b'X';
        fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&bad_magic), Err(Error::Checkpoint { .. })));

        let truncated = tmp.path().join("short.ckpt");
        fs::write(&truncated, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&truncated), Err(Error::Checkpoint { .. })));

        let trailing = tmp.path().join("long.ckpt");
        let mut bytes = good.clone();
        bytes.extend_from_slice(&[0, 1, 2, 3]);
        fs::write(&trailing, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&trailing), Err(Error::Checkpoint { .. })));

        let bad_version = tmp.path().join("ver.ckpt");
        let mut bytes = good;
        bytes[4] = 99;
        fs::write(&bad_version, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&bad_version), Err(Error::Checkpoint { .. })));
    }
}
