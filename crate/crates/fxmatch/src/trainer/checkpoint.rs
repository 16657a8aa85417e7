//! Binary checkpoint persistence with CRC integrity and a JSON sidecar.
//!
//! Layout, little-endian throughout: magic "NDST", u32 version, u32 entry
//! count, then per entry u16 name length, name bytes, u8 flags (bit 0 =
//! trainable), u8 ndim, u32 dims, f32 data. A CRC32 of every preceding byte
//! closes the file. Run metadata (config echo, final metrics) lives next to
//! the binary in `<path>.json`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::Controller;
use crate::dafx::{self, EffectId};
use crate::error::{Error, Result};
use crate::nn::{Array, ParamStore};
use crate::trainer::RunSpec;
use crate::vae::SpectroVae;

const MAGIC: &[u8; 4] = b"NDST";
const VERSION: u32 = 1;

/// IEEE 802.3 CRC32, table-driven.
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, slot) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        t
    });
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

pub fn save_checkpoint(
    store: &ParamStore<f32>,
    meta: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, entry) in store.iter() {
        let name_bytes = name.as_bytes();
        bytes.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name_bytes);
        bytes.push(entry.trainable as u8);
        bytes.push(entry.value.shape().len() as u8);
        for &d in entry.value.shape() {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in entry.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, bytes)?;
    if !meta.is_null() {
        std::fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(meta).expect("serializable meta"),
        )?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptCheckpoint("unexpected end of file".into())),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        let s = self.take(2)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, serde_json::Value)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::CorruptCheckpoint(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(Error::CorruptCheckpoint("file too small".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    if crc32(body) != stored_crc {
        return Err(Error::CorruptCheckpoint("crc mismatch".into()));
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let count = cur.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("non-utf8 name".into()))?;
        let trainable = cur.u8()? != 0;
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(&name, Array::from_vec(data, &shape), trainable);
    }
    if cur.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }

    let meta_path = sidecar_path(path);
    let meta = if meta_path.is_file() {
        let text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::CorruptCheckpoint(format!("sidecar: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::CorruptCheckpoint(format!("sidecar: {e}")))?
    } else {
        serde_json::Value::Null
    };
    Ok((store, meta))
}

pub fn spec_from_meta(meta: &serde_json::Value) -> Result<RunSpec> {
    let spec = meta
        .get("spec")
        .ok_or_else(|| Error::CorruptCheckpoint("sidecar metadata lacks `spec`".into()))?;
    let spec: RunSpec = serde_json::from_value(spec.clone())
        .map_err(|e| Error::CorruptCheckpoint(format!("bad spec in sidecar: {e}")))?;
    let s = &spec.stft;
    let consistent = s.hop_len > 0
        && s.hop_len <= s.window_len
        && s.window_len <= s.fft_bins
        && s.compression_exponent > 0.0
        && spec.patch_len >= s.window_len;
    if !consistent {
        return Err(Error::CorruptCheckpoint("inconsistent spec in sidecar".into()));
    }
    Ok(spec)
}

pub fn effect_from_meta(meta: &serde_json::Value) -> Result<EffectId> {
    let name = meta
        .get("effect")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::CorruptCheckpoint("sidecar metadata lacks `effect`".into()))?;
    name.parse()
        .map_err(|_| Error::CorruptCheckpoint(format!("sidecar names unknown effect `{name}`")))
}

/// Copy every tensor under `prefix` from `loaded` into a freshly initialized
/// `scratch` store, requiring the two name sets and shapes to agree exactly.
fn adopt(scratch: &mut ParamStore<f32>, loaded: &ParamStore<f32>, prefix: &str) -> Result<()> {
    let wanted: Vec<String> = scratch
        .names()
        .filter(|n| n.starts_with(prefix))
        .map(str::to_string)
        .collect();
    for name in &wanted {
        if !loaded.contains(name) {
            return Err(Error::CorruptCheckpoint(format!("missing tensor `{name}`")));
        }
    }
    scratch
        .copy_prefix_from(loaded, prefix)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
}

/// Rebuild a full autoencoder from a checkpoint written by `train-vae`. The
/// sidecar supplies the geometry; the binary supplies the weights.
pub fn load_vae_checkpoint(
    path: &Path,
) -> Result<(SpectroVae, ParamStore<f32>, RunSpec, serde_json::Value)> {
    let (loaded, meta) = load_checkpoint(path)?;
    let spec = spec_from_meta(&meta)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vae = SpectroVae::init(&mut store, &mut rng, spec.freq_bins(), spec.frames());
    adopt(&mut store, &loaded, "vae.")?;
    Ok((vae, store, spec, meta))
}

/// Extract just the encoder weights (any checkpoint holding a complete
/// `vae.enc.` tree qualifies, so both autoencoder and end-to-end checkpoints
/// work).
pub fn load_encoder_checkpoint(
    path: &Path,
) -> Result<(ParamStore<f32>, RunSpec, serde_json::Value)> {
    let (loaded, meta) = load_checkpoint(path)?;
    let spec = spec_from_meta(&meta)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let _ = SpectroVae::init(&mut store, &mut rng, spec.freq_bins(), spec.frames());
    store.remove_prefix("vae.dec.");
    adopt(&mut store, &loaded, "vae.enc.")?;
    Ok((store, spec, meta))
}

/// Rebuild the encoder plus controller pair written by `train-e2e`.
pub fn load_e2e_checkpoint(
    path: &Path,
) -> Result<(
    SpectroVae,
    Controller,
    ParamStore<f32>,
    RunSpec,
    EffectId,
    serde_json::Value,
)> {
    let (loaded, meta) = load_checkpoint(path)?;
    let spec = spec_from_meta(&meta)?;
    let effect = effect_from_meta(&meta)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vae = SpectroVae::init(&mut store, &mut rng, spec.freq_bins(), spec.frames());
    store.remove_prefix("vae.dec.");
    let controller = Controller::init(&mut store, &mut rng, dafx::descriptor(effect).num_params());
    adopt(&mut store, &loaded, "vae.enc.")?;
    adopt(&mut store, &loaded, "ctl.")?;
    Ok((vae, controller, store, spec, effect, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_store() -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        for (name, shape, trainable) in [
            ("a.w", vec![4usize, 3], true),
            ("a.b", vec![4], true),
            ("bn.running_mean", vec![4], false),
        ] {
            let mut arr = Array::zeros(&shape);
            for v in arr.data_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            store.insert(name, arr, trainable);
        }
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = sample_store();
        let meta = serde_json::json!({"kind": "test", "steps": 7});
        save_checkpoint(&store, &meta, &path).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for (name, entry) in store.iter() {
            let got = loaded.get(name);
            assert_eq!(got.shape(), entry.value.shape());
            assert_eq!(got.data(), entry.value.data(), "{name} data differs");
            assert_eq!(loaded.is_trainable(name), entry.trainable);
        }
        assert_eq!(loaded_meta, meta);
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&sample_store(), &serde_json::Value::Null, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn single_byte_corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&sample_store(), &serde_json::Value::Null, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&sample_store(), &serde_json::Value::Null, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        let body_len = bytes.len() - 4;
        let crc = crc32(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn crc_reference_value() {
        // the classic check string
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    fn tiny_spec() -> RunSpec {
        RunSpec {
            sample_rate: 24000,
            patch_len: 4096,
            stft: crate::stft::StftConfig::new(512, 256, 128, 0.3),
        }
    }

    #[test]
    fn typed_loaders_rebuild_models() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        let mut vae_store = ParamStore::new();
        let vae = SpectroVae::init(&mut vae_store, &mut rng, spec.freq_bins(), spec.frames());
        let vae_path = dir.path().join("vae.ckpt");
        let meta = serde_json::json!({"kind": "vae", "spec": spec});
        save_checkpoint(&vae_store, &meta, &vae_path).unwrap();

        let (loaded_vae, loaded_store, loaded_spec, _) = load_vae_checkpoint(&vae_path).unwrap();
        assert_eq!(loaded_spec, spec);
        let x = Array::from_vec(
            (0..spec.freq_bins() * spec.frames())
                .map(|i| (i as f32 * 0.37).sin())
                .collect(),
            &[1, 1, spec.freq_bins(), spec.frames()],
        );
        assert_eq!(
            vae.embed(&vae_store, &x).data(),
            loaded_vae.embed(&loaded_store, &x).data()
        );

        let (enc_store, _, _) = load_encoder_checkpoint(&vae_path).unwrap();
        assert!(enc_store.names().all(|n| n.starts_with("vae.enc.")));
        assert!(enc_store.len() > 0);

        let mut e2e_store = ParamStore::new();
        let _ = SpectroVae::init(&mut e2e_store, &mut rng, spec.freq_bins(), spec.frames());
        e2e_store.remove_prefix("vae.dec.");
        let _ = Controller::init(&mut e2e_store, &mut rng, 3);
        let e2e_path = dir.path().join("e2e.ckpt");
        let meta = serde_json::json!({"kind": "e2e", "spec": spec, "effect": "overdrive"});
        save_checkpoint(&e2e_store, &meta, &e2e_path).unwrap();

        let (_, controller, loaded, _, effect, _) = load_e2e_checkpoint(&e2e_path).unwrap();
        assert_eq!(effect, EffectId::Overdrive);
        assert_eq!(controller.num_effect_params, 3);
        assert_eq!(loaded.len(), e2e_store.len());
        for (name, entry) in e2e_store.iter() {
            assert_eq!(loaded.get(name).data(), entry.value.data(), "{name}");
        }
    }

    #[test]
    fn typed_loaders_reject_wrong_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);

        let mut store = ParamStore::new();
        let _ = SpectroVae::init(&mut store, &mut rng, spec.freq_bins(), spec.frames());
        let path = dir.path().join("vae.ckpt");

        // sidecar describes a different geometry than the stored tensors
        let lying = serde_json::json!({"kind": "vae", "spec": RunSpec {
            patch_len: 8192,
            ..spec
        }});
        save_checkpoint(&store, &lying, &path).unwrap();
        assert!(matches!(
            load_vae_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));

        // a tensor is missing outright
        let mut truncated = store.clone();
        truncated.remove_prefix("vae.enc.fc_mu");
        save_checkpoint(&truncated, &serde_json::json!({"spec": spec}), &path).unwrap();
        assert!(matches!(
            load_vae_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));

        // no effect recorded
        save_checkpoint(&store, &serde_json::json!({"spec": spec}), &path).unwrap();
        assert!(matches!(
            load_e2e_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
    }
}
