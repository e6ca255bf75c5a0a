//! Checkpoint directory format: `params.bin`, a flat named-array archive
//! written in sorted name order, plus `meta.json` describing the schedule,
//! conditioning width, tensor shapes and training state. Save -> load ->
//! save is byte-identical.

use crate::autodiff::store::ParamStore;
use crate::autodiff::TensorD;
use crate::config::{Ablation, ModelDims, TrainConfig};
use crate::data::TagSchema;
use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ATTREDIT";
pub const SCHEMA_VERSION: u32 = 1;

/// Checkpoint metadata. The shape table is redundant with the archive and
/// exists so a checkpoint can be inspected without parsing tensor data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    /// Diffusion steps of the training schedule.
    #[serde(rename = "T")]
    pub t: usize,
    pub kind: ScheduleKind,
    pub cond_dim: usize,
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub dims: ModelDims,
    pub tag_schema: TagSchema,
    pub ablation: Ablation,
    pub config: TrainConfig,
    /// Training steps completed when the checkpoint was written.
    pub step: usize,
    /// Base RNG seed; per-step streams are derived, so (seed, step) resumes
    /// the exact stream.
    pub seed: u64,
}

pub fn save(dir: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut meta = meta.clone();
    meta.shapes =
        store.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.num_tensors() as u64).to_le_bytes());
    for (name, tensor) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(tensor.ndim() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(dir.join("params.bin"))?;
    f.write_all(&buf)?;

    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

/// Read only the metadata of a checkpoint directory.
pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?)
}

pub fn load(dir: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let meta: CheckpointMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::schema(format!(
            "checkpoint schema version {} unsupported (expected {SCHEMA_VERSION})",
            meta.schema_version
        )));
    }
    let mut buf = Vec::new();
    std::fs::File::open(dir.join("params.bin"))?.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(Error::schema("parameter archive truncated".to_string()));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::schema("parameter archive has a bad magic header".to_string()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != SCHEMA_VERSION {
        return Err(Error::schema(format!("parameter archive version {version} unsupported")));
    }
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::schema("non-utf8 parameter name".to_string()))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let tensor = TensorD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::schema(format!("bad tensor shape for {name}: {e}")))?;
        store.insert(&name, tensor);
    }
    Ok((store, meta))
}

/// Verify that every namespace in `required` has at least one parameter.
pub fn check_namespaces(store: &ParamStore, required: &[&str]) -> Result<()> {
    for ns in required {
        if store.names_with_prefix(ns).next().is_none() {
            return Err(Error::schema(format!("checkpoint is missing namespace '{ns}'")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::store::init_normal;
    use tempfile::tempdir;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            t: 10,
            kind: ScheduleKind::LinearBeta,
            cond_dim: 24,
            shapes: BTreeMap::new(),
            dims: ModelDims::tiny(),
            tag_schema: TagSchema::toy(),
            ablation: Ablation::None,
            config: TrainConfig::default(),
            step: 7,
            seed: 3,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let mut store = ParamStore::new();
        init_normal(&mut store, 1, "unet/a/w", &[3, 4], 0.3);
        init_normal(&mut store, 1, "editor/input/c/w", &[2, 2, 3, 3], 0.3);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save(&a, &store, &meta()).unwrap();
        let (loaded, meta2) = load(&a).unwrap();
        assert_eq!(meta2.t, 10);
        assert_eq!(meta2.shapes["unet/a/w"], vec![3, 4]);
        save(&b, &loaded, &meta2).unwrap();
        let pa = std::fs::read(a.join("params.bin")).unwrap();
        let pb = std::fs::read(b.join("params.bin")).unwrap();
        assert_eq!(pa, pb);
        let ma = std::fs::read(a.join("meta.json")).unwrap();
        let mb = std::fs::read(b.join("meta.json")).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn loaded_tensors_are_bitwise_equal() {
        let dir = tempdir().unwrap();
        let mut store = ParamStore::new();
        init_normal(&mut store, 2, "disc/x", &[5], 1.0);
        save(dir.path(), &store, &meta()).unwrap();
        let (loaded, _) = load(dir.path()).unwrap();
        let a: Vec<u64> = store.get("disc/x").iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = loaded.get("disc/x").iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn namespace_check_reports_missing() {
        let mut store = ParamStore::new();
        init_normal(&mut store, 1, "unet/w", &[1], 1.0);
        assert!(check_namespaces(&store, &["unet"]).is_ok());
        let err = check_namespaces(&store, &["unet", "mapper"]);
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn corrupt_archive_is_rejected() {
        let dir = tempdir().unwrap();
        let store = ParamStore::new();
        save(dir.path(), &store, &meta()).unwrap();
        let mut bytes = std::fs::read(dir.path().join("params.bin")).unwrap();
        bytes[0] = b'X';
        std::fs::write(dir.path().join("params.bin"), &bytes).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
