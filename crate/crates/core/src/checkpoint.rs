//! Model checkpoints: the parameter payload format with a header describing
//! the model spec and training state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LatentTimeModel, ModelSpec};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub variant: String,
    pub iteration: usize,
    /// Caller-supplied digest of the generator state at save time.
    pub rng_digest: String,
}

pub fn to_bytes(model: &LatentTimeModel, iteration: usize, rng_digest: &str) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        spec: model.spec().clone(),
        variant: model.spec().variant.name().to_string(),
        iteration,
        rng_digest: rng_digest.to_string(),
    };
    model.params().to_bytes(serde_json::to_value(meta)?)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(LatentTimeModel, CheckpointMeta)> {
    let (params, meta) = ParamSet::from_bytes(bytes)?;
    let meta: CheckpointMeta =
        serde_json::from_value(meta).map_err(|e| Error::Integrity(format!("checkpoint header: {e}")))?;
    if meta.variant != meta.spec.variant.name() {
        return Err(Error::SpecMismatch(format!(
            "header variant {} disagrees with spec variant {}",
            meta.variant,
            meta.spec.variant.name()
        )));
    }
    let model = LatentTimeModel::from_parts(meta.spec.clone(), params)?;
    Ok((model, meta))
}

pub fn save(model: &LatentTimeModel, iteration: usize, rng_digest: &str, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model, iteration, rng_digest)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(LatentTimeModel, CheckpointMeta)> {
    from_bytes(&fs::read(path)?)
}

/// Load and require the stored spec to equal `expected`.
pub fn load_expecting(path: &Path, expected: &ModelSpec) -> Result<(LatentTimeModel, CheckpointMeta)> {
    let (model, meta) = load(path)?;
    if &meta.spec != expected {
        return Err(Error::SpecMismatch(describe_mismatch(expected, &meta.spec)));
    }
    Ok((model, meta))
}

fn describe_mismatch(expected: &ModelSpec, found: &ModelSpec) -> String {
    let e = serde_json::to_value(expected).unwrap_or_default();
    let f = serde_json::to_value(found).unwrap_or_default();
    let fields: Vec<String> = match (e.as_object(), f.as_object()) {
        (Some(e), Some(f)) => e
            .iter()
            .filter(|(k, v)| f.get(*k) != Some(*v))
            .map(|(k, v)| format!("{k}: expected {v}, found {}", f.get(k).cloned().unwrap_or_default()))
            .collect(),
        _ => Vec::new(),
    };
    format!("checkpoint spec differs ({})", fields.join("; "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Variant;

    #[test]
    fn round_trip_is_bitwise() {
        let m = LatentTimeModel::build(ModelSpec::classifier(2, 2, Variant::LtNode), 3).unwrap();
        let bytes = to_bytes(&m, 17, "abc").unwrap();
        let (back, meta) = from_bytes(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(meta.iteration, 17);
        assert_eq!(meta.rng_digest, "abc");
    }

    #[test]
    fn truncation_is_integrity_error() {
        let m = LatentTimeModel::build(ModelSpec::classifier(2, 2, Variant::AltNode), 3).unwrap();
        let bytes = to_bytes(&m, 0, "").unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }
}
