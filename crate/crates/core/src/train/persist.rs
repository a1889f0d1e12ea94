use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numeric::ParamStore;
use crate::util::{read_file, write_file};

/// Provenance stored next to the parameters. Contains no timestamps so that
/// repeated runs produce identical files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub seed: u64,
    pub dataset_hash: String,
    pub level_magnifications: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: ModelConfig,
    metadata: ModelMetadata,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the parameter file at `path` and `path` with a `.json` extension.
pub fn save_model(model: &Model, meta: &ModelMetadata, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    model.params.save(path)?;
    let sidecar = Sidecar {
        config: model.config.clone(),
        metadata: meta.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&sidecar)?;
    json.push(b'\n');
    write_file(&sidecar_path(path), &json)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Model, ModelMetadata)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_slice(&read_file(&side)?).map_err(|e| Error::Parse {
        path: side.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let params = ParamStore::load(path, sidecar.metadata.seed)?;
    let model = Model::from_parts(sidecar.config, params)?;
    Ok((model, sidecar.metadata))
}
