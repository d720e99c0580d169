use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExplainConfig, Explanation};
use crate::error::{Error, Result};
use crate::types::{ClassLabel, ClassScores, SaliencyMap, SaliencyMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub image_id: String,
    pub method: SaliencyMethod,
    pub explained_class: ClassLabel,
    pub height: usize,
    pub width: usize,
    pub score_of_explained_class: f64,
    pub config_digest: String,
    /// Classifier probabilities `[not_ready, ready]` for the image.
    pub probabilities: [f64; 2],
    pub config: serde_json::Value,
}

impl MapSidecar {
    pub fn scores(&self) -> Result<ClassScores> {
        ClassScores::new(self.probabilities)
    }
}

/// `<dir>/<id>.<method>.smap` and its `.smap.json` sidecar.
pub fn map_paths(dir: &Path, image_id: &str, method: SaliencyMethod) -> (PathBuf, PathBuf) {
    let base = dir.join(format!("{image_id}.{method}.smap"));
    let mut json = base.clone().into_os_string();
    json.push(".json");
    (base, json.into())
}

pub fn write_map(dir: &Path, explanation: &Explanation, cfg: &ExplainConfig) -> Result<PathBuf> {
    let map = &explanation.map;
    let (smap, json) = map_paths(dir, &map.image_id, map.method);
    let bytes: Vec<u8> = map.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&smap, bytes).map_err(|e| Error::io(&smap, e))?;
    let sidecar = MapSidecar {
        image_id: map.image_id.clone(),
        method: map.method,
        explained_class: map.explained_class,
        height: map.height,
        width: map.width,
        score_of_explained_class: explanation.score_of_explained_class(),
        config_digest: cfg.digest(),
        probabilities: explanation.scores.probabilities(),
        config: cfg.method_config(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(smap)
}

/// Read a `.smap` file and its sidecar; the value count must match the
/// sidecar dimensions.
pub fn read_map(smap: &Path) -> Result<(SaliencyMap, MapSidecar)> {
    let mut json = smap.as_os_str().to_owned();
    json.push(".json");
    let json = PathBuf::from(json);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: MapSidecar = serde_json::from_str(&text).map_err(|e| Error::format(&json, e.to_string()))?;
    let bytes = fs::read(smap).map_err(|e| Error::io(smap, e))?;
    let expected = sidecar.height * sidecar.width * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            smap,
            format!("{} bytes, expected {expected} for {}x{}", bytes.len(), sidecar.height, sidecar.width),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let map = SaliencyMap::new(
        sidecar.height,
        sidecar.width,
        values,
        sidecar.method,
        sidecar.image_id.clone(),
        sidecar.explained_class,
    )
    .map_err(|e| e.context(smap.display().to_string()))?;
    Ok((map, sidecar))
}
