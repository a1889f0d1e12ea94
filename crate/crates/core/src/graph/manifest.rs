use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a tile manifest (JSON Lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileRecord {
    pub wsi_id: String,
    /// 1 = lowest magnification.
    pub mag_level: u32,
    pub magnification: f64,
    pub row: u32,
    pub col: u32,
    pub tissue: bool,
    pub feature_file: String,
    pub feature_index: u32,
}

impl TileRecord {
    fn key(&self) -> (&str, u32, u32, u32) {
        (&self.wsi_id, self.mag_level, self.row, self.col)
    }
}

/// Reads a manifest file and groups its records by `wsi_id`.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<TileRecord>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text, path)
}

/// Same as [`parse_manifest`], with `origin` used only in error messages.
pub fn parse_manifest_str(text: &str, origin: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<TileRecord>>> {
    let origin = origin.as_ref();
    let mut groups: BTreeMap<String, Vec<TileRecord>> = BTreeMap::new();
    let mut seen: HashSet<(String, u32, u32, u32)> = HashSet::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TileRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let bad = |message: &str| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message: message.to_string(),
        };
        if rec.mag_level == 0 {
            return Err(bad("mag_level must be >= 1"));
        }
        if !(rec.magnification.is_finite() && rec.magnification > 0.0) {
            return Err(bad("magnification must be a positive finite number"));
        }
        let (w, m, r, c) = rec.key();
        if !seen.insert((w.to_string(), m, r, c)) {
            return Err(Error::DuplicateTile {
                wsi_id: rec.wsi_id,
                mag_level: m,
                row: r,
                col: c,
            });
        }
        groups.entry(rec.wsi_id.clone()).or_default().push(rec);
    }

    for (wsi_id, tiles) in &groups {
        validate_levels(wsi_id, tiles)?;
    }
    Ok(groups)
}

/// Checks the per-slide level invariants: contiguous levels starting at 1,
/// one magnification per level, magnification strictly increasing.
pub(crate) fn validate_levels(wsi_id: &str, tiles: &[TileRecord]) -> Result<Vec<f64>> {
    let levels: BTreeSet<u32> = tiles.iter().map(|t| t.mag_level).collect();
    let Some(&max) = levels.iter().next_back() else {
        return Ok(Vec::new());
    };
    if levels.len() != max as usize {
        let missing: Vec<u32> = (1..=max).filter(|m| !levels.contains(m)).collect();
        return Err(Error::Manifest {
            wsi_id: wsi_id.to_string(),
            message: format!("mag_level gap: levels {missing:?} missing below {max}"),
        });
    }
    let mut mags = vec![f64::NAN; max as usize];
    for t in tiles {
        let slot = &mut mags[t.mag_level as usize - 1];
        if slot.is_nan() {
            *slot = t.magnification;
        } else if *slot != t.magnification {
            return Err(Error::Manifest {
                wsi_id: wsi_id.to_string(),
                message: format!(
                    "level {} has conflicting magnifications {} and {}",
                    t.mag_level, slot, t.magnification
                ),
            });
        }
    }
    if let Some(w) = mags.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Manifest {
            wsi_id: wsi_id.to_string(),
            message: format!(
                "magnification must increase with level: level {} = {}, level {} = {}",
                w + 1,
                mags[w],
                w + 2,
                mags[w + 1]
            ),
        });
    }
    Ok(mags)
}

pub fn write_manifest<'a>(path: impl AsRef<Path>, records: impl IntoIterator<Item = &'a TileRecord>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
