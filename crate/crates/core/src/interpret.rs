//! Per-magnification reading of the attention vector `z`.
//!
//! The influence score of level `m` is the median of all attention entries of
//! level-`m` vertices pooled over the dataset, divided by the sum of those
//! medians across levels, so the scores of one dataset sum to 1.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MultiScaleGraph;
use crate::util::write_file;

/// Splits `z` into one vector per level (index 0 = level 1), each in vertex order.
pub fn split_attention(z: &[f64], g: &MultiScaleGraph) -> Result<Vec<Vec<f64>>> {
    if z.len() != g.num_vertices() {
        return Err(Error::shape(format!(
            "attention has {} entries, graph {} has {} vertices",
            z.len(),
            g.wsi_id,
            g.num_vertices()
        )));
    }
    let mut out = vec![Vec::new(); g.num_levels()];
    for (v, &w) in g.vertices.iter().zip(z) {
        out[v.mag_level as usize - 1].push(w);
    }
    Ok(out)
}

/// Median with the even-length convention `(a + b) / 2` of the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsiMedians {
    pub wsi_id: String,
    /// `None` where the slide has no vertex at that level.
    pub medians: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub model_hash: String,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub dataset_id: String,
    pub level_magnifications: Vec<f32>,
    pub per_level_scores: Vec<f64>,
    pub per_level_medians: Vec<f64>,
    pub per_level_pool_sizes: Vec<usize>,
    pub per_wsi_medians: Vec<WsiMedians>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Average scaled influence score of every magnification level.
pub fn influence_scores(dataset: &[(&MultiScaleGraph, &[f64])], dataset_id: &str) -> Result<InfluenceReport> {
    let Some((first, _)) = dataset.first() else {
        return Err(Error::invalid("influence scores need at least one slide"));
    };
    let levels = first.num_levels();
    let mut items: Vec<&(&MultiScaleGraph, &[f64])> = dataset.iter().collect();
    items.sort_by(|a, b| a.0.wsi_id.cmp(&b.0.wsi_id));

    let mut pools: Vec<Vec<f64>> = vec![Vec::new(); levels];
    let mut per_wsi = Vec::with_capacity(items.len());
    for (g, z) in items {
        if g.num_levels() != levels {
            return Err(Error::invalid(format!(
                "slide {} has {} levels, expected {levels}",
                g.wsi_id,
                g.num_levels()
            )));
        }
        let split = split_attention(z, g)?;
        per_wsi.push(WsiMedians {
            wsi_id: g.wsi_id.clone(),
            medians: split.iter().map(|s| median(s)).collect(),
        });
        for (pool, part) in pools.iter_mut().zip(split) {
            pool.extend(part);
        }
    }

    let mut warnings = Vec::new();
    let medians: Vec<f64> = pools
        .iter()
        .enumerate()
        .map(|(m, pool)| {
            median(pool).unwrap_or_else(|| {
                warnings.push(format!("level {} has no vertices; its score is 0", m + 1));
                0.0
            })
        })
        .collect();
    let total: f64 = medians.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::invalid("attention medians sum to zero"));
    }
    Ok(InfluenceReport {
        dataset_id: dataset_id.to_string(),
        level_magnifications: first.level_magnifications.clone(),
        per_level_scores: medians.iter().map(|m| m / total).collect(),
        per_level_medians: medians,
        per_level_pool_sizes: pools.iter().map(Vec::len).collect(),
        per_wsi_medians: per_wsi,
        warnings,
        provenance: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub row: u32,
    pub col: u32,
    pub attention_raw: f64,
    /// Min-max rescaled within the level; 1.0 when all values are equal.
    pub attention_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapLayer {
    pub mag_level: u32,
    /// Raster extent: one past the largest row / column present.
    pub rows: u32,
    pub cols: u32,
    pub cells: Vec<HeatCell>,
}

pub fn heatmap_layer(g: &MultiScaleGraph, z: &[f64], mag_level: u32) -> Result<HeatmapLayer> {
    if z.len() != g.num_vertices() {
        return Err(Error::shape("attention length does not match vertex count"));
    }
    if mag_level == 0 || mag_level as usize > g.num_levels() {
        return Err(Error::invalid(format!(
            "level {mag_level} absent from {} ({} levels)",
            g.wsi_id,
            g.num_levels()
        )));
    }
    let picked: Vec<(u32, u32, f64)> = g
        .vertices
        .iter()
        .zip(z)
        .filter(|(v, _)| v.mag_level == mag_level)
        .map(|(v, &w)| (v.row, v.col, w))
        .collect();
    let lo = picked.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let hi = picked.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let cells: Vec<HeatCell> = picked
        .iter()
        .map(|&(row, col, raw)| HeatCell {
            row,
            col,
            attention_raw: raw,
            attention_scaled: if hi > lo { (raw - lo) / (hi - lo) } else { 1.0 },
        })
        .collect();
    Ok(HeatmapLayer {
        mag_level,
        rows: cells.iter().map(|c| c.row + 1).max().unwrap_or(0),
        cols: cells.iter().map(|c| c.col + 1).max().unwrap_or(0),
        cells,
    })
}

impl HeatmapLayer {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,attention_raw,attention_scaled\n");
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{},{}", c.row, c.col, c.attention_raw, c.attention_scaled);
        }
        s
    }

    /// Binary PGM (P5), one pixel per grid cell, missing cells 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        let mut pixels = vec![0u8; self.rows as usize * self.cols as usize];
        for c in &self.cells {
            pixels[c.row as usize * self.cols as usize + c.col as usize] =
                (c.attention_scaled * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        out.extend(pixels);
        out
    }
}

/// Writes `<stem>.csv` and `<stem>.pgm` for one level (the suffixes are
/// appended, not substituted); returns both paths.
pub fn export_heatmap(
    g: &MultiScaleGraph,
    z: &[f64],
    mag_level: u32,
    out_stem: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    let layer = heatmap_layer(g, z, mag_level)?;
    let with_ext = |ext: &str| {
        let mut s = out_stem.as_ref().as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    let (csv, pgm) = (with_ext(".csv"), with_ext(".pgm"));
    write_file(&csv, layer.to_csv().as_bytes())?;
    write_file(&pgm, &layer.to_pgm())?;
    Ok((csv, pgm))
}
