use std::collections::HashMap;

use super::manifest::validate_levels;
use super::{EdgeKind, MultiScaleGraph, TileRecord, Vertex};
use crate::error::{Error, Result};
use crate::features::FeatureProvider;

/// Integer ratios `k_m = mag(m+1) / mag(m)` for consecutive levels.
pub fn magnification_ratios(mags: &[f64]) -> Result<Vec<u32>> {
    mags.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let r = w[1] / w[0];
            let rounded = r.round();
            if !r.is_finite() || rounded < 1.0 || (r - rounded).abs() > 1e-9 * rounded {
                return Err(Error::NonIntegerRatio {
                    level: i as u32 + 1,
                    lower: w[0],
                    upper: w[1],
                });
            }
            Ok(rounded as u32)
        })
        .collect()
}

/// Builds the canonical multi-scale graph of one slide.
///
/// Only tissue tiles become vertices. Tiles whose parent failed QC stay in the
/// graph, possibly without edges.
pub fn build_graph(tiles: &[TileRecord], features: &dyn FeatureProvider) -> Result<MultiScaleGraph> {
    let wsi_id = tiles.first().map(|t| t.wsi_id.clone()).unwrap_or_default();
    if let Some(other) = tiles.iter().find(|t| t.wsi_id != wsi_id) {
        return Err(Error::invalid(format!(
            "build_graph expects one slide, found {wsi_id:?} and {:?}",
            other.wsi_id
        )));
    }
    let mags = validate_levels(&wsi_id, tiles)?;
    let ratios = magnification_ratios(&mags)?;

    let mut kept: Vec<&TileRecord> = tiles.iter().filter(|t| t.tissue).collect();
    kept.sort_by_key(|t| (t.mag_level, t.row, t.col));
    let vertices: Vec<Vertex> = kept
        .iter()
        .map(|t| Vertex {
            mag_level: t.mag_level,
            row: t.row,
            col: t.col,
        })
        .collect();
    if vertices.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Manifest {
            wsi_id,
            message: "duplicate tile key".into(),
        });
    }
    let index: HashMap<Vertex, u32> = vertices.iter().enumerate().map(|(i, v)| (*v, i as u32)).collect();

    let n = vertices.len();
    let mut adj: Vec<Vec<(u32, EdgeKind)>> = vec![Vec::new(); n];
    let mut link = |a: u32, b: u32, kind: EdgeKind| {
        adj[a as usize].push((b, kind));
        adj[b as usize].push((a, kind));
    };
    for (i, v) in vertices.iter().enumerate() {
        let i = i as u32;
        if v.mag_level == 1 {
            // right and down neighbours; left/up are covered from the other end
            for (dr, dc) in [(0, 1), (1, 0)] {
                let nb = Vertex {
                    mag_level: 1,
                    row: v.row + dr,
                    col: v.col + dc,
                };
                if let Some(&j) = index.get(&nb) {
                    link(i, j, EdgeKind::Spatial);
                }
            }
        } else {
            let k = ratios[v.mag_level as usize - 2];
            let parent = Vertex {
                mag_level: v.mag_level - 1,
                row: v.row / k,
                col: v.col / k,
            };
            if let Some(&p) = index.get(&parent) {
                link(p, i, EdgeKind::Magnification);
            }
        }
    }

    let mut csr_offsets = Vec::with_capacity(n + 1);
    let mut csr_targets = Vec::new();
    let mut csr_kinds = Vec::new();
    csr_offsets.push(0);
    for list in &mut adj {
        list.sort_unstable_by_key(|&(j, _)| j);
        for &(j, kind) in list.iter() {
            csr_targets.push(j);
            csr_kinds.push(kind);
        }
        csr_offsets.push(csr_targets.len());
    }

    let mut dim = 0;
    let mut feats = Vec::new();
    for (i, t) in kept.iter().enumerate() {
        let row = features.vector(t)?;
        if i == 0 {
            dim = row.len();
            feats.reserve(dim * n);
        } else if row.len() != dim {
            return Err(Error::FeatureDim {
                expected: dim,
                found: row.len(),
            });
        }
        if let Some(bad) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::Feature(format!(
                "non-finite value at component {bad} of {}[{}]",
                t.feature_file, t.feature_index
            )));
        }
        feats.extend_from_slice(&row);
    }

    Ok(MultiScaleGraph {
        wsi_id,
        vertices,
        csr_offsets,
        csr_targets,
        csr_kinds,
        features: feats,
        dim,
        level_magnifications: mags.iter().map(|&m| m as f32).collect(),
    })
}
