//! Multi-scale slide graphs.
//!
//! A [`MultiScaleGraph`] holds every tissue tile of one slide across all
//! magnification levels. Two edge families exist:
//!
//! - spatial edges join level-1 tiles that are 4-neighbours on the grid;
//! - magnification edges join a level-`m` tile to each level-`m+1` tile whose
//!   grid cell lies inside it, i.e. `child / k_m == parent` per axis where
//!   `k_m = mag(m+1) / mag(m)`.
//!
//! Edges are undirected and stored twice in CSR form, neighbour lists sorted.

mod build;
mod io;
mod manifest;

use serde::{Deserialize, Serialize};

pub use build::{build_graph, magnification_ratios};
pub use io::{decode_graph, encode_graph, load_graph, save_graph, GRAPH_MAGIC, GRAPH_VERSION};
pub use manifest::{parse_manifest, parse_manifest_str, write_manifest, TileRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Spatial,
    Magnification,
}

impl EdgeKind {
    pub fn code(self) -> u8 {
        match self {
            EdgeKind::Spatial => 0,
            EdgeKind::Magnification => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EdgeKind::Spatial),
            1 => Some(EdgeKind::Magnification),
            _ => None,
        }
    }
}

/// A tissue tile placed in the graph. `mag_level` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vertex {
    pub mag_level: u32,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleGraph {
    pub wsi_id: String,
    /// Sorted by `(mag_level, row, col)`; the position is the vertex index.
    pub vertices: Vec<Vertex>,
    pub csr_offsets: Vec<usize>,
    pub csr_targets: Vec<u32>,
    pub csr_kinds: Vec<EdgeKind>,
    /// Row-major `V x dim`.
    pub features: Vec<f32>,
    pub dim: usize,
    pub level_magnifications: Vec<f32>,
}

impl MultiScaleGraph {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.csr_targets.len() / 2
    }

    pub fn num_levels(&self) -> usize {
        self.level_magnifications.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.csr_targets[self.csr_offsets[i]..self.csr_offsets[i + 1]]
    }

    pub fn neighbor_kinds(&self, i: usize) -> &[EdgeKind] {
        &self.csr_kinds[self.csr_offsets[i]..self.csr_offsets[i + 1]]
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Each undirected edge once, as `(i, j, kind)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, EdgeKind)> + '_ {
        (0..self.num_vertices()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .zip(self.neighbor_kinds(i))
                .filter(move |(&j, _)| (j as usize) > i)
                .map(move |(&j, &k)| (i, j as usize, k))
        })
    }

    /// Vertex counts per level, index 0 holding level 1.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_levels()];
        for v in &self.vertices {
            counts[v.mag_level as usize - 1] += 1;
        }
        counts
    }

    /// Applies a vertex relabeling: vertex `i` of `self` becomes vertex
    /// `perm[i]` of the result. The result is canonical CSR but its vertex
    /// list is no longer sorted, so it is only meant for invariance checks.
    pub fn permuted(&self, perm: &[usize]) -> MultiScaleGraph {
        let n = self.num_vertices();
        assert_eq!(perm.len(), n);
        let mut vertices = self.vertices.clone();
        let mut features = vec![0f32; self.features.len()];
        let mut adj: Vec<Vec<(u32, EdgeKind)>> = vec![Vec::new(); n];
        for i in 0..n {
            let p = perm[i];
            vertices[p] = self.vertices[i];
            features[p * self.dim..(p + 1) * self.dim].copy_from_slice(self.feature_row(i));
            for (&j, &k) in self.neighbors(i).iter().zip(self.neighbor_kinds(i)) {
                adj[p].push((perm[j as usize] as u32, k));
            }
        }
        let mut csr_offsets = Vec::with_capacity(n + 1);
        let mut csr_targets = Vec::with_capacity(self.csr_targets.len());
        let mut csr_kinds = Vec::with_capacity(self.csr_kinds.len());
        csr_offsets.push(0);
        for list in &mut adj {
            list.sort_unstable_by_key(|&(j, _)| j);
            for &(j, k) in list.iter() {
                csr_targets.push(j);
                csr_kinds.push(k);
            }
            csr_offsets.push(csr_targets.len());
        }
        MultiScaleGraph {
            wsi_id: self.wsi_id.clone(),
            vertices,
            csr_offsets,
            csr_targets,
            csr_kinds,
            features,
            dim: self.dim,
            level_magnifications: self.level_magnifications.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphStats {
    pub vertices: usize,
    pub spatial_edges: usize,
    pub magnification_edges: usize,
    pub per_level: Vec<usize>,
    /// `degree_histogram[k]` = number of vertices with degree `k`.
    pub degree_histogram: Vec<usize>,
}

impl GraphStats {
    pub fn edges(&self) -> usize {
        self.spatial_edges + self.magnification_edges
    }
}

pub fn graph_stats(g: &MultiScaleGraph) -> GraphStats {
    let mut stats = GraphStats {
        vertices: g.num_vertices(),
        per_level: g.level_counts(),
        ..Default::default()
    };
    for (_, _, kind) in g.edges() {
        match kind {
            EdgeKind::Spatial => stats.spatial_edges += 1,
            EdgeKind::Magnification => stats.magnification_edges += 1,
        }
    }
    for i in 0..g.num_vertices() {
        let d = g.neighbors(i).len();
        if stats.degree_histogram.len() <= d {
            stats.degree_histogram.resize(d + 1, 0);
        }
        stats.degree_histogram[d] += 1;
    }
    stats
}
