//! Synthetic slide datasets with class signal planted at one magnification.
//!
//! - `Structure`: class 0 slides have a compact level-1 tissue blob, class 1
//!   an elongated strip; level-1 tissue features carry a mean shift of
//!   `-signal` (class 0) or `+signal` (class 1) on a fixed random set of
//!   coordinates. Every other level is `N(0, noise^2)`.
//! - `Cellular`: every slide has the same mask; the shift sits on level-M
//!   features only.
//!
//! Levels above 1 contain every descendant of each level-1 tissue tile.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{write_labels, FeatureFile, MemoryFeatures};
use crate::error::{Error, Result};
use crate::graph::{magnification_ratios, write_manifest, TileRecord};
use crate::numeric::rng::{stream, Purpose, Rng};

/// Number of coordinates carrying the class signal.
pub const SIGNAL_DIMS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Structure,
    Cellular,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structure" => Ok(Task::Structure),
            "cellular" => Ok(Task::Cellular),
            _ => Err(Error::invalid(format!("unknown task {s:?} (structure|cellular)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub num_wsis: usize,
    pub num_levels: usize,
    pub level_magnifications: Vec<f64>,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub task: Task,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub dim: usize,
    pub seed: u64,
    /// Fraction of slides labelled 1.
    pub class_balance: f64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            num_wsis: 40,
            num_levels: 4,
            level_magnifications: vec![1.0, 5.0, 10.0, 20.0],
            grid_rows: 6,
            grid_cols: 6,
            task: Task::Structure,
            signal_strength: 1.5,
            noise_sigma: 1.0,
            dim: 64,
            seed: 0,
            class_balance: 0.5,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<Vec<u32>> {
        let fail = |m: &str| Err(Error::invalid(format!("synthetic spec: {m}")));
        if self.num_wsis == 0 {
            return fail("num_wsis must be positive");
        }
        if self.num_levels == 0 || self.num_levels > u8::MAX as usize {
            return fail("num_levels must be in 1..=255");
        }
        if self.level_magnifications.len() != self.num_levels {
            return fail("level_magnifications must have num_levels entries");
        }
        if self.level_magnifications.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return fail("magnifications must be positive");
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return fail("grid must be non-empty");
        }
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be non-negative");
        }
        if !(self.signal_strength > 0.0 && self.signal_strength.is_finite()) {
            return fail("signal_strength must be positive");
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return fail("class_balance must lie in (0, 1)");
        }
        if self.level_magnifications.windows(2).any(|w| w[1] <= w[0]) {
            return fail("magnifications must increase");
        }
        magnification_ratios(&self.level_magnifications)
    }

    pub fn signal_level(&self) -> u32 {
        match self.task {
            Task::Structure => 1,
            Task::Cellular => self.num_levels as u32,
        }
    }
}

/// In-memory synthetic dataset; [`generate_synthetic`] writes one to disk.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<TileRecord>,
    pub features: MemoryFeatures,
    /// `(wsi_id, label)` in slide order.
    pub labels: Vec<(String, usize)>,
    /// Coordinates carrying the mean shift.
    pub signal_dims: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub manifest: PathBuf,
    pub feature_files: Vec<PathBuf>,
    pub labels: PathBuf,
}

pub fn synthesize(spec: &SyntheticDatasetSpec) -> Result<SyntheticDataset> {
    let ratios = spec.validate()?;
    let mut rng = stream(spec.seed, Purpose::SynthDataset, &[]);

    let mut dims: Vec<usize> = (0..spec.dim).collect();
    dims.shuffle(&mut rng);
    dims.truncate(SIGNAL_DIMS.min(spec.dim));
    dims.sort_unstable();

    let positives = (spec.num_wsis as f64 * spec.class_balance).round() as usize;
    let mut labels: Vec<usize> = (0..spec.num_wsis).map(|i| usize::from(i < positives)).collect();
    labels.shuffle(&mut rng);

    let width = spec.num_wsis.saturating_sub(1).to_string().len().max(3);
    let mut out = SyntheticDataset {
        records: Vec::new(),
        features: MemoryFeatures::new(spec.dim),
        labels: Vec::with_capacity(spec.num_wsis),
        signal_dims: dims,
    };
    for (i, &label) in labels.iter().enumerate() {
        let wsi_id = format!("wsi_{i:0width$}");
        let mut rng = stream(spec.seed, Purpose::SynthSlide, &[i as u64]);
        let mask = tissue_mask(spec, label, &mut rng);
        emit_slide(spec, &ratios, &wsi_id, label, &mask, &mut rng, &mut out);
        out.labels.push((wsi_id, label));
    }
    Ok(out)
}

/// Writes `tiles.jsonl`, `features/<wsi_id>.msgf` and `labels.csv` into `out_dir`.
pub fn generate_synthetic(spec: &SyntheticDatasetSpec, out_dir: impl AsRef<Path>) -> Result<SyntheticOutput> {
    let out_dir = out_dir.as_ref();
    let data = synthesize(spec)?;
    let feat_dir = out_dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let mut feature_files = Vec::new();
    for (name, file) in data.features.files() {
        let path = out_dir.join(name);
        FeatureFile::save(&file, &path)?;
        feature_files.push(path);
    }
    let manifest = out_dir.join("tiles.jsonl");
    write_manifest(&manifest, &data.records)?;
    let labels = out_dir.join("labels.csv");
    write_labels(&labels, data.labels.iter().map(|(id, l)| (id.as_str(), *l)))?;
    Ok(SyntheticOutput {
        manifest,
        feature_files,
        labels,
    })
}

/// Level-1 tissue mask, row-major `grid_rows x grid_cols`.
fn tissue_mask(spec: &SyntheticDatasetSpec, label: usize, rng: &mut Rng) -> Vec<bool> {
    let (rows, cols) = (spec.grid_rows, spec.grid_cols);
    let (h, w) = match (spec.task, label) {
        (Task::Cellular, _) => (2.min(rows), 3.min(cols)),
        (Task::Structure, 0) => {
            let (h, w) = [(2, 2), (2, 3), (3, 2)][rng.random_range(0..3)];
            (h.min(rows), w.min(cols))
        }
        (Task::Structure, _) => {
            let len = rng.random_range(4..=6u32);
            if rng.random::<bool>() {
                (1, len.min(cols))
            } else {
                (len.min(rows), 1)
            }
        }
    };
    let (r0, c0) = match spec.task {
        Task::Cellular => ((rows - h) / 2, (cols - w) / 2),
        Task::Structure => (rng.random_range(0..=rows - h), rng.random_range(0..=cols - w)),
    };
    let mut mask = vec![false; (rows * cols) as usize];
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            mask[(r * cols + c) as usize] = true;
        }
    }
    mask
}

fn emit_slide(
    spec: &SyntheticDatasetSpec,
    ratios: &[u32],
    wsi_id: &str,
    label: usize,
    mask: &[bool],
    rng: &mut Rng,
    out: &mut SyntheticDataset,
) {
    let file = format!("features/{wsi_id}.msgf");
    let shift = if label == 1 {
        spec.signal_strength
    } else {
        -spec.signal_strength
    };
    let signal_level = spec.signal_level();

    let mut push = |level: u32, row: u32, col: u32, tissue: bool, rng: &mut Rng| {
        let mut v: Vec<f64> = (0..spec.dim)
            .map(|_| spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if tissue && level == signal_level {
            for &d in &out.signal_dims {
                v[d] += shift;
            }
        }
        let index = out.features.push(&file, v.into_iter().map(|x| x as f32).collect());
        out.records.push(TileRecord {
            wsi_id: wsi_id.to_string(),
            mag_level: level,
            magnification: spec.level_magnifications[level as usize - 1],
            row,
            col,
            tissue,
            feature_file: file.clone(),
            feature_index: index,
        });
    };

    for r in 0..spec.grid_rows {
        for c in 0..spec.grid_cols {
            push(1, r, c, mask[(r * spec.grid_cols + c) as usize], rng);
        }
    }
    let mut scale = 1u32;
    for (m, &k) in ratios.iter().enumerate() {
        scale *= k;
        let level = m as u32 + 2;
        for r in 0..spec.grid_rows * scale {
            for c in 0..spec.grid_cols * scale {
                if mask[((r / scale) * spec.grid_cols + c / scale) as usize] {
                    push(level, r, c, true, rng);
                }
            }
        }
    }
}
