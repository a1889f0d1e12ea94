//! Per-tile feature vectors.
//!
//! Feature extraction itself happens upstream; this module reads the
//! resulting `.msgf` files, serves vectors to graph construction through
//! [`FeatureProvider`], and generates synthetic datasets.
//!
//! `.msgf` layout, little-endian: `"MSGF" | u32 version=1 | u32 num_vectors |
//! u32 dim | num_vectors*dim f32`.

mod synth;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

pub use synth::{generate_synthetic, synthesize, SyntheticDataset, SyntheticDatasetSpec, SyntheticOutput, Task};

use crate::error::{Error, Result};
use crate::graph::TileRecord;
use crate::numeric::Tensor;
use crate::util::{read_file, write_file, ByteReader, ByteWriter};

pub const FEATURE_MAGIC: &[u8; 4] = b"MSGF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    /// Row-major `num_vectors x dim`.
    pub data: Vec<f32>,
}

impl FeatureFile {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::Feature("dimension 0 with non-empty payload".into()));
            }
        } else if data.len() % dim != 0 {
            return Err(Error::Feature(format!(
                "payload of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn num_vectors(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> Result<&[f32]> {
        if i >= self.num_vectors() {
            return Err(Error::Feature(format!(
                "index {i} out of range for {} vectors",
                self.num_vectors()
            )));
        }
        Ok(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(16 + 4 * self.data.len());
        w.bytes(FEATURE_MAGIC);
        w.u32(FEATURE_VERSION);
        w.u32(self.num_vectors() as u32);
        w.u32(self.dim as u32);
        for &x in &self.data {
            w.f32(x);
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "features");
        r.magic(FEATURE_MAGIC)?;
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Version {
                expected: FEATURE_VERSION,
                found: version,
            });
        }
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let count = n
            .checked_mul(dim)
            .filter(|&c| c <= r.remaining() / 4)
            .ok_or_else(|| Error::Truncated(format!("features: {n} x {dim} payload exceeds file")))?;
        let data = r.f32_vec(count)?;
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!("features: {} trailing bytes", r.remaining())));
        }
        Ok(Self { dim, data })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }
}

/// Writes `data` (row-major, `dim` columns) as a feature file.
pub fn write_features(path: impl AsRef<Path>, dim: usize, data: &[f32]) -> Result<()> {
    FeatureFile::new(dim, data.to_vec())?.save(path)
}

/// Reads the requested rows, in request order, widened to `f64`.
pub fn read_features(path: impl AsRef<Path>, indices: &[usize]) -> Result<Tensor> {
    let file = FeatureFile::load(path)?;
    let mut out = Vec::with_capacity(indices.len() * file.dim);
    for &i in indices {
        out.extend(file.row(i)?.iter().map(|&x| f64::from(x)));
    }
    Tensor::matrix(indices.len(), file.dim, out)
}

/// Source of per-tile feature vectors for graph construction.
pub trait FeatureProvider: Sync {
    fn vector(&self, tile: &TileRecord) -> Result<Vec<f32>>;
}

/// Feature files on disk, resolved relative to a root directory and cached.
#[derive(Debug)]
pub struct FeatureDir {
    root: PathBuf,
    cache: Mutex<HashMap<String, Arc<FeatureFile>>>,
}

impl FeatureDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn file(&self, name: &str) -> Result<Arc<FeatureFile>> {
        if let Some(f) = self.cache.lock().unwrap().get(name) {
            return Ok(f.clone());
        }
        let path = self.root.join(name);
        let file = Arc::new(FeatureFile::load(&path).map_err(|e| match e {
            Error::Io { .. } => Error::Feature(format!("cannot read {}: {e}", path.display())),
            other => other,
        })?);
        self.cache.lock().unwrap().insert(name.to_string(), file.clone());
        Ok(file)
    }
}

impl FeatureProvider for FeatureDir {
    fn vector(&self, tile: &TileRecord) -> Result<Vec<f32>> {
        let file = self.file(&tile.feature_file)?;
        file.row(tile.feature_index as usize)
            .map(<[f32]>::to_vec)
            .map_err(|e| Error::Feature(format!("{}: {e}", tile.feature_file)))
    }
}

/// In-memory feature files keyed by name.
#[derive(Debug, Clone, Default)]
pub struct MemoryFeatures {
    dim: usize,
    files: BTreeMap<String, Vec<f32>>,
}

impl MemoryFeatures {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            files: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Appends a vector to `file` and returns its index there.
    pub fn push(&mut self, file: &str, v: Vec<f32>) -> u32 {
        assert_eq!(v.len(), self.dim, "vector length must equal dim");
        let data = self.files.entry(file.to_string()).or_default();
        let idx = data.len() / self.dim.max(1);
        data.extend(v);
        idx as u32
    }

    pub fn files(&self) -> impl Iterator<Item = (&str, FeatureFile)> + '_ {
        self.files.iter().map(|(k, v)| {
            (
                k.as_str(),
                FeatureFile {
                    dim: self.dim,
                    data: v.clone(),
                },
            )
        })
    }
}

impl FeatureProvider for MemoryFeatures {
    fn vector(&self, tile: &TileRecord) -> Result<Vec<f32>> {
        let data = self
            .files
            .get(&tile.feature_file)
            .ok_or_else(|| Error::Feature(format!("unknown feature file {}", tile.feature_file)))?;
        let i = tile.feature_index as usize;
        if (i + 1) * self.dim > data.len() {
            return Err(Error::Feature(format!(
                "index {i} out of range in {}",
                tile.feature_file
            )));
        }
        Ok(data[i * self.dim..(i + 1) * self.dim].to_vec())
    }
}

/// Returns the same all-zero vector for every tile; for structural tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFeatures {
    dim: usize,
}

impl ConstantFeatures {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl FeatureProvider for ConstantFeatures {
    fn vector(&self, _tile: &TileRecord) -> Result<Vec<f32>> {
        Ok(vec![0.0; self.dim])
    }
}

/// Reads a `wsi_id,label` CSV.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "wsi_id,label" => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "expected header `wsi_id,label`".into(),
            })
        }
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| bad("expected `wsi_id,label`".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| bad(format!("label {label:?} is not a non-negative integer")))?;
        if out.insert(id.trim().to_string(), label).is_some() {
            return Err(bad(format!("duplicate wsi_id {id}")));
        }
    }
    Ok(out)
}

pub fn write_labels<'a>(path: impl AsRef<Path>, labels: impl IntoIterator<Item = (&'a str, usize)>) -> Result<()> {
    let mut s = String::from("wsi_id,label\n");
    for (id, l) in labels {
        s.push_str(&format!("{id},{l}\n"));
    }
    write_file(path.as_ref(), s.as_bytes())
}
