//! `.msgg` graph files.
//!
//! ```text
//! header  "MSGG" | u32 version=1 | u32 V | u64 2E | u32 M | u32 d | M x f32 magnification
//! body    V x (u8 mag_level, u32 row, u32 col)
//!         (V+1) x u64 CSR offsets
//!         2E x u32 targets
//!         2E x u8 kinds (0 spatial, 1 magnification)
//!         V*d x f32 features, row-major
//! footer  u32 CRC32 of body
//! ```
//!
//! All integers little-endian. The slide id is not stored; it is the file stem.

use std::path::Path;

use super::{EdgeKind, MultiScaleGraph, Vertex};
use crate::error::{Error, Result};
use crate::util::{crc32, read_file, write_file, ByteReader, ByteWriter};

pub const GRAPH_MAGIC: &[u8; 4] = b"MSGG";
pub const GRAPH_VERSION: u32 = 1;

pub fn encode_graph(g: &MultiScaleGraph) -> Result<Vec<u8>> {
    let v = g.num_vertices();
    let slots = g.csr_targets.len();
    let m = g.num_levels();
    if g.vertices
        .iter()
        .any(|x| x.mag_level == 0 || x.mag_level > u8::MAX as u32)
    {
        return Err(Error::invalid("mag_level must fit in 1..=255"));
    }
    let mut w = ByteWriter::with_capacity(32 + 4 * m + 9 * v + 8 * (v + 1) + 5 * slots + 4 * g.features.len());
    w.bytes(GRAPH_MAGIC);
    w.u32(GRAPH_VERSION);
    w.u32(to_u32(v, "vertex count")?);
    w.u64(slots as u64);
    w.u32(to_u32(m, "level count")?);
    w.u32(to_u32(g.dim, "feature dimension")?);
    for &mag in &g.level_magnifications {
        w.f32(mag);
    }
    let body_start = w.buf.len();
    for x in &g.vertices {
        w.u8(x.mag_level as u8);
        w.u32(x.row);
        w.u32(x.col);
    }
    for &o in &g.csr_offsets {
        w.u64(o as u64);
    }
    for &t in &g.csr_targets {
        w.u32(t);
    }
    for &k in &g.csr_kinds {
        w.u8(k.code());
    }
    for &f in &g.features {
        w.f32(f);
    }
    let crc = crc32(&w.buf[body_start..]);
    w.u32(crc);
    Ok(w.buf)
}

pub fn decode_graph(bytes: &[u8], wsi_id: &str) -> Result<MultiScaleGraph> {
    let mut r = ByteReader::new(bytes, "graph");
    r.magic(GRAPH_MAGIC)?;
    let version = r.u32()?;
    if version != GRAPH_VERSION {
        return Err(Error::Version {
            expected: GRAPH_VERSION,
            found: version,
        });
    }
    let v = r.u32()? as usize;
    let slots = usize::try_from(r.u64()?).map_err(|_| Error::Malformed("edge slot count overflows".into()))?;
    let m = r.u32()? as usize;
    let dim = r.u32()? as usize;

    // Check the declared size before allocating anything proportional to it.
    let expected = (m as u128) * 4
        + (v as u128) * 9
        + (v as u128 + 1) * 8
        + (slots as u128) * 5
        + (v as u128) * (dim as u128) * 4
        + 4;
    if (r.remaining() as u128) < expected {
        return Err(Error::Truncated(format!(
            "graph: header declares {expected} more bytes, {} present",
            r.remaining()
        )));
    }
    if (r.remaining() as u128) > expected {
        return Err(Error::Malformed(format!(
            "graph: {} trailing bytes",
            r.remaining() as u128 - expected
        )));
    }

    let level_magnifications = r.f32_vec(m)?;
    let body_start = r.position();
    let mut vertices = Vec::with_capacity(v);
    for _ in 0..v {
        let mag_level = r.u8()? as u32;
        let row = r.u32()?;
        let col = r.u32()?;
        vertices.push(Vertex { mag_level, row, col });
    }
    let mut csr_offsets = Vec::with_capacity(v + 1);
    for _ in 0..=v {
        csr_offsets.push(r.u64()? as usize);
    }
    let mut csr_targets = Vec::with_capacity(slots);
    for _ in 0..slots {
        csr_targets.push(r.u32()?);
    }
    let mut csr_kinds = Vec::with_capacity(slots);
    for _ in 0..slots {
        let code = r.u8()?;
        csr_kinds.push(EdgeKind::from_code(code).ok_or_else(|| Error::Malformed(format!("unknown edge kind {code}")))?);
    }
    let features = r.f32_vec(v * dim)?;
    let body_end = r.position();
    let stored = r.u32()?;
    let computed = crc32(&bytes[body_start..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let g = MultiScaleGraph {
        wsi_id: wsi_id.to_string(),
        vertices,
        csr_offsets,
        csr_targets,
        csr_kinds,
        features,
        dim,
        level_magnifications,
    };
    check_structure(&g)?;
    Ok(g)
}

fn check_structure(g: &MultiScaleGraph) -> Result<()> {
    let v = g.num_vertices();
    if g.csr_offsets.first() != Some(&0) || g.csr_offsets.last() != Some(&g.csr_targets.len()) {
        return Err(Error::Malformed("CSR offsets do not span the target array".into()));
    }
    if g.csr_offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Malformed("CSR offsets decrease".into()));
    }
    if g.csr_targets.iter().any(|&t| t as usize >= v) {
        return Err(Error::Malformed("edge target out of range".into()));
    }
    if g.vertices
        .iter()
        .any(|x| x.mag_level == 0 || x.mag_level as usize > g.num_levels())
    {
        return Err(Error::Malformed("vertex level out of range".into()));
    }
    Ok(())
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit in u32")))
}

pub fn save_graph(g: &MultiScaleGraph, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_graph(g)?)
}

/// Loads a graph; its `wsi_id` is taken from the file stem.
pub fn load_graph(path: impl AsRef<Path>) -> Result<MultiScaleGraph> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    decode_graph(&bytes, stem)
}
