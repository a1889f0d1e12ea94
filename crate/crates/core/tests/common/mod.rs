//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use msgcn::features::MemoryFeatures;
use msgcn::graph::{build_graph, MultiScaleGraph, TileRecord};
use msgcn::numeric::rng::{stream, Purpose, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn rng(seed: u64, tag: u64) -> Rng {
    stream(seed, Purpose::Test, &[tag])
}

/// Random manifest for one slide: a level-1 grid of at most 4x4 cells and,
/// at every higher level, a random subset of the children of the tiles one
/// level down. Tissue flags are random, so parents can be missing. Stops
/// adding tiles once `max_tiles` is reached; every level keeps at least one tile.
pub fn random_manifest(
    rng: &mut Rng,
    wsi_id: &str,
    max_tiles: usize,
    mags: &[f64],
    dim: usize,
    feats: &mut MemoryFeatures,
) -> Vec<TileRecord> {
    let file = format!("{wsi_id}.msgf");
    let mut tiles: Vec<TileRecord> = Vec::new();
    let mut push = |tiles: &mut Vec<TileRecord>, level: u32, row: u32, col: u32, tissue: bool, rng: &mut Rng| {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
        let feature_index = feats.push(&file, v);
        tiles.push(TileRecord {
            wsi_id: wsi_id.to_string(),
            mag_level: level,
            magnification: mags[level as usize - 1],
            row,
            col,
            tissue,
            feature_file: file.clone(),
            feature_index,
        });
    };
    let rows = rng.random_range(1..=4u32);
    let cols = rng.random_range(1..=4u32);
    let p_tissue = rng.random_range(0.5..1.0);
    for r in 0..rows {
        for c in 0..cols {
            let tissue = rng.random::<f64>() < p_tissue;
            push(&mut tiles, 1, r, c, tissue, rng);
        }
    }
    let mut prev: Vec<(u32, u32)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    for m in 1..mags.len() {
        let k = (mags[m] / mags[m - 1]).round() as u32;
        let keep = rng.random_range(0.05..0.6);
        // leave room for one tile on every later level
        let budget = max_tiles.saturating_sub(tiles.len() + mags.len() - 1 - m);
        let mut next = Vec::new();
        for &(pr, pc) in &prev {
            for dr in 0..k {
                for dc in 0..k {
                    if next.len() < budget && rng.random::<f64>() < keep {
                        let tissue = rng.random::<f64>() < p_tissue;
                        push(&mut tiles, m as u32 + 1, pr * k + dr, pc * k + dc, tissue, rng);
                        next.push((pr * k + dr, pc * k + dc));
                    }
                }
            }
        }
        if next.is_empty() {
            push(&mut tiles, m as u32 + 1, prev[0].0 * k, prev[0].1 * k, true, rng);
            next.push((prev[0].0 * k, prev[0].1 * k));
        }
        prev = next;
    }
    tiles
}

/// Random magnification ladder with ratios drawn from {2, 5}.
pub fn random_mags(rng: &mut Rng, levels: usize) -> Vec<f64> {
    let mut mags = vec![1.0];
    for _ in 1..levels {
        let k = if rng.random::<bool>() { 2.0 } else { 5.0 };
        mags.push(mags.last().unwrap() * k);
    }
    mags
}

/// A random graph with at least one tissue vertex and at most `max_tiles` tiles.
pub fn random_graph(seed: u64, max_tiles: usize, levels: usize, dim: usize) -> MultiScaleGraph {
    for attempt in 0.. {
        let mut r = rng(seed, attempt);
        let mags = random_mags(&mut r, levels);
        let mut feats = MemoryFeatures::new(dim);
        let tiles = random_manifest(&mut r, &format!("g{seed}"), max_tiles, &mags, dim, &mut feats);
        if tiles.iter().filter(|t| t.tissue).count() >= 2 {
            return build_graph(&tiles, &feats).unwrap();
        }
    }
    unreachable!()
}

/// Level-1 path of `n` tissue tiles in one row, features random.
pub fn path_graph(n: u32, dim: usize, seed: u64) -> MultiScaleGraph {
    let mut r = rng(seed, 0);
    let mut feats = MemoryFeatures::new(dim);
    let tiles: Vec<TileRecord> = (0..n)
        .map(|c| {
            let v = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal) as f32).collect();
            TileRecord {
                wsi_id: "path".into(),
                mag_level: 1,
                magnification: 1.0,
                row: 0,
                col: c,
                tissue: true,
                feature_file: "path.msgf".into(),
                feature_index: feats.push("path.msgf", v),
            }
        })
        .collect();
    build_graph(&tiles, &feats).unwrap()
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub entries: usize,
    /// Entries where the two one-sided differences disagree, i.e. the probe
    /// straddles a ReLU kink and the central difference is meaningless.
    pub kinks: usize,
    /// Worst relative error: against the central difference for smooth
    /// entries, against the closer one-sided difference at kinks.
    pub worst: f64,
    pub worst_at: String,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares every analytic parameter gradient with finite differences of
/// the eval-mode loss at step `h`. An entry whose central difference misses
/// by more than `tol` while its one-sided differences disagree is a kink
/// crossing and is judged against the closer second-order one-sided
/// difference, which never leaves the side it samples.
pub fn check_model_gradients(model: &msgcn::Model, g: &MultiScaleGraph, label: usize, h: f64, tol: f64) -> GradReport {
    use msgcn::numeric::cross_entropy;
    use msgcn::Mode;
    let analytic = model.loss_and_gradients(g, label, Mode::Eval).unwrap().grads;
    let loss_at = |m: &msgcn::Model| cross_entropy(&m.forward(g, Mode::Eval).unwrap().logits, label);
    let center = loss_at(model);
    let mut probe = model.clone();
    let mut rep = GradReport::default();
    for i in 0..model.params.len() {
        for k in 0..model.params.value(i).len() {
            let orig = probe.params.value(i).data()[k];
            probe.params.value_mut(i).data_mut()[k] = orig + h;
            let up = loss_at(&probe);
            probe.params.value_mut(i).data_mut()[k] = orig - h;
            let down = loss_at(&probe);
            probe.params.value_mut(i).data_mut()[k] = orig;
            let a = analytic[i].data()[k];
            let (fwd, bwd) = ((up - center) / h, (center - down) / h);
            let central = rel_err(a, (up - down) / (2.0 * h));
            let err = if central > tol && rel_err(fwd, bwd) > 1e-2 {
                rep.kinks += 1;
                // second-order one-sided stencils on [x, x+h] and [x-h, x]
                probe.params.value_mut(i).data_mut()[k] = orig + h / 2.0;
                let up_half = loss_at(&probe);
                probe.params.value_mut(i).data_mut()[k] = orig - h / 2.0;
                let down_half = loss_at(&probe);
                probe.params.value_mut(i).data_mut()[k] = orig;
                let fwd2 = (-3.0 * center + 4.0 * up_half - up) / h;
                let bwd2 = (3.0 * center - 4.0 * down_half + down) / h;
                rel_err(a, fwd2).min(rel_err(a, bwd2))
            } else {
                central
            };
            rep.entries += 1;
            if err > rep.worst {
                rep.worst = err;
                rep.worst_at = format!("{}[{k}]", model.params.names()[i]);
            }
        }
    }
    rep
}
