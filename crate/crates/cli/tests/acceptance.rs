//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! `cargo test -p msgcn-cli --test acceptance` runs everything; set
//! `ACCEPTANCE_ONLY=1,4,12` to run a subset.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod fixtures;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use msgcn::error::Error;
use msgcn::features::{synthesize, ConstantFeatures, FeatureFile, MemoryFeatures};
use msgcn::graph::{build_graph, decode_graph, encode_graph, graph_stats, load_graph, save_graph};
use msgcn::numeric::rng::{stream, Purpose};
use msgcn::numeric::ParamStore;
use msgcn::train::{
    cross_validate, load_model, save_model, stratified_split, train_final, Dataset, ModelMetadata, RunConfig,
};
use msgcn::{
    auroc, influence_scores, qwk, EdgeKind, Mode, Model, ModelConfig, MultiScaleGraph, SyntheticDatasetSpec, Task,
    TileRecord,
};
use rand::seq::SliceRandom;
use rand::Rng as _;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const GRAPH_ORACLE_SECS: f64 = 10.0;
const GRAD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SECS: f64 = 60.0;
const PERM_LOGIT_TOL: f64 = 1e-9;
const ATTENTION_SUM_TOL_F32: f32 = 1e-6;
const INFLUENCE_SUM_TOL: f64 = 1e-9;
const INFLUENCE_SCALE_TOL: f64 = 1e-12;
const TASK_AUROC: f64 = 0.90;
const TASK_SEEDS: u64 = 5;
const TASK_SEEDS_NEEDED: usize = 4;
const TASK_SECS: f64 = 600.0;
const METRIC_TOL: f64 = 1e-12;

type Check = Result<String, String>;

/// Every attention vector produced by a forward pass in this run: count,
/// failures, largest |sum - 1|.
static ATTENTION: Mutex<(usize, Vec<String>, f64)> = Mutex::new((0, Vec::new(), 0.0));

/// Sums the f32-rounded weights in f64 so the accumulator adds no rounding of
/// its own; a running f32 sum over ~2600 vertices drifts by ~1e-6 by itself.
fn note_attention(z: &[f64]) {
    let s: f64 = z.iter().map(|&x| x as f32 as f64).sum();
    let dev = (s - 1.0).abs();
    let mut a = ATTENTION.lock().unwrap();
    a.0 += 1;
    a.2 = a.2.max(dev);
    if dev > ATTENTION_SUM_TOL_F32 as f64 || !z.iter().all(|&x| x > 0.0) {
        let n = a.0;
        a.1.push(format!(
            "forward {n}: sum {s}, min {:e}",
            z.iter().cloned().fold(f64::INFINITY, f64::min)
        ));
    }
}

fn forward(model: &Model, g: &MultiScaleGraph) -> msgcn::ForwardResult {
    let r = model.forward(g, Mode::Eval).unwrap();
    note_attention(&r.attention);
    r
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn small_config(dim: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_layers: 3,
        ..ModelConfig::new(dim, classes)
    }
}

type EdgeSet = BTreeSet<(usize, usize, EdgeKind)>;

/// All vertex pairs tested against the two edge definitions.
fn brute_force_edges(g: &MultiScaleGraph, mags: &[f64]) -> EdgeSet {
    let mut out = BTreeSet::new();
    for i in 0..g.num_vertices() {
        for j in i + 1..g.num_vertices() {
            let (a, b) = (g.vertices[i], g.vertices[j]);
            if a.mag_level == 1 && b.mag_level == 1 && a.row.abs_diff(b.row) + a.col.abs_diff(b.col) == 1 {
                out.insert((i, j, EdgeKind::Spatial));
            }
            let (lo, hi) = if a.mag_level < b.mag_level { (a, b) } else { (b, a) };
            if hi.mag_level == lo.mag_level + 1 {
                let k = (mags[hi.mag_level as usize - 1] / mags[lo.mag_level as usize - 1]).round() as u32;
                if hi.row / k == lo.row && hi.col / k == lo.col {
                    out.insert((i, j, EdgeKind::Magnification));
                }
            }
        }
    }
    out
}

fn c1_graph_oracle() -> Check {
    let t = Instant::now();
    let mut tiles_max = 0;
    for seed in 0..100u64 {
        let mut r = fixtures::rng(seed, 1000);
        let levels = 1 + (seed as usize % 4);
        let mags = fixtures::random_mags(&mut r, levels);
        let mut feats = MemoryFeatures::new(3);
        let tiles = fixtures::random_manifest(&mut r, "s", 200, &mags, 3, &mut feats);
        tiles_max = tiles_max.max(tiles.len());
        let g = build_graph(&tiles, &feats).map_err(|e| e.to_string())?;
        let built: EdgeSet = g.edges().collect();
        ensure(built == brute_force_edges(&g, &mags), || {
            format!("manifest {seed}: edge sets differ")
        })?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(tiles_max <= 200, || format!("manifest with {tiles_max} tiles"))?;
    ensure(secs < GRAPH_ORACLE_SECS, || format!("took {secs:.2} s"))?;
    Ok(format!("100 manifests, up to {tiles_max} tiles, exact; {secs:.2} s"))
}

fn full_pyramid(rows: u32, cols: u32, mags: &[f64]) -> Vec<TileRecord> {
    let mut tiles = Vec::new();
    let mut scale = 1u32;
    for (m, &mag) in mags.iter().enumerate() {
        if m > 0 {
            scale *= (mag / mags[m - 1]).round() as u32;
        }
        for row in 0..rows * scale {
            for col in 0..cols * scale {
                tiles.push(TileRecord {
                    wsi_id: "full".into(),
                    mag_level: m as u32 + 1,
                    magnification: mag,
                    row,
                    col,
                    tissue: true,
                    feature_file: "f".into(),
                    feature_index: 0,
                });
            }
        }
    }
    tiles
}

fn c2_closed_form() -> Check {
    let g = build_graph(&full_pyramid(6, 6, &[1.0]), &ConstantFeatures::new(1)).map_err(|e| e.to_string())?;
    let spatial = graph_stats(&g).spatial_edges;
    ensure(spatial == 60, || format!("6x6 grid: {spatial} spatial edges"))?;
    let g = build_graph(&full_pyramid(6, 6, &[1.0, 5.0, 10.0, 20.0]), &ConstantFeatures::new(1))
        .map_err(|e| e.to_string())?;
    let s = graph_stats(&g);
    let upper: usize = s.per_level[1..].iter().sum();
    ensure(s.magnification_edges == upper, || {
        format!(
            "{} magnification edges, {upper} vertices above level 1",
            s.magnification_edges
        )
    })?;
    ensure(s.spatial_edges == 60, || {
        format!("pyramid: {} spatial edges", s.spatial_edges)
    })?;
    Ok(format!(
        "60 spatial; {upper} magnification edges = vertices at levels 2..4"
    ))
}

/// Plain central differences of the eval-mode loss against every analytic
/// parameter gradient entry. Returns (entries, worst relative error, where).
fn central_differences(model: &Model, g: &MultiScaleGraph, label: usize) -> (usize, f64, String) {
    let loss = |m: &Model| msgcn::numeric::cross_entropy(&forward(m, g).logits, label);
    let analytic = model.loss_and_gradients(g, label, Mode::Eval).unwrap().grads;
    let mut probe = model.clone();
    let (mut entries, mut worst, mut at) = (0, 0.0f64, String::new());
    for i in 0..model.params.len() {
        for k in 0..model.params.value(i).len() {
            let orig = probe.params.value(i).data()[k];
            probe.params.value_mut(i).data_mut()[k] = orig + GRAD_STEP;
            let up = loss(&probe);
            probe.params.value_mut(i).data_mut()[k] = orig - GRAD_STEP;
            let down = loss(&probe);
            probe.params.value_mut(i).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let a = analytic[i].data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            entries += 1;
            if err > worst {
                worst = err;
                at = format!("{}[{k}]", model.params.names()[i]);
            }
        }
    }
    (entries, worst, at)
}

/// Fixed graphs on which no ReLU pre-activation lies within the probe
/// radius, so the central difference is a valid oracle.
const GRAD_GRAPH_SEEDS: [u64; 2] = [9, 11];

fn c3_gradients() -> Check {
    let t = Instant::now();
    let (mut entries, mut worst, mut worst_at) = (0, 0.0f64, String::new());
    for seed in GRAD_GRAPH_SEEDS {
        for classes in [2usize, 6] {
            let g = fixtures::random_graph(seed, 30, 3, 5);
            ensure(g.num_vertices() <= 30, || {
                format!("graph with {} vertices", g.num_vertices())
            })?;
            let model = Model::init(small_config(5, classes), seed).map_err(|e| e.to_string())?;
            let (n, w, at) = central_differences(&model, &g, classes - 1);
            entries += n;
            if w > worst {
                worst = w;
                worst_at = format!("graph {seed} C={classes} {at}");
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "{entries} entries on graphs {GRAD_GRAPH_SEEDS:?} (h = 8, L = 3, C = 2 and 6), max rel err {worst:.2e} ({worst_at}), {secs:.1} s"
    );
    ensure(worst <= GRAD_TOL && secs < GRAD_SECS, || detail.clone())?;
    Ok(detail)
}

fn c4_permutation() -> Check {
    let g = fixtures::random_graph(21, 60, 3, 6);
    let model = Model::init(small_config(6, 3), 5).map_err(|e| e.to_string())?;
    let base = forward(&model, &g);
    let (mut worst_logit, mut worst_z) = (0.0f64, 0.0f64);
    for k in 0..20u64 {
        let mut perm: Vec<usize> = (0..g.num_vertices()).collect();
        perm.shuffle(&mut stream(k, Purpose::Test, &[1]));
        let r = forward(&model, &g.permuted(&perm));
        for (a, b) in base.logits.iter().zip(&r.logits) {
            worst_logit = worst_logit.max(rel(*a, *b));
        }
        for (i, &p) in perm.iter().enumerate() {
            worst_z = worst_z.max(rel(base.attention[i], r.attention[p]));
        }
    }
    let detail = format!("20 permutations, max logit rel diff {worst_logit:.1e}, max z rel diff {worst_z:.1e}");
    ensure(worst_logit <= PERM_LOGIT_TOL && worst_z <= 1e-12, || detail.clone())?;
    Ok(detail)
}

fn c5_locality() -> Check {
    for layers in 1..=4usize {
        let n = layers as u32 + 2;
        let g = fixtures::path_graph(n, 4, layers as u64);
        let cfg = ModelConfig {
            num_layers: layers,
            ..small_config(4, 2)
        };
        let model = Model::init(cfg, 9).map_err(|e| e.to_string())?;
        let state = |g: &MultiScaleGraph| -> Vec<u64> {
            let r = model.forward_inspect(g, Mode::Eval).unwrap();
            note_attention(&r.attention);
            r.per_layer_vertex_states.unwrap()[layers]
                .row(0)
                .iter()
                .map(|x| x.to_bits())
                .collect()
        };
        let before = state(&g);
        let mut far = g.clone();
        for x in &mut far.features[(n as usize - 1) * 4..] {
            *x += 3.0;
        }
        ensure(state(&far) == before, || {
            format!("L={layers}: far endpoint reached vertex 0")
        })?;
    }
    Ok("L = 1..4: near endpoint's layer-L state bit-identical".into())
}

fn c6_attention() -> Check {
    for seed in 0..40u64 {
        let g = fixtures::random_graph(seed, 150, 1 + seed as usize % 4, 7);
        let model = Model::init(small_config(7, 2 + seed as usize % 5), seed).map_err(|e| e.to_string())?;
        forward(&model, &g);
    }
    let a = ATTENTION.lock().unwrap();
    ensure(a.1.is_empty(), || {
        format!("{} of {} forwards off: {}", a.1.len(), a.0, a.1[0])
    })?;
    Ok(format!(
        "{} forwards, all sum to 1 within {ATTENTION_SUM_TOL_F32:e} (f32 weights) with z > 0; max |sum - 1| {:.1e}",
        a.0, a.2
    ))
}

fn influence(items: &[(MultiScaleGraph, Vec<f64>)]) -> Vec<f64> {
    let pairs: Vec<(&MultiScaleGraph, &[f64])> = items.iter().map(|(g, z)| (g, z.as_slice())).collect();
    influence_scores(&pairs, "acceptance").unwrap().per_level_scores
}

fn c7_influence() -> Check {
    let (mut worst_sum, mut worst_scale) = (0.0f64, 0.0f64);
    let mut r = fixtures::rng(7, 7);
    for case in 0..100u64 {
        let levels = 1 + case as usize % 4;
        let model = Model::init(small_config(3, 2), case).map_err(|e| e.to_string())?;
        let items: Vec<(MultiScaleGraph, Vec<f64>)> = (0..1 + case % 5)
            .map(|i| {
                let g = fixtures::random_graph(case * 100 + i, 80, levels, 3);
                let z = forward(&model, &g).attention;
                (g, z)
            })
            .collect();
        let s = influence(&items);
        worst_sum = worst_sum.max((s.iter().sum::<f64>() - 1.0).abs());
        let c = 10f64.powf(r.random_range(-6.0..6.0));
        let scaled: Vec<_> = items
            .iter()
            .map(|(g, z)| (g.clone(), z.iter().map(|x| x * c).collect()))
            .collect();
        for (a, b) in s.iter().zip(influence(&scaled)) {
            worst_scale = worst_scale.max((a - b).abs());
        }
    }
    let detail = format!("100 datasets: |sum - 1| <= {worst_sum:.1e}, rescaling moves scores by <= {worst_scale:.1e}");
    ensure(
        worst_sum <= INFLUENCE_SUM_TOL && worst_scale <= INFLUENCE_SCALE_TOL,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn task_dataset(task: Task, seed: u64) -> Dataset {
    let spec = SyntheticDatasetSpec {
        num_wsis: 50,
        task,
        seed,
        ..Default::default()
    };
    let d = synthesize(&spec).unwrap();
    let mut by_wsi: BTreeMap<&str, Vec<TileRecord>> = BTreeMap::new();
    for t in &d.records {
        by_wsi.entry(t.wsi_id.as_str()).or_default().push(t.clone());
    }
    let graphs = d
        .labels
        .iter()
        .map(|(id, _)| build_graph(&by_wsi[id.as_str()], &d.features).unwrap())
        .collect();
    Dataset::new(graphs, d.labels.iter().map(|&(_, l)| l).collect(), 2).unwrap()
}

struct TaskRun {
    auroc: f64,
    scores: Vec<f64>,
    secs: f64,
    losses: Vec<f64>,
    summary: String,
}

/// Default run config: cross-validated grid search on the 40 training
/// slides, final training, then test AUROC and influence on the 10 test slides.
fn task_run(task: Task, seed: u64) -> TaskRun {
    let data = task_dataset(task, seed);
    let t = Instant::now();
    let mut run = RunConfig::default();
    run.train.seed = seed;
    let (train, test) = stratified_split(&data.labels, 2, 1.0 - run.train.train_fraction, seed).unwrap();
    assert_eq!((train.len(), test.len()), (40, 10));
    let cv = cross_validate(&data, &train, &run.grid, &run.train, &run.model).unwrap();
    let fin = train_final(&data, &train, &test, &cv.best, &run.train, &run.model).unwrap();
    let items: Vec<_> = test
        .iter()
        .map(|&i| (data.graphs[i].clone(), forward(&fin.model, &data.graphs[i]).attention))
        .collect();
    let scores = influence(&items);
    let p = &cv.best;
    TaskRun {
        auroc: fin.test.unwrap().value,
        scores,
        secs: t.elapsed().as_secs_f64(),
        losses: fin.log.iter().filter(|r| r.split == "train").map(|r| r.loss).collect(),
        summary: format!(
            "lr {:e} hidden {} dropout {} batch {}, cv auroc {:.3}",
            p.learning_rate, p.hidden_dim, p.dropout, p.batch_size, cv.best_mean_metric
        ),
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b })
}

/// `time_limit` applies to every single seed's run, data generation excluded.
fn synthetic_task(
    task: Task,
    want_level: usize,
    time_limit: Option<f64>,
    decreasing: &mut Option<(usize, u64)>,
) -> Check {
    let mut good = 0;
    let mut slowest = 0.0f64;
    let mut lines = Vec::new();
    let mut strictly = 0;
    for seed in 1..=TASK_SEEDS {
        let r = task_run(task, seed);
        let level = argmax(&r.scores) + 1;
        let ok = r.auroc >= TASK_AUROC && level == want_level;
        good += ok as usize;
        slowest = slowest.max(r.secs);
        strictly += r.losses[..5].windows(2).all(|w| w[1] < w[0]) as usize;
        let scores: Vec<String> = r.scores.iter().map(|s| format!("{s:.3}")).collect();
        lines.push(format!(
            "      seed {seed}: test auroc {:.3}, influence [{}], argmax {level}, {:.0} s ({})",
            r.auroc,
            scores.join(", "),
            r.secs,
            r.summary
        ));
    }
    *decreasing = Some((strictly, TASK_SEEDS));
    let detail = format!(
        "{good}/{TASK_SEEDS} seeds with auroc >= {TASK_AUROC} and argmax level {want_level}; slowest seed {slowest:.0} s on {} thread(s)\n{}",
        rayon::current_num_threads(),
        lines.join("\n")
    );
    ensure(
        good >= TASK_SEEDS_NEEDED && time_limit.is_none_or(|t| slowest <= t),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn pairwise_auroc(scores: &[f64], labels: &[usize]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

fn direct_qwk(confusion: &[Vec<u64>]) -> f64 {
    let c = confusion.len();
    let n: f64 = confusion.iter().flatten().sum::<u64>() as f64;
    let rows: Vec<f64> = confusion.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let cols: Vec<f64> = (0..c)
        .map(|j| confusion.iter().map(|r| r[j]).sum::<u64>() as f64 / n)
        .collect();
    let (mut o, mut e) = (0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64 - j as f64) / (c as f64 - 1.0)).powi(2);
            o += w * confusion[i][j] as f64 / n;
            e += w * rows[i] * cols[j];
        }
    }
    1.0 - o / e
}

fn c10_metrics() -> Check {
    let mut r = fixtures::rng(10, 0);
    let mut worst_auc = 0.0f64;
    for case in 0..1000 {
        let n = r.random_range(2..60);
        let mut labels: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = if case % 3 == 0 { 4 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..levels) as f64 / levels as f64)
            .collect();
        worst_auc = worst_auc.max((auroc(&scores, &labels).unwrap() - pairwise_auroc(&scores, &labels)).abs());
    }
    let mut worst_qwk = 0.0f64;
    let mut cases = 0;
    while cases < 100 {
        let confusion: Vec<Vec<u64>> = (0..6).map(|_| (0..6).map(|_| r.random_range(0..8)).collect()).collect();
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for (i, row) in confusion.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    truth.push(i);
                    pred.push(j);
                }
            }
        }
        let want = direct_qwk(&confusion);
        if !want.is_finite() {
            continue;
        }
        worst_qwk = worst_qwk.max((qwk(&pred, &truth, 6).unwrap() - want).abs());
        cases += 1;
    }
    let perfect = qwk(&[0, 1, 2, 3, 4, 5], &[0, 1, 2, 3, 4, 5], 6).unwrap();
    let ties = auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
    let detail = format!(
        "auroc max diff {worst_auc:.1e} over 1000 cases, qwk max diff {worst_qwk:.1e} over 100, qwk(perfect) = {perfect}, auroc(ties) = {ties}"
    );
    ensure(
        worst_auc <= METRIC_TOL && worst_qwk <= METRIC_TOL && perfect == 1.0 && ties == 0.5,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn c11_determinism() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    common::pipeline(a.path(), "5");
    common::pipeline(b.path(), "5");
    let (x, y) = (common::tree(a.path()), common::tree(b.path()));
    ensure(x.keys().eq(y.keys()), || "different file sets".into())?;
    let differ: Vec<&String> = x.keys().filter(|k| x[*k] != y[*k]).collect();
    ensure(differ.is_empty(), || format!("differ: {differ:?}"))?;
    let count = |ext: &str| x.keys().filter(|k| k.ends_with(ext)).count();
    ensure(
        count(".msgp") == 1 && count(".pgm") > 0 && x.contains_key("influence.json"),
        || "missing outputs".into(),
    )?;
    Ok(format!(
        "synth, build-graph, train, cv, predict, influence, heatmap twice: {} files bit-identical ({} heatmaps)",
        x.len(),
        count(".pgm") + count(".csv")
    ))
}

fn c12_serialization() -> Check {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..50u64 {
        let g = fixtures::random_graph(seed, 150, 1 + seed as usize % 4, 5);
        let bytes = encode_graph(&g).unwrap();
        let back = decode_graph(&bytes, &g.wsi_id).unwrap();
        ensure(back == g && encode_graph(&back).unwrap() == bytes, || {
            format!("graph {seed}")
        })?;
    }
    let g = fixtures::random_graph(17, 120, 3, 4);
    let path = dir.path().join("g.msgg");
    save_graph(&g, &path).unwrap();
    ensure(load_graph(&path).unwrap().vertices == g.vertices, || {
        "graph file on disk".into()
    })?;

    let mut r = fixtures::rng(12, 0);
    let data: Vec<f32> = (0..7 * 9).map(|_| f32::from_bits(r.random())).collect();
    let f = FeatureFile::new(9, data).unwrap();
    let fb = f.encode();
    let fback = FeatureFile::decode(&fb).unwrap();
    ensure(fback.encode() == fb, || "feature file".into())?;

    let model = Model::init(small_config(4, 3), 3).unwrap();
    let mpath = dir.path().join("m.msgp");
    save_model(&model, &ModelMetadata::default(), &mpath).unwrap();
    let (loaded, _) = load_model(&mpath).unwrap();
    ensure(
        loaded.params.encode().unwrap() == model.params.encode().unwrap(),
        || "model file".into(),
    )?;
    let gm = fixtures::random_graph(4, 60, 2, 4);
    ensure(forward(&loaded, &gm) == forward(&model, &gm), || {
        "reloaded model predicts differently".into()
    })?;

    let magic = |b: &mut Vec<u8>| b[0] ^= 0x20;
    let mut gb = encode_graph(&g).unwrap();
    magic(&mut gb);
    let mut fbad = fb.clone();
    magic(&mut fbad);
    let mb = model.params.encode().unwrap();
    let mut mbad = mb.clone();
    magic(&mut mbad);
    ensure(matches!(decode_graph(&gb, "x"), Err(Error::BadMagic { .. })), || {
        "graph magic".into()
    })?;
    ensure(
        matches!(FeatureFile::decode(&fbad), Err(Error::BadMagic { .. })),
        || "feature magic".into(),
    )?;
    ensure(
        matches!(ParamStore::decode(&mbad, 3), Err(Error::BadMagic { .. })),
        || "model magic".into(),
    )?;

    let gb = encode_graph(&g).unwrap();
    let mut bad = gb.clone();
    let k = gb.len() - 5;
    bad[k] ^= 0x04;
    ensure(matches!(decode_graph(&bad, "x"), Err(Error::Checksum { .. })), || {
        "graph crc".into()
    })?;
    let mut bad = mb.clone();
    let k = mb.len() - 6;
    bad[k] ^= 0x01;
    ensure(
        matches!(ParamStore::decode(&bad, 3), Err(Error::Checksum { .. })),
        || "model crc".into(),
    )?;
    Ok("graph, feature and model files round-trip bit-exactly; bad magic and bad CRC rejected".into())
}

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));

    let mut structure_decreasing = None;
    let checks: Vec<(u32, &str, Box<dyn FnOnce() -> Check + '_>)> = vec![
        (1, "graph oracle", Box::new(c1_graph_oracle)),
        (2, "closed-form edge counts", Box::new(c2_closed_form)),
        (3, "gradient suite", Box::new(c3_gradients)),
        (4, "permutation invariance", Box::new(c4_permutation)),
        (5, "L-hop locality", Box::new(c5_locality)),
        (7, "influence convention", Box::new(c7_influence)),
        (
            8,
            "synthetic Structure task",
            Box::new(|| synthetic_task(Task::Structure, 1, Some(TASK_SECS), &mut structure_decreasing)),
        ),
        (
            9,
            "synthetic Cellular task",
            Box::new(|| synthetic_task(Task::Cellular, 4, None, &mut None)),
        ),
        (10, "metric oracles", Box::new(c10_metrics)),
        (11, "determinism", Box::new(c11_determinism)),
        (12, "serialization round trips", Box::new(c12_serialization)),
        // last, so that it covers every forward pass above
        (6, "attention normalization", Box::new(c6_attention)),
    ];
    let mut results = Vec::new();
    for (id, name, f) in checks {
        if !wanted(id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        results.push((id, name, outcome));
    }
    results.sort_by_key(|r| r.0);

    println!();
    let mut failed = 0;
    for (id, name, outcome) in &results {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {id:>2} {name}: {detail}");
    }
    if let Some((n, of)) = structure_decreasing {
        // train_final example: loss strictly decreasing over epochs 1-5 in >= 90% of seeds
        let tag = if n * 10 >= of as usize * 9 { "PASS" } else { "FAIL" };
        if tag == "FAIL" {
            failed += 1;
        }
        println!(
            "{tag} 8a Structure training loss strictly decreasing over epochs 1-5: {n}/{of} seeds (>= 90% needed)"
        );
    }
    println!();
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!(
        "all {} acceptance checks passed",
        results.len() + structure_decreasing.is_some() as usize
    );
}
