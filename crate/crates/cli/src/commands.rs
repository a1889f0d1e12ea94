use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use msgcn::features::{generate_synthetic, read_labels, FeatureDir};
use msgcn::interpret::{export_heatmap, Provenance};
use msgcn::train::{
    cross_validate, load_model, predict_one, save_model, stratified_split, train_final, write_log, CvReport,
    ModelMetadata, Prediction, RunConfig,
};
use msgcn::{
    build_graph, graph_stats, influence_scores, load_graph, parse_manifest, save_graph, sha256_hex, Dataset,
    EvalResult, GridSpec, LossKind, Model, MultiScaleGraph, SyntheticDatasetSpec, Task,
};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

/// `println!` that stops quietly when stdout is closed, e.g. piped into `head`.
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

use crate::{BuildArgs, Command, HeatmapArgs, InfluenceArgs, PredictArgs, StatsArgs, SynthArgs, TaskArg, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(msgcn::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<msgcn::Error> for CliError {
    fn from(e: msgcn::Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(msgcn::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::BuildGraph(a) => build(a),
        Command::Cv(a) => cv(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Influence(a) => influence(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Stats(a) => stats(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Data(msgcn::Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(msgcn::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn echo(config: &Value) {
    out!("{}", serde_json::to_string_pretty(config).expect("JSON value"));
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))
}

/// `.msgg` files of a directory in name order, or the single file given.
fn graph_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| io_err(path, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| io_err(path, e))?.path();
        if p.extension().is_some_and(|x| x == "msgg") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(msgcn::Error::InvalidArgument(format!(
            "no .msgg files in {}",
            path.display()
        ))));
    }
    Ok(files)
}

fn load_graphs(path: &Path) -> Result<(Vec<PathBuf>, Vec<MultiScaleGraph>)> {
    let files = graph_files(path)?;
    let graphs = files.iter().map(load_graph).collect::<msgcn::Result<Vec<_>>>()?;
    Ok((files, graphs))
}

/// SHA-256 over file names and contents, in the given order.
fn files_hash(files: &[PathBuf]) -> Result<String> {
    let mut parts = Vec::with_capacity(files.len() * 2);
    for f in files {
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        parts.push(format!("{name}\n").into_bytes());
        parts.push(std::fs::read(f).map_err(|e| io_err(f, e))?);
    }
    Ok(sha256_hex(parts.iter().map(Vec::as_slice)))
}

fn check_dims(model: &Model, graphs: &[MultiScaleGraph]) -> Result<()> {
    for g in graphs {
        if g.dim != model.config.input_dim {
            return Err(CliError::Data(msgcn::Error::FeatureDim {
                expected: model.config.input_dim,
                found: g.dim,
            }));
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticDatasetSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => SyntheticDatasetSpec::default(),
    };
    if let Some(t) = a.task {
        spec.task = match t {
            TaskArg::Structure => Task::Structure,
            TaskArg::Cellular => Task::Cellular,
        };
    }
    if let Some(n) = a.num_wsis {
        spec.num_wsis = n;
    }
    spec.seed = a.seed;
    spec.validate()?;
    echo(&json!({ "command": "synth", "spec": spec, "out": a.out }));
    let out = generate_synthetic(&spec, &a.out)?;
    out!(
        "{}",
        json!({ "manifest": out.manifest, "labels": out.labels, "feature_files": out.feature_files.len() })
    );
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let features_dir = match a.features_dir {
        Some(d) => d,
        None => a.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let pool = thread_pool(a.threads)?;
    echo(&json!({
        "command": "build-graph",
        "manifest": a.manifest,
        "features_dir": features_dir,
        "out": a.out,
        "threads": a.threads,
    }));
    let slides = parse_manifest(&a.manifest)?;
    for id in slides.keys() {
        if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
            return Err(CliError::Data(msgcn::Error::InvalidArgument(format!(
                "wsi_id {id:?} cannot be used as a file name"
            ))));
        }
    }
    let features = FeatureDir::new(&features_dir);
    let tiles: Vec<_> = slides.values().collect();
    let graphs: Vec<MultiScaleGraph> = pool.install(|| {
        tiles
            .par_iter()
            .map(|t| build_graph(t, &features))
            .collect::<msgcn::Result<_>>()
    })?;
    create_dir(&a.out)?;
    for g in &graphs {
        save_graph(g, a.out.join(format!("{}.msgg", g.wsi_id)))?;
        out!("{}", stats_line(g));
    }
    Ok(())
}

fn stats_line(g: &MultiScaleGraph) -> Value {
    let mut v = serde_json::to_value(graph_stats(g)).expect("stats serialize");
    v["wsi_id"] = json!(g.wsi_id);
    v
}

fn stats(a: StatsArgs) -> Result<()> {
    echo(&json!({ "command": "stats", "graphs": a.graphs }));
    let (_, graphs) = load_graphs(&a.graphs)?;
    for g in &graphs {
        out!("{}", stats_line(g));
    }
    Ok(())
}

struct Prepared {
    run: RunConfig,
    data: Dataset,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    dataset_hash: String,
}

fn prepare(a: &TrainArgs, command: &str) -> Result<Prepared> {
    let mut run: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.grid {
        run.grid = read_json::<GridSpec>(p)?;
    }
    if let Some(k) = a.folds {
        run.train.folds = k;
    }
    run.train.seed = a.seed;

    let (_, graphs) = load_graphs(&a.graphs)?;
    let labels = read_labels(&a.labels)?;
    let data = Dataset::from_labelled(graphs, &labels, None)?;
    run.train.loss = LossKind::for_classes(data.num_classes);
    run.train.validate()?;
    for w in run.grid.validate()? {
        eprintln!("warning: {w}");
    }

    let mut config = run.resolved_json();
    config["command"] = json!(command);
    echo(&config);

    let (train_idx, test_idx) = stratified_split(
        &data.labels,
        data.num_classes,
        1.0 - run.train.train_fraction,
        run.train.seed,
    )?;
    let dataset_hash = data.content_hash()?;
    Ok(Prepared {
        run,
        data,
        train_idx,
        test_idx,
        dataset_hash,
    })
}

fn ids(data: &Dataset, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| data.graphs[i].wsi_id.clone()).collect()
}

#[derive(Serialize)]
struct CvOutput<'a> {
    dataset_hash: &'a str,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
    report: &'a CvReport,
}

fn cv(a: TrainArgs) -> Result<()> {
    let p = prepare(&a, "cv")?;
    let report = cross_validate(&p.data, &p.train_idx, &p.run.grid, &p.run.train, &p.run.model)?;
    create_dir(&a.out)?;
    write_json(
        &a.out.join("cv.json"),
        &CvOutput {
            dataset_hash: &p.dataset_hash,
            train_ids: ids(&p.data, &p.train_idx),
            test_ids: ids(&p.data, &p.test_idx),
            report: &report,
        },
    )?;
    out!(
        "{}",
        json!({ "best": report.best, "mean_metric": report.best_mean_metric, "metric": report.metric_name })
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    dataset_hash: &'a str,
    point: msgcn::train::GridPoint,
    cv: Option<CvReport>,
    test: Option<EvalResult>,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
}

fn train(a: TrainArgs) -> Result<()> {
    let p = prepare(&a, "train")?;
    let points = p.run.grid.points();
    // a one-point grid needs no search: cross-validation would return it
    let report = if points.len() > 1 {
        Some(cross_validate(
            &p.data,
            &p.train_idx,
            &p.run.grid,
            &p.run.train,
            &p.run.model,
        )?)
    } else {
        None
    };
    let point = report.as_ref().map_or(points[0], |r| r.best);
    let result = train_final(&p.data, &p.train_idx, &p.test_idx, &point, &p.run.train, &p.run.model)?;

    create_dir(&a.out)?;
    let meta = ModelMetadata {
        seed: p.run.train.seed,
        dataset_hash: p.dataset_hash.clone(),
        level_magnifications: p.data.level_magnifications(),
        train: Some(json!({ "config": p.run.resolved_json(), "point": point })),
    };
    save_model(&result.model, &meta, a.out.join("model.msgp"))?;
    write_log(a.out.join("train_log.csv"), &result.log)?;
    write_json(
        &a.out.join("summary.json"),
        &TrainSummary {
            dataset_hash: &p.dataset_hash,
            point,
            cv: report,
            test: result.test.clone(),
            train_ids: ids(&p.data, &p.train_idx),
            test_ids: ids(&p.data, &p.test_idx),
        },
    )?;
    out!("{}", json!({ "point": point, "test": result.test }));
    Ok(())
}

fn predictions(model: &Model, graphs: &[MultiScaleGraph], threads: usize) -> Result<Vec<Prediction>> {
    let pool = thread_pool(threads)?;
    Ok(pool.install(|| {
        graphs
            .par_iter()
            .map(|g| predict_one(model, g))
            .collect::<msgcn::Result<Vec<_>>>()
    })?)
}

fn predict(a: PredictArgs) -> Result<()> {
    echo(&json!({ "command": "predict", "model": a.model, "graphs": a.graphs, "out": a.out, "threads": a.threads }));
    thread_pool(a.threads)?;
    let (model, _) = load_model(&a.model)?;
    let (_, graphs) = load_graphs(&a.graphs)?;
    check_dims(&model, &graphs)?;
    let preds = predictions(&model, &graphs, a.threads)?;
    write_json(&a.out, &preds)?;
    Ok(())
}

fn influence(a: InfluenceArgs) -> Result<()> {
    echo(&json!({ "command": "influence", "model": a.model, "graphs": a.graphs, "out": a.out }));
    let (model, _) = load_model(&a.model)?;
    let (files, graphs) = load_graphs(&a.graphs)?;
    check_dims(&model, &graphs)?;
    let preds = predictions(&model, &graphs, 1)?;
    let pairs: Vec<(&MultiScaleGraph, &[f64])> = graphs
        .iter()
        .zip(&preds)
        .map(|(g, p)| (g, p.attention.as_slice()))
        .collect();
    let dataset_id = std::fs::canonicalize(&a.graphs)
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let mut report = influence_scores(&pairs, &dataset_id)?;
    report.provenance = Some(Provenance {
        model_hash: files_hash(std::slice::from_ref(&a.model))?,
        dataset_hash: files_hash(&files)?,
    });
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&a.out, &report)?;
    out!("{}", json!({ "per_level_scores": report.per_level_scores }));
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    echo(
        &json!({ "command": "heatmap", "model": a.model, "graphs": a.graphs, "mag_level": a.mag_level, "out": a.out }),
    );
    let (model, _) = load_model(&a.model)?;
    let (_, graphs) = load_graphs(&a.graphs)?;
    check_dims(&model, &graphs)?;
    if let Some(m) = a.mag_level {
        if let Some(g) = graphs.iter().find(|g| m == 0 || m as usize > g.num_levels()) {
            return Err(CliError::Usage(format!(
                "--mag-level {m} outside 1..={} for {}",
                g.num_levels(),
                g.wsi_id
            )));
        }
    }
    let preds = predictions(&model, &graphs, 1)?;
    create_dir(&a.out)?;
    for (g, p) in graphs.iter().zip(&preds) {
        let levels: Vec<u32> = match a.mag_level {
            Some(m) => vec![m],
            None => (1..=g.num_levels() as u32).collect(),
        };
        for m in levels {
            let (csv, pgm) = export_heatmap(g, &p.attention, m, a.out.join(format!("{}_level{m}", g.wsi_id)))?;
            out!(
                "{}",
                json!({ "wsi_id": g.wsi_id, "mag_level": m, "csv": csv, "pgm": pgm })
            );
        }
    }
    Ok(())
}
