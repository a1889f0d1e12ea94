//! Losses, Adam, stratified splits, k-fold grid search, final training and prediction.
//!
//! A batch contributes the mean of its per-graph losses. Per-graph gradients
//! are reduced in ascending graph-index order and the optimizer step is
//! applied once per batch; after each step every parameter is rounded to the
//! nearest `f32` so that the trained model and its saved file agree bit for bit.

mod config;
mod optim;
mod persist;
mod split;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{GridPoint, GridSpec, LossKind, RunConfig, TrainConfig, WEIGHT_DECAY_FRACTION};
pub use optim::{Adam, BETA1, BETA2, EPSILON};
pub use persist::{load_model, save_model, ModelMetadata};
pub use split::{stratified_folds, stratified_split};

use crate::error::{Error, Result};
use crate::graph::MultiScaleGraph;
use crate::metrics::{evaluate, EvalResult};
use crate::model::{Mode, Model, ModelConfig};
use crate::numeric::rng::{splitmix64, stream, Purpose};
use crate::numeric::Tensor;
use crate::util::write_file;

/// Softmax cross-entropy of `label` under `logits`, via log-sum-exp.
pub fn loss(logits: &[f64], label: usize, kind: LossKind) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    if kind == LossKind::BinaryCrossEntropy && logits.len() != 2 {
        return Err(Error::invalid("binary cross-entropy expects two logits"));
    }
    Ok(crate::numeric::cross_entropy(logits, label))
}

/// Gradient of [`loss`] with respect to the logits: `softmax(logits) - onehot(label)`.
pub fn loss_gradient(logits: &[f64], label: usize) -> Vec<f64> {
    let mut p = logits.to_vec();
    crate::numeric::softmax_in_place(&mut p);
    p[label] -= 1.0;
    p
}

/// Graphs with one label each.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<MultiScaleGraph>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(graphs: Vec<MultiScaleGraph>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} graphs but {} labels",
                graphs.len(),
                labels.len()
            )));
        }
        if graphs.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {l} out of range 0..{num_classes}")));
        }
        let dim = graphs[0].dim;
        if let Some(g) = graphs.iter().find(|g| g.dim != dim) {
            return Err(Error::FeatureDim {
                expected: dim,
                found: g.dim,
            });
        }
        Ok(Self {
            graphs,
            labels,
            num_classes,
        })
    }

    /// Pairs graphs with labels by `wsi_id`; every graph must have a label.
    pub fn from_labelled(
        graphs: Vec<MultiScaleGraph>,
        labels: &std::collections::BTreeMap<String, usize>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        let mut ys = Vec::with_capacity(graphs.len());
        for g in &graphs {
            let y = labels
                .get(&g.wsi_id)
                .ok_or_else(|| Error::invalid(format!("no label for {}", g.wsi_id)))?;
            ys.push(*y);
        }
        let c = num_classes.unwrap_or_else(|| ys.iter().max().map_or(2, |m| (m + 1).max(2)));
        Self::new(graphs, ys, c)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.graphs[0].dim
    }

    pub fn level_magnifications(&self) -> Vec<f32> {
        self.graphs[0].level_magnifications.clone()
    }

    /// SHA-256 over the wsi ids, labels and encoded graphs, in dataset order.
    pub fn content_hash(&self) -> Result<String> {
        let mut parts = Vec::with_capacity(self.len() * 2);
        for (g, y) in self.graphs.iter().zip(&self.labels) {
            parts.push(format!("{}:{y}\n", g.wsi_id).into_bytes());
            parts.push(crate::graph::encode_graph(g)?);
        }
        Ok(crate::util::sha256_hex(parts.iter().map(Vec::as_slice)))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// Missing when the metric is undefined (e.g. a single class).
    pub metric: Option<f64>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,split,loss,metric\n");
    for r in rows {
        let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.split, r.loss, metric);
    }
    s
}

pub fn write_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    write_file(path.as_ref(), log_csv(rows).as_bytes())
}

fn dropout_seed(seed: u64, epoch: usize, graph: usize) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(epoch as u64)) ^ graph as u64)
}

/// Mean loss and mean gradient of a batch, reduced in ascending graph order.
pub fn batch_gradient(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    mode_for: impl Fn(usize) -> Mode,
) -> Result<(f64, Vec<Tensor>, Vec<Vec<f64>>)> {
    let mut order = batch.to_vec();
    order.sort_unstable();
    let mut total: Vec<Tensor> = model.params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut loss_sum = 0.0;
    let mut probs = Vec::with_capacity(order.len());
    for &i in &order {
        let gg = model.loss_and_gradients(&data.graphs[i], data.labels[i], mode_for(i))?;
        loss_sum += gg.loss;
        probs.push(gg.result.probabilities());
        for (t, g) in total.iter_mut().zip(&gg.grads) {
            t.add_assign(g);
        }
    }
    let scale = 1.0 / order.len() as f64;
    for t in &mut total {
        t.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    Ok((loss_sum * scale, total, probs))
}

/// Trains `model` in place on `train_idx` for `cfg.epochs` epochs.
/// Returns one `train` log row per epoch.
pub fn fit(model: &mut Model, data: &Dataset, train_idx: &[usize], cfg: &TrainConfig) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut opt = Adam::new(&model.params, cfg.learning_rate, cfg.weight_decay());
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, &[epoch as u64]));
        let mut loss_sum = 0.0;
        let mut scores = Vec::with_capacity(order.len());
        let mut truth = Vec::with_capacity(order.len());
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads, probs) = batch_gradient(model, data, batch, |i| Mode::Train {
                seed: dropout_seed(cfg.seed, epoch, i),
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            let mut sorted = batch.to_vec();
            sorted.sort_unstable();
            truth.extend(sorted.iter().map(|&i| data.labels[i]));
            scores.extend(probs);
            opt.step(&mut model.params, &grads)?;
            model.params.round_to_f32();
        }
        rows.push(LogRow {
            epoch,
            split: "train".into(),
            loss: loss_sum / order.len() as f64,
            metric: evaluate(&scores, &truth, data.num_classes).ok().map(|e| e.value),
        });
    }
    Ok(rows)
}

/// Eval-mode mean loss and metric over `idx`.
pub fn evaluate_on(model: &Model, data: &Dataset, idx: &[usize]) -> Result<(f64, EvalResult)> {
    if idx.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut loss_sum = 0.0;
    let mut probs = Vec::with_capacity(idx.len());
    let mut truth = Vec::with_capacity(idx.len());
    for &i in idx {
        let r = model.forward(&data.graphs[i], Mode::Eval)?;
        loss_sum += crate::numeric::cross_entropy(&r.logits, data.labels[i]);
        probs.push(r.probabilities());
        truth.push(data.labels[i]);
    }
    Ok((loss_sum / idx.len() as f64, evaluate(&probs, &truth, data.num_classes)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub point: GridPoint,
    pub fold_metrics: Vec<f64>,
    pub mean_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric_name: String,
    pub folds: Vec<Vec<usize>>,
    pub results: Vec<GridResult>,
    pub best: GridPoint,
    pub best_mean_metric: f64,
}

/// Picks the first strictly best mean; `results` must be in grid order.
pub fn select_best(results: &[GridResult]) -> Option<&GridResult> {
    let mut best: Option<&GridResult> = None;
    for r in results {
        if best.is_none_or(|b| r.mean_metric > b.mean_metric) {
            best = Some(r);
        }
    }
    best
}

fn resolve_model(template: &ModelConfig, data: &Dataset) -> Result<ModelConfig> {
    let mut m = template.clone();
    if m.input_dim == 0 {
        m.input_dim = data.input_dim();
    } else if m.input_dim != data.input_dim() {
        return Err(Error::FeatureDim {
            expected: m.input_dim,
            found: data.input_dim(),
        });
    }
    m.num_classes = data.num_classes;
    m.validate()?;
    Ok(m)
}

/// Stratified k-fold grid search over `pool` (indices into `data`).
///
/// For every grid point (ascending order) a fresh model is trained on k-1
/// folds and scored on the held-out fold; the mean metric decides, earlier
/// points winning ties. The (point, fold) fits run on the rayon pool; the
/// result does not depend on the number of threads.
pub fn cross_validate(
    data: &Dataset,
    pool: &[usize],
    grid: &GridSpec,
    cfg: &TrainConfig,
    template: &ModelConfig,
) -> Result<CvReport> {
    cfg.validate()?;
    grid.validate()?;
    let folds = stratified_folds(pool, &data.labels, data.num_classes, cfg.folds, cfg.seed)?;
    let points = grid.points();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..folds.len()).map(move |f| (p, f)))
        .collect();
    let evals = jobs
        .par_iter()
        .map(|&(p, f)| {
            let point = &points[p];
            let mc = resolve_model(&point.apply(template), data)?;
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != f)
                .flat_map(|(_, fold)| fold.iter().copied())
                .collect();
            let mut model = Model::init(mc, cfg.seed)?;
            fit(&mut model, data, &train, &cfg.with_point(point))?;
            evaluate_on(&model, data, &folds[f]).map(|(_, eval)| eval)
        })
        .collect::<Result<Vec<_>>>()?;
    let metric_name = evals[0].metric_name.clone();
    let results: Vec<GridResult> = points
        .into_iter()
        .zip(evals.chunks(folds.len()))
        .map(|(point, chunk)| {
            let fold_metrics: Vec<f64> = chunk.iter().map(|e| e.value).collect();
            let mean_metric = fold_metrics.iter().sum::<f64>() / fold_metrics.len() as f64;
            GridResult {
                point,
                fold_metrics,
                mean_metric,
            }
        })
        .collect();
    let best = select_best(&results).expect("grid has at least one point").clone();
    Ok(CvReport {
        metric_name,
        folds,
        best: best.point,
        best_mean_metric: best.mean_metric,
        results,
    })
}

#[derive(Debug, Clone)]
pub struct FinalRun {
    pub model: Model,
    pub log: Vec<LogRow>,
    pub test: Option<EvalResult>,
}

/// Trains one model with `point` on `train_idx`, then scores `test_idx` once.
/// The test row is logged with the last epoch number.
pub fn train_final(
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    point: &GridPoint,
    cfg: &TrainConfig,
    template: &ModelConfig,
) -> Result<FinalRun> {
    let mc = resolve_model(&point.apply(template), data)?;
    let tc = cfg.with_point(point);
    let mut model = Model::init(mc, cfg.seed)?;
    let mut log = fit(&mut model, data, train_idx, &tc)?;
    let test = if test_idx.is_empty() {
        None
    } else {
        let (loss, eval) = evaluate_on(&model, data, test_idx)?;
        log.push(LogRow {
            epoch: tc.epochs,
            split: "test".into(),
            loss,
            metric: Some(eval.value),
        });
        Some(eval)
    };
    Ok(FinalRun { model, log, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub wsi_id: String,
    pub probabilities: Vec<f64>,
    pub attention: Vec<f64>,
}

/// Eval-mode forward of every graph, in input order.
pub fn predict(model: &Model, graphs: &[MultiScaleGraph]) -> Result<Vec<Prediction>> {
    graphs.iter().map(|g| predict_one(model, g)).collect()
}

pub fn predict_one(model: &Model, g: &MultiScaleGraph) -> Result<Prediction> {
    let r = model.forward(g, Mode::Eval)?;
    Ok(Prediction {
        wsi_id: g.wsi_id.clone(),
        probabilities: r.probabilities(),
        attention: r.attention,
    })
}
