//! Multi-scale graph convolutional networks for whole-slide images.
//!
//! Tiles from several magnification levels of one slide become the vertices
//! of a single graph: level-1 tiles are joined to their 4-neighbours and
//! every tile is joined to the tiles that cover the same tissue one level up.
//! A stack of GEN message-passing layers with residual and dense connections
//! runs over that graph, gated attention pooling reduces it to one slide
//! embedding, and the attention weights are split back per level to measure
//! how much each magnification contributes to the prediction.
//!
//! Module map:
//!
//! - [`graph`]: tile manifests, graph construction, `.msgg` files.
//! - [`features`]: `.msgf` feature files and the synthetic dataset generator.
//! - [`numeric`]: dense tensors, a reverse-mode tape, parameters, RNG streams.
//! - [`model`]: the network itself.
//! - [`train`]: losses, Adam, stratified splits, cross-validation, prediction.
//! - [`metrics`]: AUROC and quadratic weighted kappa.
//! - [`interpret`]: per-level attention split, influence scores, heatmaps.

pub mod error;
pub mod features;
pub mod graph;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod train;

mod util;

pub use util::sha256_hex;

pub use error::{Error, Result};
pub use features::{FeatureDir, FeatureFile, FeatureProvider, MemoryFeatures, SyntheticDatasetSpec, Task};
pub use graph::{
    build_graph, graph_stats, load_graph, parse_manifest, save_graph, EdgeKind, GraphStats, MultiScaleGraph,
    TileRecord, Vertex,
};
pub use interpret::{influence_scores, split_attention, InfluenceReport};
pub use metrics::{auroc, qwk, EvalResult};
pub use model::{count_params, ForwardResult, Mode, Model, ModelConfig};
pub use numeric::{ParamStore, Tensor};
pub use train::{Dataset, GridSpec, LossKind, TrainConfig};
