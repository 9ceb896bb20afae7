//! End-to-end assembly: feature extraction and fusion, keypoint detection,
//! local and global aggregation, prediction heads, and the micro-scale
//! training loop.
//!
//! Neighborhoods and the serialization permutation depend on predicted
//! keypoint coordinates, so a forward pass first runs a probe graph up to
//! the detector, derives that routing, then builds the full differentiable
//! graph with the routing fixed. Both passes are deterministic, so the
//! probe's coordinates match the full graph's bit for bit.

mod config;
mod train;

#[cfg(test)]
mod tests;

pub use config::{BackwardBranchConfig, BlockKindConfig, ConfigError, ModelConfig, TrainConfig};
pub use train::{synth_dataset, train_micro, TrainInstance, TrainResult};

use crate::aggregation::{
    build_lgfa, build_mgsa, lgfa_param_specs, mgsa_param_specs, AggregationError, BlockConfig,
    LgfaConfig, MambaConfig, MgsaConfig,
};
use crate::geometry::{self, GeometryError, PointCloud};
use crate::heads::{
    build_heads, heads_param_specs, pose_from_head_outputs, HeadNodes, HeadsConfig, Prediction,
};
use crate::keypoints::{build_detect, DetectNodes, DetectorConfig, KeypointSet};
use crate::nn::{self, ParamSpec};
use crate::serialization::{serialize_keypoints, SerializationError};
use crate::tensor::{Bindings, GraphBuilder, Graph, NodeId, Tensor, TensorError};
use crate::topology::{self, TopologyError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Serialization(#[from] SerializationError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("appearance rows ({rows}) do not match the point count ({points})")]
    AppearanceMismatch { rows: usize, points: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("dataset is empty")]
    EmptyDataset,
}

pub(crate) fn detector_config(cfg: &ModelConfig) -> DetectorConfig {
    DetectorConfig {
        keypoints: cfg.n_k,
        feat_dim: cfg.d,
        temperature: cfg.temperature,
    }
}

pub(crate) fn lgfa_config(cfg: &ModelConfig) -> LgfaConfig {
    LgfaConfig { feat_dim: cfg.d, neighbors: cfg.k, leaky_slope: cfg.leaky_slope }
}

pub(crate) fn mgsa_config(cfg: &ModelConfig) -> MgsaConfig {
    MgsaConfig {
        feat_dim: cfg.d,
        keypoints: cfg.n_k,
        n_blocks: cfg.n_blocks,
        block: BlockConfig {
            mamba: MambaConfig {
                feat_dim: cfg.d,
                inner_dim: cfg.inner_dim(),
                state_dim: cfg.d_state,
                conv_width: 4,
            },
            kind: cfg.block_kind.into(),
            backward: cfg.backward_branch.into(),
            arrangement_seed: 0x52_41,
        },
        serialization: cfg.serialization,
        bits: cfg.bits,
    }
}

pub(crate) fn heads_config(cfg: &ModelConfig) -> HeadsConfig {
    HeadsConfig {
        feat_dim: cfg.d,
        offsets_per_keypoint: cfg.offsets_per_keypoint,
        diversity_threshold: cfg.diversity_threshold,
    }
}

/// Every learnable tensor in the model.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    specs.extend(nn::mlp2_specs("penc", 3, cfg.d_p, cfg.d_p));
    specs.extend(nn::linear_specs("fuse", cfg.d_p + cfg.d_t, cfg.d_p));
    specs.extend(crate::keypoints::param_specs(&detector_config(cfg)));
    specs.extend(lgfa_param_specs(&lgfa_config(cfg)));
    specs.extend(mgsa_param_specs(&mgsa_config(cfg)));
    specs.extend(heads_param_specs(&heads_config(cfg)));
    specs
}

pub fn init_params(cfg: &ModelConfig, seed: u64) -> Bindings {
    nn::init_params(&param_specs(cfg), seed)
}

/// Data-dependent gather indices, fixed per forward pass.
#[derive(Debug, Clone)]
pub struct Routing {
    /// Per cloud point: itself plus its K nearest neighbors (encoder pool).
    pub cloud_pool: Vec<Vec<usize>>,
    /// Per keypoint: K nearest keypoints (local aggregation).
    pub kpt_knn: Vec<Vec<usize>>,
    /// Space-filling-curve traversal order of the keypoints.
    pub serial_order: Vec<usize>,
}

/// Per-point features: a point MLP with one neighborhood max-pool round,
/// fused with the broadcast topological descriptor, concatenated with the
/// appearance rows (zeros when absent): `F_o = [F_I ‖ F_f]`.
pub(crate) fn build_extract(
    b: &mut GraphBuilder,
    cloud: NodeId,
    appearance: NodeId,
    topo: NodeId,
    cloud_pool: &[Vec<usize>],
    cfg: &ModelConfig,
) -> NodeId {
    let n = cloud_pool.len();
    let per_point = nn::mlp2(b, cloud, "penc");
    let per_point = b.relu(per_point);
    let flat: Vec<usize> = cloud_pool.iter().flat_map(|row| row.iter().copied()).collect();
    let group = cloud_pool[0].len();
    let gathered = b.gather(per_point, flat);
    let grouped = b.reshape(gathered, &[n, group, cfg.d_p]);
    let pooled = b.reduce_max(grouped, 1);

    // Broadcast the global descriptor to every point and fuse.
    let tiled = b.gather(topo, vec![0; n]);
    let cat = b.concat(&[pooled, tiled], 1);
    let fused = nn::linear(b, cat, "fuse");
    let fused = b.relu(fused);

    b.concat(&[appearance, fused], 1)
}

pub(crate) struct ForwardNodes {
    #[allow(dead_code)]
    pub f_o: NodeId,
    pub detect: DetectNodes,
    #[allow(dead_code)]
    pub refined: NodeId,
    pub aggregated: NodeId,
    pub heads: HeadNodes,
}

/// The full differentiable pass with fixed routing. Declares the instance
/// inputs `cloud`, `appearance` and `topo`.
pub(crate) fn build_forward(
    b: &mut GraphBuilder,
    routing: &Routing,
    category: usize,
    cfg: &ModelConfig,
) -> Result<ForwardNodes, PipelineError> {
    let cloud = b.input("cloud");
    let appearance = b.input("appearance");
    let topo = b.input("topo");

    let f_o = build_extract(b, cloud, appearance, topo, &routing.cloud_pool, cfg);
    let detect = build_detect(b, f_o, cloud, routing.cloud_pool.len(), &detector_config(cfg));
    let refined = build_lgfa(b, detect.features, detect.coords, &routing.kpt_knn, &lgfa_config(cfg));
    let aggregated = build_mgsa(b, refined, &routing.serial_order, category, &mgsa_config(cfg))?;
    let heads = build_heads(b, aggregated, detect.coords, cfg.n_k, &heads_config(cfg));
    Ok(ForwardNodes { f_o, detect, refined, aggregated, heads })
}

/// The topological descriptor as a 1×d_t row (zeros under the ablation
/// switch).
pub fn topo_row(cloud: &PointCloud, cfg: &ModelConfig) -> Result<Tensor, PipelineError> {
    if !cfg.use_topology {
        return Ok(Tensor::zeros(&[1, cfg.d_t]));
    }
    let feature = topology::topo_feature(cloud.points())?;
    Ok(Tensor::from_vec(&[1, cfg.d_t], feature.to_vector()))
}

/// Bind one instance's data tensors.
pub fn instance_bindings(
    cloud: &PointCloud,
    appearance: Option<&Tensor>,
    topo: &Tensor,
    cfg: &ModelConfig,
    bindings: &mut Bindings,
) -> Result<(), PipelineError> {
    if let Some(app) = appearance {
        if app.shape()[0] != cloud.len() {
            return Err(PipelineError::AppearanceMismatch {
                rows: app.shape()[0],
                points: cloud.len(),
            });
        }
        if app.shape()[1] != cfg.d_r {
            return Err(PipelineError::AppearanceMismatch {
                rows: app.shape()[1],
                points: cfg.d_r,
            });
        }
    }
    bindings.insert("cloud".into(), cloud.to_tensor());
    bindings.insert(
        "appearance".into(),
        appearance.cloned().unwrap_or_else(|| Tensor::zeros(&[cloud.len(), cfg.d_r])),
    );
    bindings.insert("topo".into(), topo.clone());
    Ok(())
}

/// Self plus K nearest, for the encoder's pooling round.
pub(crate) fn pool_indices(
    points: &[crate::geometry::linalg::Vec3],
    k: usize,
) -> Result<Vec<Vec<usize>>, GeometryError> {
    let knn = geometry::knn(points, k)?;
    Ok(knn
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let mut group = Vec::with_capacity(row.len() + 1);
            group.push(i);
            group.append(&mut row);
            group
        })
        .collect())
}

/// Evaluate the probe graph (extraction + detection) and derive the routing
/// for the full pass.
pub fn compute_routing(
    cloud: &PointCloud,
    appearance: Option<&Tensor>,
    topo: &Tensor,
    params: &Bindings,
    cfg: &ModelConfig,
) -> Result<Routing, PipelineError> {
    let cloud_pool = pool_indices(cloud.points(), cfg.k)?;
    let mut b = GraphBuilder::new();
    let cloud_node = b.input("cloud");
    let appearance_node = b.input("appearance");
    let topo_node = b.input("topo");
    let f_o = build_extract(&mut b, cloud_node, appearance_node, topo_node, &cloud_pool, cfg);
    let detect = build_detect(&mut b, f_o, cloud_node, cloud.len(), &detector_config(cfg));
    b.output("coords", detect.coords);
    let graph = b.finish();

    let mut bindings = params.clone();
    instance_bindings(cloud, appearance, topo, cfg, &mut bindings)?;
    let coords = graph.evaluate(&bindings)?["coords"].rows3();

    let kpt_knn = geometry::knn(&coords, cfg.k)?;
    let serial_order = serialize_keypoints(&coords, cfg.serialization, cfg.bits)?;
    Ok(Routing { cloud_pool, kpt_knn, serial_order })
}

fn finish_forward_graph(
    routing: &Routing,
    category: usize,
    cfg: &ModelConfig,
) -> Result<Graph, PipelineError> {
    let mut b = GraphBuilder::new();
    let nodes = build_forward(&mut b, routing, category, cfg)?;
    b.output("kpt_coords", nodes.detect.coords);
    b.output("kpt_features", nodes.detect.features);
    b.output("heatmap", nodes.detect.heatmap);
    b.output("aggregated", nodes.aggregated);
    b.output("r6", nodes.heads.r6);
    b.output("t", nodes.heads.translation);
    b.output("s", nodes.heads.size);
    b.output("nocs", nodes.heads.nocs);
    b.output("offsets", nodes.heads.offsets);
    b.output("recon", nodes.heads.recon_cloud);
    Ok(b.finish())
}

/// Deterministic end-to-end inference for one instance.
pub fn forward(
    cloud: &PointCloud,
    appearance: Option<&Tensor>,
    category: usize,
    params: &Bindings,
    cfg: &ModelConfig,
) -> Result<(Prediction, KeypointSet), PipelineError> {
    cfg.validate()?;
    let topo = topo_row(cloud, cfg)?;
    let routing = compute_routing(cloud, appearance, &topo, params, cfg)?;
    let graph = finish_forward_graph(&routing, category, cfg)?;

    let mut bindings = params.clone();
    instance_bindings(cloud, appearance, &topo, cfg, &mut bindings)?;
    let mut out = graph.evaluate(&bindings)?;

    let (pose, rotation_fallback) =
        pose_from_head_outputs(out["r6"].data(), out["t"].data(), out["s"].data());
    let prediction = Prediction {
        pose,
        nocs: out.remove("nocs").unwrap(),
        recon_offsets: out.remove("offsets").unwrap(),
        recon_cloud: out.remove("recon").unwrap(),
        rotation_fallback,
    };
    let keypoints = KeypointSet {
        coords: out["kpt_coords"].rows3(),
        features: out.remove("kpt_features").unwrap(),
        heatmap: out.remove("heatmap").unwrap(),
    };
    Ok((prediction, keypoints))
}

/// Fused per-point features `F_o` for one instance (the extraction stage
/// alone).
pub fn extract_features(
    cloud: &PointCloud,
    appearance: Option<&Tensor>,
    params: &Bindings,
    cfg: &ModelConfig,
) -> Result<Tensor, PipelineError> {
    cfg.validate()?;
    let topo = topo_row(cloud, cfg)?;
    let cloud_pool = pool_indices(cloud.points(), cfg.k)?;
    let mut b = GraphBuilder::new();
    let cloud_node = b.input("cloud");
    let appearance_node = b.input("appearance");
    let topo_node = b.input("topo");
    let f_o = build_extract(&mut b, cloud_node, appearance_node, topo_node, &cloud_pool, cfg);
    b.output("f_o", f_o);
    let graph = b.finish();
    let mut bindings = params.clone();
    instance_bindings(cloud, appearance, &topo, cfg, &mut bindings)?;
    Ok(graph.evaluate(&bindings)?.remove("f_o").unwrap())
}
