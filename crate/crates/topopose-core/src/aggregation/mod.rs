//! Keypoint feature aggregation: local graph attention over K-nearest
//! neighborhoods and global sequence modeling over serialized keypoints.

mod mamba;
mod mgsa;

pub use mamba::{
    block_param_specs, build_block, build_mamba, mamba_param_specs, BackwardBranch, BlockConfig,
    BlockKind, MambaConfig,
};
pub use mgsa::{
    build_mgsa, build_semantic_inject, inject_param_specs, mgsa, mgsa_param_specs, MgsaConfig,
};

use crate::geometry::linalg::Vec3;
use crate::geometry::{self, GeometryError};
use crate::nn::{self, ParamSpec};
use crate::tensor::{Bindings, GraphBuilder, NodeId, Real, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("category {0} out of range 0..=5")]
    BadCategory(usize),
    #[error(transparent)]
    Serialization(#[from] crate::serialization::SerializationError),
}

#[derive(Debug, Clone, Copy)]
pub struct LgfaConfig {
    pub feat_dim: usize,
    pub neighbors: usize,
    pub leaky_slope: Real,
}

impl LgfaConfig {
    pub fn new(feat_dim: usize, neighbors: usize) -> Self {
        LgfaConfig { feat_dim, neighbors, leaky_slope: 0.2 }
    }
}

pub fn lgfa_param_specs(cfg: &LgfaConfig) -> Vec<ParamSpec> {
    let d = cfg.feat_dim;
    let mut specs = Vec::new();
    for name in ["q", "k", "v"] {
        specs.extend(nn::linear_specs(&format!("lgfa.{name}"), d, d));
    }
    specs.extend(nn::mlp2_specs("lgfa.geo", 3, d, d));
    specs.push(nn::spec("lgfa.attn_vec", &[3 * d, 1], nn::Init::Xavier));
    specs
}

/// Graph attention over each keypoint's neighborhood: displacement encodings
/// join the query/key concatenation for the attention scores and the value
/// aggregation, with a rectified residual back onto the input features.
pub fn build_lgfa(
    b: &mut GraphBuilder,
    features: NodeId,
    coords: NodeId,
    neighbor_idx: &[Vec<usize>],
    cfg: &LgfaConfig,
) -> NodeId {
    let n_k = neighbor_idx.len();
    let k = cfg.neighbors;
    let d = cfg.feat_dim;
    let flat: Vec<usize> = neighbor_idx.iter().flat_map(|row| row.iter().copied()).collect();
    let reps: Vec<usize> = (0..n_k).flat_map(|m| std::iter::repeat(m).take(k)).collect();
    debug_assert!(neighbor_idx.iter().all(|row| row.len() == k));

    let q = nn::linear(b, features, "lgfa.q");
    let key = nn::linear(b, features, "lgfa.k");
    let v = nn::linear(b, features, "lgfa.v");

    let q_rep = b.gather(q, reps.clone());
    let k_gat = b.gather(key, flat.clone());
    let v_gat = b.gather(v, flat.clone());

    let p_nbr = b.gather(coords, flat);
    let p_ctr = b.gather(coords, reps);
    let disp = b.sub(p_nbr, p_ctr);
    let geo = nn::mlp2(b, disp, "lgfa.geo");

    let cat = b.concat(&[q_rep, k_gat, geo], 1);
    let a = b.param("lgfa.attn_vec");
    let scores = b.matmul(cat, a);
    let scores = b.leaky_relu(scores, cfg.leaky_slope);
    let scores = b.reshape(scores, &[n_k, k]);
    let alpha = b.softmax(scores, 1);

    let val = b.add(v_gat, geo);
    let val = b.reshape(val, &[n_k, k, d]);
    let alpha3 = b.reshape(alpha, &[n_k, k, 1]);
    let weighted = b.mul(val, alpha3);
    let local = b.reduce_sum(weighted, 1);

    let fused = b.add(local, features);
    b.relu(fused)
}

/// Value-level aggregation: neighborhoods from the keypoint coordinates.
pub fn lgfa(
    features: &Tensor,
    coords: &[Vec3],
    params: &Bindings,
    cfg: &LgfaConfig,
) -> Result<Tensor, AggregationError> {
    let neighbor_idx = geometry::knn(coords, cfg.neighbors)?;
    let mut b = GraphBuilder::new();
    let f = b.input("features");
    let c = b.input("coords");
    let out = build_lgfa(&mut b, f, c, &neighbor_idx, cfg);
    b.output("out", out);
    let graph = b.finish();
    let mut bind = params.clone();
    bind.insert("features".into(), features.clone());
    bind.insert("coords".into(), Tensor::from_points(coords));
    Ok(graph.evaluate(&bind)?.remove("out").unwrap())
}
