//! Global semantic aggregation: serialize keypoints along a space-filling
//! curve, prepend a category token, run the block stack, strip the token and
//! restore the original keypoint order.

use super::mamba::{block_param_specs, build_block, BlockConfig};
use super::AggregationError;
use crate::geometry::linalg::Vec3;
use crate::nn::{self, ParamSpec};
use crate::serialization::{self, SerializationMethod};
use crate::tensor::{Bindings, GraphBuilder, NodeId, Tensor};

pub const CATEGORIES: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct MgsaConfig {
    pub feat_dim: usize,
    pub keypoints: usize,
    pub n_blocks: usize,
    pub block: BlockConfig,
    pub serialization: SerializationMethod,
    pub bits: u8,
}

impl MgsaConfig {
    pub fn new(feat_dim: usize, keypoints: usize, n_blocks: usize) -> Self {
        MgsaConfig {
            feat_dim,
            keypoints,
            n_blocks,
            block: BlockConfig::twin(feat_dim),
            serialization: SerializationMethod::Hilbert,
            bits: 10,
        }
    }
}

pub fn inject_param_specs(feat_dim: usize) -> Vec<ParamSpec> {
    nn::mlp2_specs("mgsa.cat_embed", CATEGORIES, feat_dim, feat_dim)
}

pub fn mgsa_param_specs(cfg: &MgsaConfig) -> Vec<ParamSpec> {
    let mut specs = inject_param_specs(cfg.feat_dim);
    for i in 0..cfg.n_blocks {
        let mut block = cfg.block;
        block.arrangement_seed = cfg.block.arrangement_seed ^ i as u64;
        specs.extend(block_param_specs(&format!("mgsa.block{i}"), &block));
    }
    specs
}

/// Prepend the embedded category token: row 0 is the semantic anchor, rows
/// 1..=N_k are the sequence unchanged.
pub fn build_semantic_inject(
    b: &mut GraphBuilder,
    seq: NodeId,
    category: usize,
) -> Result<NodeId, AggregationError> {
    if category >= CATEGORIES {
        return Err(AggregationError::BadCategory(category));
    }
    let mut onehot = vec![0.0; CATEGORIES];
    onehot[category] = 1.0;
    let hot = b.constant(Tensor::from_vec(&[1, CATEGORIES], onehot));
    let token = nn::mlp2(b, hot, "mgsa.cat_embed");
    Ok(b.concat(&[token, seq], 0))
}

/// Full aggregation over keypoint features, with the serialization
/// permutation supplied by the caller (it depends on keypoint coordinates,
/// which are data, not graph values).
pub fn build_mgsa(
    b: &mut GraphBuilder,
    kpt_features: NodeId,
    order: &[usize],
    category: usize,
    cfg: &MgsaConfig,
) -> Result<NodeId, AggregationError> {
    let n_k = cfg.keypoints;
    debug_assert_eq!(order.len(), n_k);
    let serialized = b.gather(kpt_features, order.to_vec());
    let mut seq = build_semantic_inject(b, serialized, category)?;
    for i in 0..cfg.n_blocks {
        let mut block = cfg.block;
        block.arrangement_seed = cfg.block.arrangement_seed ^ i as u64;
        seq = build_block(b, seq, &format!("mgsa.block{i}"), n_k + 1, &block);
    }
    let stripped = b.slice(seq, 0, 1, n_k);
    let inverse = serialization::invert_permutation(order);
    Ok(b.gather(stripped, inverse))
}

/// Value-level aggregation: serializes by the configured curve and runs the
/// block stack.
pub fn mgsa(
    kpt_features: &Tensor,
    kpt_coords: &[Vec3],
    category: usize,
    params: &Bindings,
    cfg: &MgsaConfig,
) -> Result<Tensor, AggregationError> {
    let order = serialization::serialize_keypoints(kpt_coords, cfg.serialization, cfg.bits)?;
    let mut b = GraphBuilder::new();
    let f = b.input("kpt_features");
    let out = build_mgsa(&mut b, f, &order, category, cfg)?;
    b.output("out", out);
    let graph = b.finish();
    let mut bind = params.clone();
    bind.insert("kpt_features".into(), kpt_features.clone());
    Ok(graph.evaluate(&bind)?.remove("out").unwrap())
}
