//! Instance-adaptive keypoint detection: learnable queries updated by one
//! cross-attention block, a temperature softmax over cosine similarities
//! producing a soft assignment heatmap, and keypoints as coordinate
//! expectations — plus the surface and diversity losses that keep them on
//! the object and spread apart.

use crate::geometry::linalg::Vec3;
use crate::geometry::PointCloud;
use crate::nn::{self, ParamSpec};
use crate::tensor::{Bindings, GraphBuilder, NodeId, Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    /// Number of keypoint queries (N_k).
    pub keypoints: usize,
    /// Feature width of the fused point features (d).
    pub feat_dim: usize,
    /// Softmax temperature for the assignment heatmap.
    pub temperature: Real,
}

impl DetectorConfig {
    pub fn new(keypoints: usize, feat_dim: usize) -> Self {
        DetectorConfig { keypoints, feat_dim, temperature: 0.1 }
    }
}

/// Detected keypoints: coordinate expectations, features, and the soft
/// assignment heatmap (rows sum to 1).
#[derive(Debug, Clone)]
pub struct KeypointSet {
    pub coords: Vec<Vec3>,
    /// N_k × d feature rows.
    pub features: Tensor,
    /// N_k × N assignment weights.
    pub heatmap: Tensor,
}

pub fn param_specs(cfg: &DetectorConfig) -> Vec<ParamSpec> {
    let d = cfg.feat_dim;
    let mut specs = vec![nn::spec("iakd.queries", &[cfg.keypoints, d], nn::Init::Xavier)];
    specs.extend(nn::layer_norm_specs("iakd.attn.ln_q", d));
    specs.extend(nn::layer_norm_specs("iakd.attn.ln_f", d));
    for name in ["q", "k", "v", "out"] {
        specs.extend(nn::linear_specs(&format!("iakd.attn.{name}"), d, d));
    }
    specs.extend(nn::layer_norm_specs("iakd.attn.ln_ff", d));
    specs.extend(nn::mlp2_specs("iakd.attn.ff", d, d, d));
    specs.extend(nn::mlp2_specs("iakd.pos", 3, d, d));
    specs
}

#[derive(Debug, Clone, Copy)]
pub struct DetectNodes {
    pub coords: NodeId,
    pub features: NodeId,
    pub heatmap: NodeId,
}

/// Build the detector graph over fused point features `f_o` (N×d) and point
/// coordinates `p_o` (N×3): pre-norm single-head cross-attention updates the
/// shared queries, cosine/temperature softmax assigns points to keypoints,
/// and expectations produce coordinates and features (plus a positional
/// encoding of the coordinates).
pub fn build_detect(
    b: &mut GraphBuilder,
    f_o: NodeId,
    p_o: NodeId,
    n_points: usize,
    cfg: &DetectorConfig,
) -> DetectNodes {
    let nk = cfg.keypoints;
    let d = cfg.feat_dim;

    let queries = b.param("iakd.queries");
    let qn = nn::layer_norm(b, queries, "iakd.attn.ln_q", nk);
    let fn_ = nn::layer_norm(b, f_o, "iakd.attn.ln_f", n_points);
    let q = nn::linear(b, qn, "iakd.attn.q");
    let k = nn::linear(b, fn_, "iakd.attn.k");
    let v = nn::linear(b, fn_, "iakd.attn.v");
    let kt = b.transpose(k);
    let scores = b.matmul(q, kt);
    let scores = b.scale(scores, 1.0 / (d as Real).sqrt());
    let weights = b.softmax(scores, 1);
    let ctx = b.matmul(weights, v);
    let ctx = nn::linear(b, ctx, "iakd.attn.out");
    let q1 = b.add(queries, ctx);
    let q1n = nn::layer_norm(b, q1, "iakd.attn.ln_ff", nk);
    let ff = nn::mlp2(b, q1n, "iakd.attn.ff");
    let updated = b.add(q1, ff);

    let cos = nn::cosine_rows(b, updated, f_o, nk, n_points);
    let sharp = b.scale(cos, 1.0 / cfg.temperature);
    let heatmap = b.softmax(sharp, 1);

    let coords = b.matmul(heatmap, p_o);
    let pooled = b.matmul(heatmap, f_o);
    let pos = nn::mlp2(b, coords, "iakd.pos");
    let features = b.add(pooled, pos);

    DetectNodes { coords, features, heatmap }
}

/// Evaluate the detector on concrete tensors.
pub fn detect(
    f_o: &Tensor,
    p_o: &Tensor,
    params: &Bindings,
    cfg: &DetectorConfig,
) -> Result<KeypointSet, TensorError> {
    let n = p_o.shape()[0];
    let mut b = GraphBuilder::new();
    let f = b.input("f_o");
    let p = b.input("p_o");
    let nodes = build_detect(&mut b, f, p, n, cfg);
    b.output("coords", nodes.coords);
    b.output("features", nodes.features);
    b.output("heatmap", nodes.heatmap);
    let graph = b.finish();

    let mut bindings = params.clone();
    bindings.insert("f_o".into(), f_o.clone());
    bindings.insert("p_o".into(), p_o.clone());
    let mut out = graph.evaluate(&bindings)?;
    Ok(KeypointSet {
        coords: out["coords"].rows3(),
        features: out.remove("features").unwrap(),
        heatmap: out.remove("heatmap").unwrap(),
    })
}

/// One-sided surface distance: mean over keypoints of the distance to the
/// nearest cloud point.
pub fn build_surface_loss(
    b: &mut GraphBuilder,
    kpt_coords: NodeId,
    cloud: NodeId,
    n_k: usize,
    n: usize,
) -> NodeId {
    let dist = nn::pairwise_dist(b, kpt_coords, cloud, n_k, n);
    let nearest = b.reduce_min(dist, 1);
    b.reduce_mean(nearest, 0)
}

/// Margin-based diversity penalty over ordered keypoint pairs:
/// `Σ_i Σ_{j≠i} max(0, th - ‖p_i - p_j‖)`.
pub fn build_diversity_loss(
    b: &mut GraphBuilder,
    kpt_coords: NodeId,
    n_k: usize,
    threshold: Real,
) -> NodeId {
    let sq = nn::pairwise_sqdist(b, kpt_coords, kpt_coords, n_k, n_k);
    // Push the diagonal far beyond the margin so self-pairs contribute
    // nothing and the square root stays away from zero.
    let mut diag = vec![0.0; n_k * n_k];
    for i in 0..n_k {
        diag[i * n_k + i] = 1e6;
    }
    let mask = b.constant(Tensor::from_vec(&[n_k, n_k], diag));
    let sq = b.add(sq, mask);
    let sq = b.add_const(sq, nn::DIST_EPS);
    let dist = b.sqrt(sq);
    let neg = b.neg(dist);
    let margin = b.add_const(neg, threshold);
    let hinge = b.relu(margin);
    nn::sum_all(b, hinge, 2)
}

/// Value-level surface loss for a detected keypoint set.
pub fn loss_surface(kpts: &KeypointSet, cloud: &PointCloud) -> Result<Real, TensorError> {
    let mut b = GraphBuilder::new();
    let coords = b.input("coords");
    let pts = b.input("cloud");
    let loss = build_surface_loss(&mut b, coords, pts, kpts.coords.len(), cloud.len());
    b.output("loss", loss);
    let graph = b.finish();
    let mut bind = Bindings::new();
    bind.insert("coords".into(), Tensor::from_points(&kpts.coords));
    bind.insert("cloud".into(), cloud.to_tensor());
    Ok(graph.evaluate(&bind)?["loss"].item())
}

/// Value-level diversity loss. Hinge terms are summed in sorted order, so
/// the result is exactly invariant under keypoint permutation; it doubles as
/// an independent reference for [`build_diversity_loss`].
pub fn loss_diversity(coords: &[Vec3], threshold: Real) -> Real {
    let mut terms = Vec::new();
    for (i, a) in coords.iter().enumerate() {
        for (j, b) in coords.iter().enumerate() {
            if i != j {
                let hinge = threshold - crate::geometry::linalg::dist(*a, *b);
                if hinge > 0.0 {
                    terms.push(hinge);
                }
            }
        }
    }
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    terms.iter().sum()
}
