//! Prediction heads and the multi-term training loss: pooled 6D-rotation
//! pose regression, per-keypoint canonical-coordinate prediction, offset
//! reconstruction, symmetric Chamfer distance and the weighted total.

use crate::geometry::linalg::{self, Mat3, Vec3};
use crate::geometry::{PointCloud, Pose};
use crate::keypoints::{build_diversity_loss, build_surface_loss, KeypointSet};
use crate::nn::{self, ParamSpec};
use crate::tensor::{Bindings, GraphBuilder, NodeId, Real, Tensor, TensorError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct HeadsConfig {
    pub feat_dim: usize,
    /// Reconstruction offsets per keypoint.
    pub offsets_per_keypoint: usize,
    /// Margin for the keypoint diversity penalty, meters.
    pub diversity_threshold: Real,
}

impl HeadsConfig {
    pub fn new(feat_dim: usize) -> Self {
        HeadsConfig { feat_dim, offsets_per_keypoint: 12, diversity_threshold: 0.01 }
    }
}

/// Loss weights; defaults follow the training recipe.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub pose: Real,
    pub nocs: Real,
    pub cd: Real,
    pub div: Real,
    pub recon: Real,
    pub delta: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pose: 0.3, nocs: 2.0, cd: 2.0, div: 10.0, recon: 15.0, delta: 1.0 }
    }
}

/// Unweighted loss terms plus the weighted total.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pose: Real,
    pub nocs: Real,
    pub cd: Real,
    pub div: Real,
    pub recon: Real,
    pub delta: Real,
    pub total: Real,
}

impl LossBreakdown {
    /// Left-fold weighted sum in field order; `total` is computed with the
    /// identical association, so consistency is exact.
    pub fn weighted_total(&self, w: &LossWeights) -> Real {
        ((((w.pose * self.pose + w.nocs * self.nocs) + w.cd * self.cd) + w.div * self.div)
            + w.recon * self.recon)
            + w.delta * self.delta
    }
}

/// Model outputs for one instance.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub pose: Pose,
    /// Canonical-space keypoint coordinates, N_k×3.
    pub nocs: Tensor,
    /// Per-keypoint reconstruction offsets, N_k×M×3.
    pub recon_offsets: Tensor,
    /// Keypoints plus offsets flattened to (N_k·M)×3.
    pub recon_cloud: Tensor,
    /// True when the 6D rotation output was nearly degenerate and the
    /// fallback orthonormalization was used.
    pub rotation_fallback: bool,
}

pub fn heads_param_specs(cfg: &HeadsConfig) -> Vec<ParamSpec> {
    let d = cfg.feat_dim;
    let mut specs = Vec::new();
    specs.extend(nn::linear_specs("pose_head.0", 2 * d, d));
    specs.extend(nn::linear_specs("pose_head.1", d, 12));
    specs.extend(nn::linear_specs("nocs_head", d, 3));
    specs.extend(nn::linear_specs("recon_head", d, 3 * cfg.offsets_per_keypoint));
    specs
}

#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    /// 3×3 rotation with orthonormal columns.
    pub rotation: NodeId,
    /// Translation as a 1×3 row.
    pub translation: NodeId,
    /// Per-axis size as a 1×3 row, strictly positive via exp.
    pub size: NodeId,
    /// Raw 6D rotation parameters (diagnostic output).
    pub r6: NodeId,
    pub nocs: NodeId,
    /// N_k×M×3 offsets.
    pub offsets: NodeId,
    /// (N_k·M)×3 reconstructed cloud.
    pub recon_cloud: NodeId,
}

/// Cross product of two 1×3 rows.
fn cross_rows(b: &mut GraphBuilder, u: NodeId, v: NodeId) -> NodeId {
    let ux = b.slice(u, 1, 0, 1);
    let uy = b.slice(u, 1, 1, 1);
    let uz = b.slice(u, 1, 2, 1);
    let vx = b.slice(v, 1, 0, 1);
    let vy = b.slice(v, 1, 1, 1);
    let vz = b.slice(v, 1, 2, 1);
    let t0 = b.mul(uy, vz);
    let t1 = b.mul(uz, vy);
    let x = b.sub(t0, t1);
    let t2 = b.mul(uz, vx);
    let t3 = b.mul(ux, vz);
    let y = b.sub(t2, t3);
    let t4 = b.mul(ux, vy);
    let t5 = b.mul(uy, vx);
    let z = b.sub(t4, t5);
    b.concat(&[x, y, z], 1)
}

fn normalize_row(b: &mut GraphBuilder, v: NodeId) -> NodeId {
    let n = nn::row_norms(b, v, 1);
    let n = b.add_const(n, nn::COS_EPS);
    b.div(v, n)
}

/// Pose, canonical-coordinate and reconstruction heads over the aggregated
/// keypoint features. The rotation comes from two pooled 3-vectors via
/// Gram–Schmidt with a cross-product third column, so orthonormality and
/// det = +1 hold by construction; sizes are exponentiated log-extents.
pub fn build_heads(
    b: &mut GraphBuilder,
    kpt_features: NodeId,
    kpt_coords: NodeId,
    n_k: usize,
    cfg: &HeadsConfig,
) -> HeadNodes {
    let m = cfg.offsets_per_keypoint;

    let mean = b.reduce_mean(kpt_features, 0);
    let max = b.reduce_max(kpt_features, 0);
    let pooled = b.concat(&[mean, max], 0);
    let pooled = b.reshape(pooled, &[1, 2 * cfg.feat_dim]);
    let hidden = nn::linear(b, pooled, "pose_head.0");
    let hidden = b.relu(hidden);
    let out = nn::linear(b, hidden, "pose_head.1");

    let r6 = b.slice(out, 1, 0, 6);
    let translation = b.slice(out, 1, 6, 3);
    let log_size = b.slice(out, 1, 9, 3);
    let size = b.exp(log_size);

    let a = b.slice(r6, 1, 0, 3);
    let raw_b = b.slice(r6, 1, 3, 3);
    let b1 = normalize_row(b, a);
    let dot = {
        let prod = b.mul(b1, raw_b);
        let s = b.reduce_sum(prod, 1);
        b.reshape(s, &[1, 1])
    };
    let proj = b.mul(dot, b1);
    let ortho = b.sub(raw_b, proj);
    let b2 = normalize_row(b, ortho);
    let b3 = cross_rows(b, b1, b2);
    let c1 = b.transpose(b1);
    let c2 = b.transpose(b2);
    let c3 = b.transpose(b3);
    let rotation = b.concat(&[c1, c2, c3], 1);

    let nocs = nn::linear(b, kpt_features, "nocs_head");

    let offsets_flat = nn::linear(b, kpt_features, "recon_head");
    let offsets = b.reshape(offsets_flat, &[n_k, m, 3]);
    let centers = b.reshape(kpt_coords, &[n_k, 1, 3]);
    let clusters = b.add(centers, offsets);
    let recon_cloud = b.reshape(clusters, &[n_k * m, 3]);

    HeadNodes { rotation, translation, size, r6, nocs, offsets, recon_cloud }
}

/// Symmetric Chamfer distance between two point sets (graph form).
pub fn build_chamfer(
    b: &mut GraphBuilder,
    a: NodeId,
    bpts: NodeId,
    n: usize,
    m: usize,
) -> NodeId {
    let dist = nn::pairwise_dist(b, a, bpts, n, m);
    let fwd = b.reduce_min(dist, 1);
    let fwd = b.reduce_mean(fwd, 0);
    let bwd = b.reduce_min(dist, 0);
    let bwd = b.reduce_mean(bwd, 0);
    b.add(fwd, bwd)
}

/// Reference Chamfer distance by plain loops.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Real {
    assert!(!a.is_empty() && !b.is_empty(), "chamfer of an empty set");
    let one_sided = |from: &[Vec3], to: &[Vec3]| -> Real {
        from.iter()
            .map(|p| to.iter().map(|q| linalg::dist(*p, *q)).fold(Real::INFINITY, Real::min))
            .sum::<Real>()
            / from.len() as Real
    };
    one_sided(a, b) + one_sided(b, a)
}

/// Project points into the canonical frame of a pose:
/// `u = R (p - t) / ‖s‖₂`.
pub fn nocs_project(pose: &Pose, points: &[Vec3]) -> Vec<Vec3> {
    let inv_norm = 1.0 / linalg::norm(pose.size);
    points
        .iter()
        .map(|p| {
            linalg::scale(
                linalg::mat_apply(&pose.rotation, linalg::sub(*p, pose.translation)),
                inv_norm,
            )
        })
        .collect()
}

/// Smooth-L1 with kink at 1, summed over coordinates, averaged over rows.
fn build_smooth_l1(b: &mut GraphBuilder, pred: NodeId, target: NodeId) -> NodeId {
    let err = b.sub(pred, target);
    let sq = b.mul(err, err);
    let sq = b.add_const(sq, nn::DIST_EPS);
    let abs = b.sqrt(sq);
    let clipped = b.min_const(abs, 1.0);
    let quad = b.mul(clipped, clipped);
    let quad = b.scale(quad, 0.5);
    let over = b.add_const(abs, -1.0);
    let lin = b.relu(over);
    let term = b.add(quad, lin);
    let per_row = b.reduce_sum(term, 1);
    b.reduce_mean(per_row, 0)
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub pose: NodeId,
    pub nocs: NodeId,
    pub cd: NodeId,
    pub div: NodeId,
    pub recon: NodeId,
    pub delta: NodeId,
    pub total: NodeId,
}

pub struct LossInputs {
    pub heads: HeadNodes,
    pub kpt_coords: NodeId,
    pub cloud: NodeId,
    pub n_k: usize,
    pub n_points: usize,
}

/// The six supervision terms and their weighted total:
/// rotation/translation/size regression, Smooth-L1 canonical-coordinate
/// consistency, keypoint surface distance, keypoint diversity, symmetric
/// reconstruction Chamfer, and the offset-magnitude regularizer.
pub fn build_losses(
    b: &mut GraphBuilder,
    inputs: &LossInputs,
    gt: &Pose,
    weights: &LossWeights,
    cfg: &HeadsConfig,
) -> LossNodes {
    let n_k = inputs.n_k;
    let m = cfg.offsets_per_keypoint;

    // Ground-truth constants.
    let gt_r = {
        let mut data = Vec::with_capacity(9);
        for row in &gt.rotation {
            data.extend_from_slice(row);
        }
        b.constant(Tensor::from_vec(&[3, 3], data))
    };
    let gt_t = b.constant(Tensor::from_vec(&[1, 3], gt.translation.to_vec()));
    let gt_s = b.constant(Tensor::from_vec(&[1, 3], gt.size.to_vec()));

    // Pose term: Frobenius norm of the rotation residual plus Euclidean
    // norms of translation and size residuals.
    let dr = b.sub(inputs.heads.rotation, gt_r);
    let rot_term = nn::l2_norm(b, dr, 2);
    let dt = b.sub(inputs.heads.translation, gt_t);
    let t_term = nn::l2_norm(b, dt, 2);
    let ds = b.sub(inputs.heads.size, gt_s);
    let s_term = nn::l2_norm(b, ds, 2);
    let pose = {
        let a = b.add(rot_term, t_term);
        b.add(a, s_term)
    };

    // Canonical targets from the ground-truth pose: u = R_gt (p - t_gt) / ‖s_gt‖.
    let centered = b.sub(inputs.kpt_coords, gt_t);
    let gt_rt = b.transpose(gt_r);
    let projected = b.matmul(centered, gt_rt);
    let target = b.scale(projected, 1.0 / linalg::norm(gt.size));
    let nocs = build_smooth_l1(b, inputs.heads.nocs, target);

    let cd = build_surface_loss(b, inputs.kpt_coords, inputs.cloud, n_k, inputs.n_points);
    let div = build_diversity_loss(b, inputs.kpt_coords, n_k, cfg.diversity_threshold);
    let recon = build_chamfer(b, inputs.heads.recon_cloud, inputs.cloud, n_k * m, inputs.n_points);

    // Mean offset magnitude.
    let off_sq = b.mul(inputs.heads.offsets, inputs.heads.offsets);
    let off_sq = b.reduce_sum(off_sq, 2);
    let off_sq = b.add_const(off_sq, nn::DIST_EPS);
    let off_norm = b.sqrt(off_sq);
    let delta = nn::mean_all(b, off_norm, 2);

    // Weighted total, left-fold in declaration order.
    let total = {
        let wp = b.scale(pose, weights.pose);
        let wn = b.scale(nocs, weights.nocs);
        let wc = b.scale(cd, weights.cd);
        let wd = b.scale(div, weights.div);
        let wr = b.scale(recon, weights.recon);
        let wdl = b.scale(delta, weights.delta);
        let s1 = b.add(wp, wn);
        let s2 = b.add(s1, wc);
        let s3 = b.add(s2, wd);
        let s4 = b.add(s3, wr);
        b.add(s4, wdl)
    };

    LossNodes { pose, nocs, cd, div, recon, delta, total }
}

/// Orthonormalize a 6D rotation representation. Returns the rotation and
/// whether the fallback axis had to replace a degenerate second direction.
pub fn rotation_from_6d(r: &[Real; 6]) -> (Mat3, bool) {
    let a = [r[0], r[1], r[2]];
    let raw_b = [r[3], r[4], r[5]];
    let mut fallback = false;

    let mut b1 = a;
    let na = linalg::norm(b1);
    if na < 1e-8 {
        b1 = [1.0, 0.0, 0.0];
        fallback = true;
    } else {
        b1 = linalg::scale(b1, 1.0 / na);
    }

    let mut ortho = linalg::sub(raw_b, linalg::scale(b1, linalg::dot(b1, raw_b)));
    if linalg::norm(ortho) < 1e-8 {
        // Re-orthogonalize against the fixed axis least aligned with b1.
        fallback = true;
        let axis = if b1[0].abs() <= b1[1].abs() && b1[0].abs() <= b1[2].abs() {
            [1.0, 0.0, 0.0]
        } else if b1[1].abs() <= b1[2].abs() {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        ortho = linalg::sub(axis, linalg::scale(b1, linalg::dot(b1, axis)));
    }
    let b2 = linalg::scale(ortho, 1.0 / linalg::norm(ortho));
    let b3 = linalg::cross(b1, b2);
    (
        [
            [b1[0], b2[0], b3[0]],
            [b1[1], b2[1], b3[1]],
            [b1[2], b2[2], b3[2]],
        ],
        fallback,
    )
}

/// Assemble a [`Pose`] from raw head outputs (r6, translation, log-sizes).
pub fn pose_from_head_outputs(r6: &[Real], t: &[Real], size: &[Real]) -> (Pose, bool) {
    let (rotation, fallback) = rotation_from_6d(&[r6[0], r6[1], r6[2], r6[3], r6[4], r6[5]]);
    (
        Pose {
            rotation,
            translation: [t[0], t[1], t[2]],
            size: [size[0], size[1], size[2]],
        },
        fallback,
    )
}

/// Evaluate the pose head alone on concrete keypoint features.
pub fn pose_head(
    kpt_features: &Tensor,
    params: &Bindings,
    cfg: &HeadsConfig,
) -> Result<(Pose, bool), TensorError> {
    let n_k = kpt_features.shape()[0];
    let mut b = GraphBuilder::new();
    let f = b.input("kpt_features");
    let coords = b.constant(Tensor::zeros(&[n_k, 3]));
    let heads = build_heads(&mut b, f, coords, n_k, cfg);
    b.output("r6", heads.r6);
    b.output("t", heads.translation);
    b.output("s", heads.size);
    let graph = b.finish();
    let mut bind = params.clone();
    bind.insert("kpt_features".into(), kpt_features.clone());
    let out = graph.evaluate(&bind)?;
    Ok(pose_from_head_outputs(out["r6"].data(), out["t"].data(), out["s"].data()))
}

/// Evaluate the full loss stack on concrete predictions.
pub fn compute_losses(
    pred: &Prediction,
    kpts: &KeypointSet,
    gt_pose: &Pose,
    gt_cloud: &PointCloud,
    weights: &LossWeights,
    cfg: &HeadsConfig,
) -> Result<LossBreakdown, TensorError> {
    let n_k = kpts.coords.len();
    let n = gt_cloud.len();
    let m = cfg.offsets_per_keypoint;

    let mut b = GraphBuilder::new();
    let rotation = b.input("pred_r");
    let translation = b.input("pred_t");
    let size = b.input("pred_s");
    let nocs = b.input("pred_nocs");
    let offsets = b.input("pred_offsets");
    let recon_cloud = b.input("pred_recon");
    let kpt_coords = b.input("kpt_coords");
    let cloud = b.input("cloud");
    // r6 is diagnostic-only and unused by the losses.
    let heads = HeadNodes { rotation, translation, size, r6: rotation, nocs, offsets, recon_cloud };
    let inputs = LossInputs { heads, kpt_coords, cloud, n_k, n_points: n };
    let nodes = build_losses(&mut b, &inputs, gt_pose, weights, cfg);
    b.output("pose", nodes.pose);
    b.output("nocs", nodes.nocs);
    b.output("cd", nodes.cd);
    b.output("div", nodes.div);
    b.output("recon", nodes.recon);
    b.output("delta", nodes.delta);
    b.output("total", nodes.total);
    let graph = b.finish();

    let mut bind = Bindings::new();
    let mut r_data = Vec::with_capacity(9);
    for row in &pred.pose.rotation {
        r_data.extend_from_slice(row);
    }
    bind.insert("pred_r".into(), Tensor::from_vec(&[3, 3], r_data));
    bind.insert("pred_t".into(), Tensor::from_vec(&[1, 3], pred.pose.translation.to_vec()));
    bind.insert("pred_s".into(), Tensor::from_vec(&[1, 3], pred.pose.size.to_vec()));
    bind.insert("pred_nocs".into(), pred.nocs.clone());
    bind.insert("pred_offsets".into(), pred.recon_offsets.clone());
    bind.insert("pred_recon".into(), pred.recon_cloud.clone());
    bind.insert("kpt_coords".into(), Tensor::from_points(&kpts.coords));
    bind.insert("cloud".into(), gt_cloud.to_tensor());
    debug_assert_eq!(pred.recon_offsets.shape(), &[n_k, m, 3]);

    let out = graph.evaluate(&bind)?;
    Ok(LossBreakdown {
        pose: out["pose"].item(),
        nocs: out["nocs"].item(),
        cd: out["cd"].item(),
        div: out["div"].item(),
        recon: out["recon"].item(),
        delta: out["delta"].item(),
        total: out["total"].item(),
    })
}
