//! Pose evaluation: oriented-box 3D IoU (exact polytope clipping with a
//! stratified sampling oracle) and the n°/m cm accuracy cells with
//! symmetry-aware rotation errors.

use crate::geometry::linalg::{self, Mat3, Vec3};
use crate::geometry::Pose;
use crate::tensor::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("rotation matrix deviates from orthonormal by {0}")]
    NotARotation(Real),
    #[error("prediction/ground-truth length mismatch: {preds} vs {gts}")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("evaluation set is empty")]
    Empty,
}

/// Rotational symmetry class of an instance: free rotation about the y axis
/// for rotationally symmetric objects, none otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    #[default]
    None,
    AxialY,
}

fn orthonormal_defect(r: &Mat3) -> Real {
    let rt = linalg::mat_transpose(r);
    let prod = linalg::mat_mul(&rt, r);
    let mut defect = (linalg::mat_det(r) - 1.0).abs();
    for (i, row) in prod.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let expect = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((v - expect).abs());
        }
    }
    defect
}

/// Angular error in degrees. `AxialY` measures only the tilt between the
/// rotated y axes, so spins about the symmetry axis are free.
pub fn rotation_error_deg(
    pred: &Mat3,
    gt: &Mat3,
    symmetry: Symmetry,
) -> Result<Real, MetricsError> {
    for r in [pred, gt] {
        let defect = orthonormal_defect(r);
        if defect > 1e-6 {
            return Err(MetricsError::NotARotation(defect));
        }
    }
    let radians = match symmetry {
        Symmetry::None => {
            let rel = linalg::mat_mul(pred, &linalg::mat_transpose(gt));
            (((linalg::mat_trace(&rel) - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
        }
        Symmetry::AxialY => {
            let y_pred = [pred[0][1], pred[1][1], pred[2][1]];
            let y_gt = [gt[0][1], gt[1][1], gt[2][1]];
            linalg::dot(y_pred, y_gt).clamp(-1.0, 1.0).acos()
        }
    };
    Ok(radians.to_degrees())
}

/// Box derived from a pose: center `t`, orientation `R`, extents `s`.
#[derive(Debug, Clone, Copy)]
pub struct OrientedBox {
    pub center: Vec3,
    pub rotation: Mat3,
    pub extents: Vec3,
}

impl OrientedBox {
    pub fn from_pose(pose: &Pose) -> Self {
        OrientedBox { center: pose.translation, rotation: pose.rotation, extents: pose.size }
    }

    pub fn volume(&self) -> Real {
        self.extents[0] * self.extents[1] * self.extents[2]
    }

    pub fn is_degenerate(&self) -> bool {
        self.volume() <= 1e-18
    }

    /// The 8 corners `t + R·(±s/2)`.
    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [[0.0; 3]; 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let local = [
                (if i & 1 == 0 { -0.5 } else { 0.5 }) * self.extents[0],
                (if i & 2 == 0 { -0.5 } else { 0.5 }) * self.extents[1],
                (if i & 4 == 0 { -0.5 } else { 0.5 }) * self.extents[2],
            ];
            *corner = linalg::add(self.center, linalg::mat_apply(&self.rotation, local));
        }
        out
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let local = linalg::mat_apply(&linalg::mat_transpose(&self.rotation), linalg::sub(p, self.center));
        (0..3).all(|a| local[a].abs() <= self.extents[a] / 2.0 + 1e-12)
    }

    /// The 6 face half-spaces as (outward unit normal, offset): inside ⟺
    /// n·x ≤ d.
    fn halfspaces(&self) -> [(Vec3, Real); 6] {
        let mut out = [([0.0; 3], 0.0); 6];
        for axis in 0..3 {
            let normal = [self.rotation[0][axis], self.rotation[1][axis], self.rotation[2][axis]];
            let half = self.extents[axis] / 2.0;
            out[2 * axis] = (normal, linalg::dot(normal, self.center) + half);
            let neg = linalg::scale(normal, -1.0);
            out[2 * axis + 1] = (neg, linalg::dot(neg, self.center) + half);
        }
        out
    }
}

/// Convex polytope as outward-wound face polygons.
struct Polytope {
    faces: Vec<Vec<Vec3>>,
    scale: Real,
}

impl Polytope {
    fn from_box(b: &OrientedBox) -> Self {
        let corners = b.corners();
        // Index pattern per face, wound CCW seen from outside.
        const FACES: [[usize; 4]; 6] = [
            [1, 3, 7, 5], // +x
            [0, 4, 6, 2], // -x
            [2, 6, 7, 3], // +y
            [0, 1, 5, 4], // -y
            [4, 5, 7, 6], // +z
            [0, 2, 3, 1], // -z
        ];
        let faces = FACES
            .iter()
            .map(|idx| idx.iter().map(|&i| corners[i]).collect())
            .collect();
        let scale = b.extents.iter().fold(0.0 as Real, |acc, e| acc.max(*e)).max(1e-9);
        Polytope { faces, scale }
    }

    /// Clip against `n·x ≤ d`, closing the section with a new cap face.
    fn clip(&self, normal: Vec3, offset: Real) -> Polytope {
        let eps = 1e-12 * self.scale;
        let mut faces: Vec<Vec<Vec3>> = Vec::with_capacity(self.faces.len() + 1);
        let mut cap: Vec<Vec3> = Vec::new();
        for face in &self.faces {
            let mut kept: Vec<Vec3> = Vec::with_capacity(face.len() + 2);
            for (i, &v) in face.iter().enumerate() {
                let w = face[(i + 1) % face.len()];
                let dv = linalg::dot(normal, v) - offset;
                let dw = linalg::dot(normal, w) - offset;
                if dv <= eps {
                    kept.push(v);
                }
                if (dv < -eps && dw > eps) || (dv > eps && dw < -eps) {
                    let t = dv / (dv - dw);
                    let cut = linalg::add(v, linalg::scale(linalg::sub(w, v), t));
                    kept.push(cut);
                    cap.push(cut);
                }
            }
            if kept.len() >= 3 {
                faces.push(kept);
            }
        }
        if cap.len() >= 3 {
            // Deduplicate and wind the section polygon CCW around +normal.
            let mut unique: Vec<Vec3> = Vec::with_capacity(cap.len());
            for p in cap {
                if unique.iter().all(|q| linalg::dist(*q, p) > 1e-9 * self.scale) {
                    unique.push(p);
                }
            }
            if unique.len() >= 3 {
                let center = unique
                    .iter()
                    .fold([0.0; 3], |acc, p| linalg::add(acc, *p));
                let center = linalg::scale(center, 1.0 / unique.len() as Real);
                let axis_u = {
                    let seed = linalg::sub(unique[0], center);
                    let n2 = linalg::norm(seed);
                    if n2 > 1e-12 * self.scale {
                        linalg::scale(seed, 1.0 / n2)
                    } else {
                        [1.0, 0.0, 0.0]
                    }
                };
                let axis_v = linalg::cross(normal, axis_u);
                unique.sort_by(|a, b| {
                    let pa = linalg::sub(*a, center);
                    let pb = linalg::sub(*b, center);
                    let aa = linalg::dot(pa, axis_v).atan2(linalg::dot(pa, axis_u));
                    let ab = linalg::dot(pb, axis_v).atan2(linalg::dot(pb, axis_u));
                    aa.partial_cmp(&ab).unwrap()
                });
                faces.push(unique);
            }
        }
        Polytope { faces, scale: self.scale }
    }

    /// Divergence-theorem volume over outward-wound faces.
    fn volume(&self) -> Real {
        let mut six_v = 0.0;
        for face in &self.faces {
            for i in 1..face.len() - 1 {
                six_v += linalg::dot(face[0], linalg::cross(face[i], face[i + 1]));
            }
        }
        (six_v / 6.0).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    Exact,
    Sampled,
}

const SAMPLE_GRID: usize = 64;

/// Intersection-over-union of two oriented boxes. `Exact` clips one box's
/// polytope by the other's six face half-spaces; `Sampled` estimates the
/// intersection from stratified `64³` grids in both boxes. Degenerate
/// zero-volume boxes evaluate to 0.
pub fn box_iou(a: &OrientedBox, b: &OrientedBox, mode: IouMode) -> Real {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let inter = match mode {
        IouMode::Exact => {
            let mut poly = Polytope::from_box(a);
            for (normal, offset) in b.halfspaces() {
                poly = poly.clip(normal, offset);
                if poly.faces.len() < 4 {
                    return 0.0;
                }
            }
            poly.volume()
        }
        IouMode::Sampled => {
            let est_a = sampled_intersection(a, b);
            let est_b = sampled_intersection(b, a);
            (est_a + est_b) / 2.0
        }
    };
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of a stratified grid inside `other`, scaled by the grid box
/// volume.
fn sampled_intersection(grid_box: &OrientedBox, other: &OrientedBox) -> Real {
    let n = SAMPLE_GRID;
    let mut hits = 0usize;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let local = [
                    ((ix as Real + 0.5) / n as Real - 0.5) * grid_box.extents[0],
                    ((iy as Real + 0.5) / n as Real - 0.5) * grid_box.extents[1],
                    ((iz as Real + 0.5) / n as Real - 0.5) * grid_box.extents[2],
                ];
                let p = linalg::add(grid_box.center, linalg::mat_apply(&grid_box.rotation, local));
                if other.contains(p) {
                    hits += 1;
                }
            }
        }
    }
    grid_box.volume() * hits as Real / (n * n * n) as Real
}

pub const IOU_THRESHOLDS: [Real; 3] = [0.25, 0.50, 0.75];
/// (degrees, centimeters) accuracy cells.
pub const POSE_CELLS: [(Real, Real); 4] = [(5.0, 2.0), (5.0, 5.0), (10.0, 2.0), (10.0, 5.0)];

/// Fractions of instances passing each threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: IouCells,
    pub pose: PoseCells,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IouCells {
    #[serde(rename = "0.25")]
    pub at_25: Real,
    #[serde(rename = "0.50")]
    pub at_50: Real,
    #[serde(rename = "0.75")]
    pub at_75: Real,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseCells {
    #[serde(rename = "5deg2cm")]
    pub d5_2cm: Real,
    #[serde(rename = "5deg5cm")]
    pub d5_5cm: Real,
    #[serde(rename = "10deg2cm")]
    pub d10_2cm: Real,
    #[serde(rename = "10deg5cm")]
    pub d10_5cm: Real,
}

/// Instance-averaged accuracy: a prediction passes a cell when its rotation
/// error is below n degrees and its translation error below m centimeters;
/// IoU cells count instances at or above each overlap threshold.
pub fn evaluate_set(
    preds: &[Pose],
    gts: &[(Pose, Symmetry)],
) -> Result<MetricReport, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = preds.len() as Real;
    let mut iou_hits = [0usize; 3];
    let mut pose_hits = [0usize; 4];
    for (pred, (gt, symmetry)) in preds.iter().zip(gts) {
        let rot = rotation_error_deg(&pred.rotation, &gt.rotation, *symmetry)?;
        let trans_cm = linalg::dist(pred.translation, gt.translation) * 100.0;
        for (i, (deg, cm)) in POSE_CELLS.iter().enumerate() {
            if rot < *deg && trans_cm < *cm {
                pose_hits[i] += 1;
            }
        }
        let iou = box_iou(
            &OrientedBox::from_pose(pred),
            &OrientedBox::from_pose(gt),
            IouMode::Exact,
        );
        for (i, threshold) in IOU_THRESHOLDS.iter().enumerate() {
            if iou >= *threshold {
                iou_hits[i] += 1;
            }
        }
    }
    Ok(MetricReport {
        iou: IouCells {
            at_25: iou_hits[0] as Real / n,
            at_50: iou_hits[1] as Real / n,
            at_75: iou_hits[2] as Real / n,
        },
        pose: PoseCells {
            d5_2cm: pose_hits[0] as Real / n,
            d5_5cm: pose_hits[1] as Real / n,
            d10_2cm: pose_hits[2] as Real / n,
            d10_5cm: pose_hits[3] as Real / n,
        },
    })
}

impl MetricReport {
    /// Looser cells always contain stricter ones; IoU decreases with the
    /// threshold.
    pub fn is_monotone(&self) -> bool {
        self.iou.at_25 >= self.iou.at_50
            && self.iou.at_50 >= self.iou.at_75
            && self.pose.d10_5cm >= self.pose.d5_5cm
            && self.pose.d10_5cm >= self.pose.d10_2cm
            && self.pose.d5_5cm >= self.pose.d5_2cm
            && self.pose.d10_2cm >= self.pose.d5_2cm
    }
}
