//! Point-cloud containers, normalization, neighborhoods and the synthetic
//! shape corpus with ground-truth topology and pose.

pub mod io;
pub mod linalg;
mod synth;

pub use linalg::{Mat3, Vec3};
pub use synth::{synth, ShapeKind, ShapeSpec, SynthResult};

use crate::tensor::{Real, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point cloud needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("knn requires more points than neighbors (N={n}, K={k})")]
    KnnTooFewPoints { n: usize, k: usize },
    #[error("feature rows ({rows}) do not match point count ({points})")]
    FeatureMismatch { rows: usize, points: usize },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// Observed object surface: N×3 coordinates in meters, with optional
/// per-point feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    features: Option<Tensor>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFinite(i));
            }
        }
        Ok(PointCloud { points, features: None })
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self, GeometryError> {
        let rows = features.shape()[0];
        if rows != self.points.len() {
            return Err(GeometryError::FeatureMismatch { rows, points: self.points.len() });
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    /// Points as an N×3 tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_points(&self.points)
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            c = linalg::add(c, *p);
        }
        linalg::scale(c, 1.0 / self.points.len().max(1) as Real)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [Real::INFINITY; 3];
        let mut hi = [Real::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }
}

/// Rigid pose plus per-axis size: `p_world = R · p_canonical + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "R")]
    pub rotation: Mat3,
    #[serde(rename = "t")]
    pub translation: Vec3,
    #[serde(rename = "s")]
    pub size: Vec3,
}

impl Pose {
    pub fn identity(size: Vec3) -> Self {
        Pose { rotation: linalg::mat_identity(), translation: [0.0; 3], size }
    }

    /// Orthonormality within 1e-9, det = +1 within 1e-9, positive size.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let rt = linalg::mat_transpose(&self.rotation);
        let prod = linalg::mat_mul(&rt, &self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (prod[i][j] - expect).abs() > 1e-9 {
                    return Err(GeometryError::InvalidPose(format!(
                        "RᵀR deviates from identity at ({i},{j}) by {}",
                        (prod[i][j] - expect).abs()
                    )));
                }
            }
        }
        let det = linalg::mat_det(&self.rotation);
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose(format!("det(R) = {det}")));
        }
        if self.size.iter().any(|&s| s <= 0.0) {
            return Err(GeometryError::InvalidPose(format!("non-positive size {:?}", self.size)));
        }
        Ok(())
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        linalg::add(linalg::mat_apply(&self.rotation, p), self.translation)
    }
}

/// Uniform subsample of `n` points without replacement, order preserved by
/// original index. Deterministic given the seed.
pub fn downsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    if cloud.len() < n {
        return Err(GeometryError::TooFewPoints { needed: n, got: cloud.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher–Yates over the index array.
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    let points = chosen.iter().map(|&i| cloud.points[i]).collect();
    let mut out = PointCloud::new(points)?;
    if let Some(f) = &cloud.features {
        let cols = f.shape()[1];
        let mut data = Vec::with_capacity(n * cols);
        for &i in &chosen {
            data.extend_from_slice(&f.data()[i * cols..(i + 1) * cols]);
        }
        out = out.with_features(Tensor::from_vec(&[n, cols], data))?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub centroid: Vec3,
    /// Mean point norm after centering; multiplying back restores the input.
    pub scale: Real,
    /// True when all points coincide and the scale was clamped to 1.
    pub degenerate: bool,
}

/// Center at the centroid and divide by the mean point norm.
pub fn normalize(cloud: &PointCloud) -> Result<Normalized, GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::TooFewPoints { needed: 1, got: 0 });
    }
    let centroid = cloud.centroid();
    let centered: Vec<Vec3> = cloud.points.iter().map(|p| linalg::sub(*p, centroid)).collect();
    let mean_norm: Real =
        centered.iter().map(|p| linalg::norm(*p)).sum::<Real>() / centered.len() as Real;
    let degenerate = mean_norm < 1e-12;
    let scale = if degenerate { 1.0 } else { mean_norm };
    let points = centered.iter().map(|p| linalg::scale(*p, 1.0 / scale)).collect();
    let mut out = PointCloud::new(points)?;
    if let Some(f) = &cloud.features {
        out = out.with_features(f.clone())?;
    }
    Ok(Normalized { cloud: out, centroid, scale, degenerate })
}

/// K nearest neighbors per point by Euclidean distance, self excluded,
/// ties broken by smaller index.
pub fn knn(points: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>, GeometryError> {
    let n = points.len();
    if n <= k {
        return Err(GeometryError::KnnTooFewPoints { n, k });
    }
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(Real, usize)> = Vec::with_capacity(n - 1);
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        for (j, q) in points.iter().enumerate() {
            if i != j {
                cand.push((linalg::dist2(*p, *q), j));
            }
        }
        cand.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        out.push(cand[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
