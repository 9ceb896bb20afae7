//! Synthetic shape corpus: parametric surfaces with known Betti numbers,
//! jittered and placed under a random rigid pose.

use super::linalg::{self, Vec3};
use super::{GeometryError, PointCloud, Pose};
use crate::tensor::Real;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Desk-scale stand-ins for the six household categories plus a disconnected
/// control shape. Category ids 0..=5 map onto the first six kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    CircleRing,
    SphereShell,
    Torus,
    CylinderCan,
    MugWithHandle,
    Bowl,
    TwoClusters,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 7] = [
        ShapeKind::CircleRing,
        ShapeKind::SphereShell,
        ShapeKind::Torus,
        ShapeKind::CylinderCan,
        ShapeKind::MugWithHandle,
        ShapeKind::Bowl,
        ShapeKind::TwoClusters,
    ];

    pub fn from_category(n: usize) -> Option<ShapeKind> {
        ShapeKind::ALL.get(n).copied()
    }

    /// Betti numbers (β0, β1) of the underlying space.
    pub fn betti(self) -> (usize, usize) {
        match self {
            ShapeKind::CircleRing => (1, 1),
            ShapeKind::SphereShell => (1, 0),
            ShapeKind::Torus => (1, 2),
            ShapeKind::CylinderCan => (1, 0),
            ShapeKind::MugWithHandle => (1, 1),
            ShapeKind::Bowl => (1, 0),
            ShapeKind::TwoClusters => (2, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Primary radius in meters (ring/sphere/torus/can body/bowl/cluster
    /// separation half-distance).
    pub radius: Real,
    /// Tube radius for the torus and mug handle; cluster spread.
    pub minor_radius: Real,
    /// Height of the can and mug body.
    pub height: Real,
    /// Isotropic Gaussian jitter stddev in meters.
    pub jitter: Real,
    pub points: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, points: usize, seed: u64) -> Self {
        ShapeSpec {
            kind,
            radius: 1.0,
            minor_radius: 0.5,
            height: 1.2,
            jitter: 0.01,
            points,
            seed,
        }
    }

    /// Mug-sized variant (~15 cm) for pose-training datasets.
    pub fn desk_scale(kind: ShapeKind, points: usize, seed: u64) -> Self {
        ShapeSpec {
            kind,
            radius: 0.15,
            minor_radius: 0.06,
            height: 0.2,
            jitter: 0.002,
            points,
            seed,
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if self.radius <= 0.0 || self.minor_radius <= 0.0 || self.height <= 0.0 {
            return Err(GeometryError::InvalidPose("shape parameters must be positive".into()));
        }
        if self.jitter < 0.0 {
            return Err(GeometryError::InvalidPose("jitter must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthResult {
    pub cloud: PointCloud,
    pub pose: Pose,
    /// Betti numbers (β0, β1) of the underlying space.
    pub betti: (usize, usize),
}

const PI: Real = std::f64::consts::PI as Real;
const TAU: Real = 2.0 * PI;

fn gaussian(rng: &mut ChaCha8Rng) -> Real {
    // Box–Muller; rand_distr is avoided to keep the dependency set small.
    loop {
        let u1: Real = rng.random_range(0.0..1.0);
        let u2: Real = rng.random_range(0.0..1.0);
        if u1 > 1e-12 {
            return (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> linalg::Mat3 {
    // Uniform rotation from a normalized quaternion.
    loop {
        let q = [gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng)];
        let n = (q.iter().map(|v| v * v).sum::<Real>()).sqrt();
        if n < 1e-6 {
            continue;
        }
        let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        return [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
    }
}

/// Sample the canonical surface, jitter, then apply a random valid pose.
pub fn synth(spec: &ShapeSpec) -> Result<SynthResult, GeometryError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut canonical = sample_surface(spec, &mut rng);
    for p in &mut canonical {
        for c in p.iter_mut() {
            *c += spec.jitter * gaussian(&mut rng);
        }
    }

    let (mut lo, mut hi) = ([Real::INFINITY; 3], [Real::NEG_INFINITY; 3]);
    for p in &canonical {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let size = [
        (hi[0] - lo[0]).max(1e-6),
        (hi[1] - lo[1]).max(1e-6),
        (hi[2] - lo[2]).max(1e-6),
    ];

    let rotation = random_rotation(&mut rng);
    let translation = [
        rng.random_range(-0.25..0.25),
        rng.random_range(-0.25..0.25),
        rng.random_range(-0.25..0.25),
    ];
    let pose = Pose { rotation, translation, size };
    pose.validate()?;

    let world: Vec<Vec3> = canonical.iter().map(|p| pose.apply(*p)).collect();
    Ok(SynthResult { cloud: PointCloud::new(world)?, pose, betti: spec.kind.betti() })
}

fn sample_surface(spec: &ShapeSpec, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let n = spec.points;
    let r = spec.radius;
    match spec.kind {
        ShapeKind::CircleRing => (0..n)
            .map(|i| {
                let u: Real = rng.random_range(0.0..1.0);
                let theta = TAU * (i as Real + 0.5 * u) / n as Real;
                [r * theta.cos(), r * theta.sin(), 0.0]
            })
            .collect(),
        ShapeKind::SphereShell => (0..n)
            .map(|_| {
                let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
                let norm = linalg::norm(v).max(1e-9);
                linalg::scale(v, r / norm)
            })
            .collect(),
        ShapeKind::Torus => {
            // Stratified (major, minor) grid so both loops are sampled evenly.
            let minor = spec.minor_radius;
            let nv = (((n as Real) * minor / r).sqrt().round() as usize).clamp(3, 8);
            let nu = n / nv;
            let mut pts = Vec::with_capacity(n);
            for iu in 0..nu {
                for iv in 0..nv {
                    let u = TAU * iu as Real / nu as Real;
                    let v = TAU * iv as Real / nv as Real;
                    pts.push(torus_point(r, minor, u, v));
                }
            }
            while pts.len() < n {
                let u = rng.random_range(0.0..TAU);
                let v = rng.random_range(0.0..TAU);
                pts.push(torus_point(r, minor, u, v));
            }
            pts
        }
        ShapeKind::CylinderCan => (0..n)
            .map(|_| {
                let h = spec.height;
                let lateral_area = TAU * r * h;
                let cap_area = PI * r * r;
                let pick: Real = rng.random_range(0.0..lateral_area + 2.0 * cap_area);
                let theta = rng.random_range(0.0..TAU);
                if pick < lateral_area {
                    let z = rng.random_range(-h / 2.0..h / 2.0);
                    [r * theta.cos(), r * theta.sin(), z]
                } else {
                    let unit: Real = rng.random_range(0.0..1.0);
                    let rad = r * unit.sqrt();
                    let z = if pick < lateral_area + cap_area { h / 2.0 } else { -h / 2.0 };
                    [rad * theta.cos(), rad * theta.sin(), z]
                }
            })
            .collect(),
        ShapeKind::MugWithHandle => {
            // Open cylinder body with a bottom cap plus a half-torus handle
            // attached to the wall at x = r.
            let h = spec.height;
            let tube = spec.minor_radius * 0.3;
            let loop_r = h * 0.35;
            let n_handle = n / 4;
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n - n_handle {
                let theta = rng.random_range(0.0..TAU);
                if rng.random_bool(0.75) {
                    let z = rng.random_range(-h / 2.0..h / 2.0);
                    pts.push([r * theta.cos(), r * theta.sin(), z]);
                } else {
                    let unit: Real = rng.random_range(0.0..1.0);
                    let rad = r * unit.sqrt();
                    pts.push([rad * theta.cos(), rad * theta.sin(), -h / 2.0]);
                }
            }
            for _ in 0..n_handle {
                let u = rng.random_range(-0.5 * PI..0.5 * PI);
                let v = rng.random_range(0.0..TAU);
                let arm = loop_r + tube * v.cos();
                pts.push([r + arm * u.cos(), tube * v.sin(), arm * u.sin()]);
            }
            pts
        }
        ShapeKind::Bowl => (0..n)
            .map(|_| {
                // Lower hemisphere shell.
                let theta = rng.random_range(0.0..TAU);
                let z: Real = rng.random_range(-1.0..0.0);
                let rad = (1.0 - z * z).sqrt() * r;
                [rad * theta.cos(), rad * theta.sin(), z * r]
            })
            .collect(),
        ShapeKind::TwoClusters => (0..n)
            .map(|i| {
                let center = if i % 2 == 0 { [-r, 0.0, 0.0] } else { [r, 0.0, 0.0] };
                let spread = spec.minor_radius * 0.3;
                [
                    center[0] + spread * gaussian(rng),
                    center[1] + spread * gaussian(rng),
                    center[2] + spread * gaussian(rng),
                ]
            })
            .collect(),
    }
}

fn torus_point(major: Real, minor: Real, u: Real, v: Real) -> Vec3 {
    [
        (major + minor * v.cos()) * u.cos(),
        (major + minor * v.cos()) * u.sin(),
        minor * v.sin(),
    ]
}
