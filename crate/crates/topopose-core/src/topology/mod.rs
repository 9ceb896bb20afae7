//! Topology extraction: alpha filtration over the Delaunay triangulation,
//! persistence diagrams, topological entropy, Betti curves, and the packed
//! 96-dimensional global feature vector — plus a brute-force Čech oracle
//! that must agree with the production path bar-for-bar.
//!
//! Entry values use the minimum-enclosing-ball radius of each simplex's
//! vertices (the scale at which balls of radius α around the vertices first
//! share a common point), restricted to Delaunay simplices. Homology is
//! tracked in dimensions 0 and 1; higher-dimensional features are rare and
//! short-lived for surface scans and are not reported.

mod delaunay;
mod meb;
mod persistence;

pub use delaunay::delaunay3;
pub use meb::{meb, meb_radius, Ball};
pub use persistence::{
    bars_match, cech_bruteforce, greedy_matching_cost, persistence, Bar, FilteredComplex,
    FilteredSimplex, PersistenceDiagram, CECH_MAX_POINTS,
};

use crate::geometry::linalg::Vec3;
use crate::tensor::Real;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

/// Number of Betti-curve samples per homology dimension.
pub const BETTI_SAMPLES: usize = 47;
/// Packed feature width: 2 entropies + 2 × 47 Betti samples.
pub const TOPO_FEATURE_DIM: usize = 2 + 2 * BETTI_SAMPLES;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("brute-force oracle is limited to {limit} points, got {got}")]
    TooManyPoints { limit: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("non-monotone filtration: {0}")]
    NonMonotone(String),
}

/// Alpha filtration of a Delaunay tetrahedralization: every tetrahedron with
/// all faces, each entering at the MEB radius of its vertices. Monotone by
/// ball containment; enforced exactly against floating-point noise.
pub fn alpha_filtration(
    tets: &[[usize; 4]],
    points: &[Vec3],
) -> Result<FilteredComplex, TopologyError> {
    let mut values: HashMap<Vec<usize>, Real> = HashMap::new();
    for i in 0..points.len() {
        values.insert(vec![i], 0.0);
    }
    // Dimension-ascending sweep so facet values exist when clamping.
    for size in 2..=4usize {
        for tet in tets {
            for combo in combos4(size) {
                let verts: Vec<usize> = combo.iter().map(|&i| tet[i]).collect();
                if values.contains_key(&verts) {
                    continue;
                }
                let coords: Vec<Vec3> = verts.iter().map(|&v| points[v]).collect();
                let mut value = meb_radius(&coords);
                for omit in 0..verts.len() {
                    let mut f = verts.clone();
                    f.remove(omit);
                    value = value.max(values[&f]);
                }
                values.insert(verts, value);
            }
        }
    }
    let simplices = values
        .into_iter()
        .map(|(verts, value)| FilteredSimplex { verts, value })
        .collect();
    FilteredComplex::new(simplices)
}

/// Index combinations of the given size out of a tetrahedron's 4 vertices.
fn combos4(size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u8..16 {
        if mask.count_ones() as usize == size {
            out.push((0..4).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

/// Delaunay triangulation + alpha filtration in one step.
pub fn alpha_complex(points: &[Vec3]) -> Result<FilteredComplex, TopologyError> {
    let tets = delaunay3(points)?;
    alpha_filtration(&tets, points)
}

/// Shannon entropy of the normalized bar-lifetime distribution.
#[derive(Debug, Clone, Copy)]
pub struct Entropy {
    pub value: Real,
    /// True when the diagram was empty (or all lifetimes zero) and the
    /// entropy defaulted to 0.
    pub empty: bool,
}

/// `H = -Σ p_j log(p_j + ε)` with `p_j = ℓ_j / Σ ℓ_i`. Infinite deaths must
/// be capped beforehand.
pub fn topo_entropy(bars: &[Bar], eps: Real) -> Entropy {
    debug_assert!(bars.iter().all(|b| b.death.is_finite()), "cap infinite deaths first");
    let total: Real = bars.iter().map(|b| b.lifetime().max(0.0)).sum();
    if bars.is_empty() || total <= 0.0 {
        return Entropy { value: 0.0, empty: true };
    }
    let mut h = 0.0;
    for b in bars {
        let p = b.lifetime().max(0.0) / total;
        if p > 0.0 {
            h -= p * (p + eps).ln();
        }
    }
    Entropy { value: h.max(0.0), empty: false }
}

/// Replace infinite deaths with `cap`.
pub fn cap_infinite(diagram: &PersistenceDiagram, cap: Real) -> PersistenceDiagram {
    let bars = diagram
        .bars
        .iter()
        .map(|b| Bar { birth: b.birth, death: if b.is_infinite() { cap.max(b.birth) } else { b.death } })
        .collect();
    PersistenceDiagram { dim: diagram.dim, bars }
}

#[derive(Debug, Clone)]
pub struct BettiCurves {
    /// One curve of `BETTI_SAMPLES` live-feature counts per diagram.
    pub curves: Vec<Vec<Real>>,
    /// True when all endpoints coincide and the curves defaulted to zero.
    pub degenerate: bool,
}

/// Betti curves on the joint min-max normalized scale: all finite births and
/// deaths across the diagrams map into [0,1]; `β(t) = #{bars: b ≤ t < d}` at
/// `t_m = (m-1)/(M-1)`. Essential classes count as alive on all of [0,1].
pub fn betti_curve(diagrams: &[PersistenceDiagram], samples: usize) -> BettiCurves {
    let mut lo = Real::INFINITY;
    let mut hi = Real::NEG_INFINITY;
    for d in diagrams {
        for b in &d.bars {
            lo = lo.min(b.birth);
            hi = hi.max(b.birth);
            if !b.is_infinite() {
                lo = lo.min(b.death);
                hi = hi.max(b.death);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() || hi - lo <= 0.0 {
        return BettiCurves {
            curves: diagrams.iter().map(|_| vec![0.0; samples]).collect(),
            degenerate: true,
        };
    }
    let span = hi - lo;
    // Capped-infinite deaths stay alive through t = 1.
    let essential_death = (1.0 as Real).next_up();
    let curves = diagrams
        .iter()
        .map(|d| {
            (0..samples)
                .map(|m| {
                    let t = m as Real / (samples - 1) as Real;
                    d.bars
                        .iter()
                        .filter(|b| {
                            let birth = (b.birth - lo) / span;
                            let death = if b.is_infinite() {
                                essential_death
                            } else {
                                (b.death - lo) / span
                            };
                            birth <= t && t < death
                        })
                        .count() as Real
                })
                .collect()
        })
        .collect();
    BettiCurves { curves, degenerate: false }
}

/// Packed global topological descriptor.
#[derive(Debug, Clone)]
pub struct TopoFeature {
    /// Entropies of the H0 and H1 lifetime distributions.
    pub entropy: [Real; 2],
    /// Betti curves for H0 and H1, `BETTI_SAMPLES` values each.
    pub betti: [Vec<Real>; 2],
}

impl TopoFeature {
    /// Layout: `[H0, H1, β0(t_1..t_47), β1(t_1..t_47)]`, length 96.
    pub fn to_vector(&self) -> Vec<Real> {
        let mut v = Vec::with_capacity(TOPO_FEATURE_DIM);
        v.push(self.entropy[0]);
        v.push(self.entropy[1]);
        v.extend_from_slice(&self.betti[0]);
        v.extend_from_slice(&self.betti[1]);
        debug_assert_eq!(v.len(), TOPO_FEATURE_DIM);
        v
    }
}

/// End-to-end extraction: Delaunay → alpha filtration → persistence (H0, H1)
/// → entropy + Betti curves.
pub fn topo_feature(points: &[Vec3]) -> Result<TopoFeature, TopologyError> {
    let (feature, _) = topo_feature_with_diagrams(points)?;
    Ok(feature)
}

pub fn topo_feature_with_diagrams(
    points: &[Vec3],
) -> Result<(TopoFeature, Vec<PersistenceDiagram>), TopologyError> {
    let complex = alpha_complex(points)?;
    let diagrams = persistence(&complex, 1)?;
    let cap = complex.max_value();
    let entropy = [
        topo_entropy(&cap_infinite(&diagrams[0], cap).bars, 1e-12).value,
        topo_entropy(&cap_infinite(&diagrams[1], cap).bars, 1e-12).value,
    ];
    let curves = betti_curve(&diagrams, BETTI_SAMPLES);
    let feature = TopoFeature {
        entropy,
        betti: [curves.curves[0].clone(), curves.curves[1].clone()],
    };
    Ok((feature, diagrams))
}

/// JSON-facing report: raw diagrams (infinite deaths as `null`), entropies,
/// Betti curves and the packed feature vector.
#[derive(Debug, Clone, Serialize)]
pub struct TopoReport {
    pub diagrams: DimPair<Vec<(Real, Option<Real>)>>,
    pub entropy: [Real; 2],
    pub betti: DimPair<Vec<Real>>,
    pub feature: Vec<Real>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimPair<T> {
    #[serde(rename = "H0")]
    pub h0: T,
    #[serde(rename = "H1")]
    pub h1: T,
}

pub fn topo_report(points: &[Vec3]) -> Result<TopoReport, TopologyError> {
    let (feature, diagrams) = topo_feature_with_diagrams(points)?;
    let raw = |d: &PersistenceDiagram| -> Vec<(Real, Option<Real>)> {
        d.sorted_bars()
            .iter()
            .map(|b| (b.birth, if b.is_infinite() { None } else { Some(b.death) }))
            .collect()
    };
    Ok(TopoReport {
        diagrams: DimPair { h0: raw(&diagrams[0]), h1: raw(&diagrams[1]) },
        entropy: feature.entropy,
        betti: DimPair { h0: feature.betti[0].clone(), h1: feature.betti[1].clone() },
        feature: feature.to_vector(),
    })
}
