//! Incremental Bowyer–Watson Delaunay tetrahedralization with a symbolic
//! vertex at infinity.
//!
//! The triangulation is seeded from one non-degenerate tetrahedron; every
//! hull facet is completed by an infinite cell sharing the vertex ∞. A point
//! conflicts with a finite cell when it lies inside its circumsphere, and
//! with an infinite cell when it lies strictly outside the hull facet's
//! plane. The conflict cavity is carved out and re-fanned around the new
//! point. Near-degenerate (cospherical/coplanar) decisions abort the pass;
//! the driver retries with a tiny deterministic jitter.

use super::meb::circumsphere;
use super::TopologyError;
use crate::geometry::linalg::{self, Vec3};
use crate::tensor::Real;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INF: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
enum CellGeo {
    Finite { center: Vec3, radius2: Real },
    /// Hull facet plane; conflicts lie on the opposite side from the stored
    /// interior reference sign.
    Infinite { facet: [usize; 3], interior_sign: i8 },
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    verts: [usize; 4],
    geo: CellGeo,
    alive: bool,
}

/// Delaunay tetrahedra over `points` (sorted index quadruples), covering the
/// convex hull. Fails if the input stays degenerate after jitter retries.
pub fn delaunay3(points: &[Vec3]) -> Result<Vec<[usize; 4]>, TopologyError> {
    if points.len() < 4 {
        return Err(TopologyError::TooFewPoints { needed: 4, got: points.len() });
    }
    // Unit-box normalization (a similarity, so the triangulation is
    // unchanged) keeps every predicate tolerance on one scale.
    let (lo, hi) = bounds(points);
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0 as Real, Real::max).max(1e-12);
    let base: Vec<Vec3> = points
        .iter()
        .map(|p| {
            [
                (p[0] - lo[0]) / extent,
                (p[1] - lo[1]) / extent,
                (p[2] - lo[2]) / extent,
            ]
        })
        .collect();

    // Truly flat inputs cannot be rescued by symbolic jitter; report them
    // instead of producing a sliver pancake.
    seed_tetrahedron_tol(&base, 1e-8)
        .map_err(|_| TopologyError::Degenerate("points are coplanar within tolerance".into()))?;

    let mut jitter_mag = 1e-9;
    for attempt in 0..4 {
        let pts = if attempt == 0 {
            base.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7090_d31a ^ attempt as u64);
            let mag = jitter_mag;
            jitter_mag *= 100.0;
            base.iter()
                .map(|p| {
                    [
                        p[0] + mag * rng.random_range(-1.0..1.0),
                        p[1] + mag * rng.random_range(-1.0..1.0),
                        p[2] + mag * rng.random_range(-1.0..1.0),
                    ]
                })
                .collect()
        };
        match bowyer_watson(&pts) {
            Ok(tets) => return Ok(tets),
            Err(TopologyError::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(TopologyError::Degenerate(
        "input remains degenerate after jitter retries".into(),
    ))
}

fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [Real::INFINITY; 3];
    let mut hi = [Real::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

fn orient3d(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> Real {
    linalg::dot(
        linalg::cross(linalg::sub(b, a), linalg::sub(c, a)),
        linalg::sub(d, a),
    )
}

fn bowyer_watson(pts: &[Vec3]) -> Result<Vec<[usize; 4]>, TopologyError> {
    let n = pts.len();
    let seed = seed_tetrahedron(pts)?;
    // Interior reference for hull-facet orientation; the hull only grows,
    // so the seed centroid stays strictly inside.
    let mut interior = [0.0 as Real; 3];
    for &v in &seed {
        interior = linalg::add(interior, pts[v]);
    }
    interior = linalg::scale(interior, 0.25);

    let mut cells: Vec<Cell> = Vec::with_capacity(8 * n);
    let make_cell = |verts: [usize; 4], pts: &[Vec3], interior: Vec3| -> Result<Cell, TopologyError> {
        let inf_count = verts.iter().filter(|&&v| v == INF).count();
        debug_assert!(inf_count <= 1);
        if inf_count == 0 {
            let ball = circumsphere(pts[verts[0]], pts[verts[1]], pts[verts[2]], pts[verts[3]])
                .ok_or_else(|| TopologyError::Degenerate("coplanar tetrahedron".into()))?;
            Ok(Cell {
                verts,
                geo: CellGeo::Finite { center: ball.center, radius2: ball.radius * ball.radius },
                alive: true,
            })
        } else {
            let facet: Vec<usize> = verts.iter().copied().filter(|&v| v != INF).collect();
            let facet = [facet[0], facet[1], facet[2]];
            let o = orient3d(pts[facet[0]], pts[facet[1]], pts[facet[2]], interior);
            if o.abs() <= 1e-13 {
                return Err(TopologyError::Degenerate(
                    "hull facet plane passes through the interior reference".into(),
                ));
            }
            Ok(Cell {
                verts,
                geo: CellGeo::Infinite { facet, interior_sign: if o > 0.0 { 1 } else { -1 } },
                alive: true,
            })
        }
    };

    cells.push(make_cell([seed[0], seed[1], seed[2], seed[3]], pts, interior)?);
    for omit in 0..4 {
        let mut verts = [INF; 4];
        let mut w = 0;
        for (i, &v) in seed.iter().enumerate() {
            if i != omit {
                verts[w] = v;
                w += 1;
            }
        }
        cells.push(make_cell(verts, pts, interior)?);
    }

    let mut order: Vec<usize> = (0..n).filter(|i| !seed.contains(i)).collect();
    order.sort_unstable();

    let mut cavity: Vec<usize> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for &p in &order {
        cavity.clear();
        for (ci, cell) in cells.iter().enumerate() {
            if !cell.alive {
                continue;
            }
            if conflicts(cell, pts[p], pts)? {
                cavity.push(ci);
            }
        }
        if cavity.is_empty() {
            return Err(TopologyError::Degenerate(format!(
                "point {p} conflicts with no cell (duplicate point?)"
            )));
        }
        faces.clear();
        for &ci in &cavity {
            let v = cells[ci].verts;
            for omit in 0..4 {
                let mut f = [0usize; 3];
                let mut w = 0;
                for (i, &vert) in v.iter().enumerate() {
                    if i != omit {
                        f[w] = vert;
                        w += 1;
                    }
                }
                f.sort_unstable();
                faces.push(f);
            }
        }
        faces.sort_unstable();
        for &ci in &cavity {
            cells[ci].alive = false;
        }
        let mut i = 0;
        while i < faces.len() {
            let f = faces[i];
            let mut count = 1;
            while i + count < faces.len() && faces[i + count] == f {
                count += 1;
            }
            if count == 1 {
                cells.push(make_cell([f[0], f[1], f[2], p], pts, interior)?);
            } else if count > 2 {
                return Err(TopologyError::Degenerate(format!(
                    "cavity face {f:?} shared by {count} cells"
                )));
            }
            i += count;
        }
    }

    let mut result: Vec<[usize; 4]> = cells
        .iter()
        .filter(|c| c.alive && c.verts.iter().all(|&v| v != INF))
        .map(|c| {
            let mut v = c.verts;
            v.sort_unstable();
            v
        })
        .collect();
    result.sort_unstable();
    if result.is_empty() {
        return Err(TopologyError::Degenerate(
            "no finite tetrahedra; input may be coplanar".into(),
        ));
    }
    Ok(result)
}

fn conflicts(cell: &Cell, p: Vec3, pts: &[Vec3]) -> Result<bool, TopologyError> {
    match cell.geo {
        CellGeo::Finite { center, radius2 } => {
            let d2 = linalg::dist2(center, p);
            let margin = 1e-13 * (1.0 + radius2);
            if (d2 - radius2).abs() < margin {
                return Err(TopologyError::Degenerate(format!(
                    "point is cospherical with cell {:?}",
                    cell.verts
                )));
            }
            Ok(d2 < radius2)
        }
        CellGeo::Infinite { facet, interior_sign } => {
            let o = orient3d(pts[facet[0]], pts[facet[1]], pts[facet[2]], p);
            if o.abs() <= 1e-13 {
                return Err(TopologyError::Degenerate(format!(
                    "point is coplanar with hull facet {facet:?}"
                )));
            }
            Ok((o > 0.0) != (interior_sign > 0))
        }
    }
}

/// First non-degenerate quadruple: a point, the first sufficiently distant
/// point, the first sufficiently non-collinear point, the first sufficiently
/// non-coplanar point.
fn seed_tetrahedron(pts: &[Vec3]) -> Result<[usize; 4], TopologyError> {
    seed_tetrahedron_tol(pts, 1e-13)
}

fn seed_tetrahedron_tol(pts: &[Vec3], tol: Real) -> Result<[usize; 4], TopologyError> {
    let i0 = 0;
    let i1 = (1..pts.len())
        .find(|&i| linalg::dist2(pts[i0], pts[i]) > tol * tol)
        .ok_or_else(|| TopologyError::Degenerate("all points coincide".into()))?;
    let i2 = (1..pts.len())
        .filter(|&i| i != i1)
        .find(|&i| {
            let c = linalg::cross(linalg::sub(pts[i1], pts[i0]), linalg::sub(pts[i], pts[i0]));
            linalg::norm2(c) > tol * tol
        })
        .ok_or_else(|| TopologyError::Degenerate("all points collinear".into()))?;
    let i3 = (1..pts.len())
        .filter(|&i| i != i1 && i != i2)
        .find(|&i| orient3d(pts[i0], pts[i1], pts[i2], pts[i]).abs() > tol)
        .ok_or_else(|| TopologyError::Degenerate("all points coplanar".into()))?;
    Ok([i0, i1, i2, i3])
}
