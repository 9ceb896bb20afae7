//! Minimum enclosing balls of up to four points, by closed-form support
//! enumeration. The MEB radius of a simplex's vertex set is its entry scale
//! in the filtration: balls of radius α around the vertices share a point
//! exactly when the MEB radius is at most α.

use crate::geometry::linalg::{self, Vec3};
use crate::tensor::Real;

const CONTAIN_TOL: Real = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct Ball {
    pub center: Vec3,
    pub radius: Real,
}

/// Minimum enclosing ball of at most four points. The support of a MEB in
/// 3-space has at most four points, so enumerating balls determined by every
/// pair, triple and the full quadruple and keeping the smallest one that
/// contains all inputs is exact.
pub fn meb(points: &[Vec3]) -> Ball {
    assert!(
        (1..=4).contains(&points.len()),
        "meb expects 1..=4 points, got {}",
        points.len()
    );
    if points.len() == 1 {
        return Ball { center: points[0], radius: 0.0 };
    }

    let mut best: Option<Ball> = None;
    let mut consider = |ball: Ball| {
        let tol = CONTAIN_TOL * (1.0 + ball.radius);
        if points.iter().all(|p| linalg::dist(ball.center, *p) <= ball.radius + tol) {
            match &best {
                Some(b) if b.radius <= ball.radius => {}
                _ => best = Some(ball),
            }
        }
    };

    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let center = linalg::scale(linalg::add(points[i], points[j]), 0.5);
            consider(Ball { center, radius: linalg::dist(points[i], points[j]) / 2.0 });
        }
    }
    if points.len() >= 3 {
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                for l in j + 1..points.len() {
                    if let Some(ball) = circumcircle(points[i], points[j], points[l]) {
                        consider(ball);
                    }
                }
            }
        }
    }
    if points.len() == 4 {
        if let Some(ball) = circumsphere(points[0], points[1], points[2], points[3]) {
            consider(ball);
        }
    }
    best.expect("pair balls always contain two points; one must contain all")
}

pub fn meb_radius(points: &[Vec3]) -> Real {
    meb(points).radius
}

/// Circumscribed circle of a triangle in 3-space; `None` for (near-)collinear
/// inputs, which are covered by the pair candidates.
fn circumcircle(a: Vec3, b: Vec3, c: Vec3) -> Option<Ball> {
    let ab = linalg::sub(b, a);
    let ac = linalg::sub(c, a);
    let n = linalg::cross(ab, ac);
    let n2 = linalg::norm2(n);
    let scale2 = linalg::norm2(ab).max(linalg::norm2(ac));
    if n2 <= 1e-24 * scale2 * scale2 {
        return None;
    }
    let term = linalg::add(
        linalg::scale(linalg::cross(n, ab), linalg::norm2(ac)),
        linalg::scale(linalg::cross(ac, n), linalg::norm2(ab)),
    );
    let center = linalg::add(a, linalg::scale(term, 1.0 / (2.0 * n2)));
    Some(Ball { center, radius: linalg::dist(center, a) })
}

/// Circumscribed sphere of a tetrahedron; `None` for (near-)coplanar inputs.
pub fn circumsphere(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> Option<Ball> {
    // 2(p_i - a)·x = |p_i|² - |a|², i ∈ {b, c, d}.
    let rows = [linalg::sub(b, a), linalg::sub(c, a), linalg::sub(d, a)];
    let m = [
        linalg::scale(rows[0], 2.0),
        linalg::scale(rows[1], 2.0),
        linalg::scale(rows[2], 2.0),
    ];
    let rhs = [
        linalg::norm2(b) - linalg::norm2(a),
        linalg::norm2(c) - linalg::norm2(a),
        linalg::norm2(d) - linalg::norm2(a),
    ];
    // Guard nearly coplanar quadruples: the system determinant is 8·6·vol.
    let vol6 = linalg::dot(rows[0], linalg::cross(rows[1], rows[2]));
    let scale = linalg::norm(rows[0]).max(linalg::norm(rows[1])).max(linalg::norm(rows[2]));
    if vol6.abs() <= 1e-14 * scale * scale * scale {
        return None;
    }
    let center = linalg::solve3(&m, rhs)?;
    Some(Ball { center, radius: linalg::dist(center, a) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_is_half_distance() {
        let r = meb_radius(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn acute_triangle_is_circumradius() {
        // Equilateral, side 1 → circumradius 1/√3.
        let h = (3.0 as Real).sqrt() / 2.0;
        let r = meb_radius(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]]);
        assert!((r - 1.0 / (3.0 as Real).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn obtuse_triangle_is_half_longest_edge() {
        let r = meb_radius(&[[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [1.0, 0.1, 0.0]]);
        assert!((r - 2.0).abs() < 1e-12, "got {r}");
    }

    /// Iterative oracle: minimize max-distance by a shrinking step walk
    /// toward the farthest point (the objective is convex).
    fn meb_oracle(points: &[Vec3]) -> Real {
        let mut center = points[0];
        for p in points {
            center = crate::geometry::linalg::add(center, *p);
        }
        center = crate::geometry::linalg::scale(center, 1.0 / (points.len() + 1) as Real);
        let mut step = 1.0;
        for _ in 0..20_000 {
            let far = points
                .iter()
                .max_by(|a, b| {
                    crate::geometry::linalg::dist2(center, **a)
                        .partial_cmp(&crate::geometry::linalg::dist2(center, **b))
                        .unwrap()
                })
                .unwrap();
            let dir = crate::geometry::linalg::sub(*far, center);
            center = crate::geometry::linalg::add(center, crate::geometry::linalg::scale(dir, step));
            step *= 0.9995;
        }
        points
            .iter()
            .map(|p| crate::geometry::linalg::dist(center, *p))
            .fold(0.0, Real::max)
    }

    #[test]
    fn closed_form_matches_iterative_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..60 {
            let n = 2 + case % 3;
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            let exact = meb_radius(&pts);
            let approx = meb_oracle(&pts);
            assert!(
                (exact - approx).abs() < 2e-4,
                "case {case}: exact {exact} vs oracle {approx}"
            );
            // The oracle can only overshoot the optimum.
            assert!(approx >= exact - 1e-6);
        }
    }
}
