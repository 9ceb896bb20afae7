//! Filtered complexes, Z/2 boundary-matrix reduction, and the brute-force
//! Čech oracle.

use super::meb::meb_radius;
use super::TopologyError;
use crate::geometry::linalg::Vec3;
use crate::tensor::Real;
use std::collections::HashMap;

/// Simplex with sorted vertex indices and its filtration entry value.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSimplex {
    pub verts: Vec<usize>,
    pub value: Real,
}

impl FilteredSimplex {
    pub fn dim(&self) -> usize {
        self.verts.len() - 1
    }
}

/// Simplicial filtration: faces of every simplex are present, face values
/// never exceed coface values, vertices enter at 0.
#[derive(Debug, Clone)]
pub struct FilteredComplex {
    simplices: Vec<FilteredSimplex>,
}

impl FilteredComplex {
    /// Validate and sort by (value, dim, vertices).
    pub fn new(mut simplices: Vec<FilteredSimplex>) -> Result<Self, TopologyError> {
        let mut by_verts: HashMap<Vec<usize>, Real> = HashMap::with_capacity(simplices.len());
        for s in &simplices {
            debug_assert!(s.verts.windows(2).all(|w| w[0] < w[1]), "unsorted simplex");
            by_verts.insert(s.verts.clone(), s.value);
        }
        for s in &simplices {
            if s.verts.len() == 1 {
                continue;
            }
            for omit in 0..s.verts.len() {
                let mut f = s.verts.clone();
                f.remove(omit);
                match by_verts.get(&f) {
                    None => {
                        return Err(TopologyError::NonMonotone(format!(
                            "missing face {f:?} of {:?}",
                            s.verts
                        )))
                    }
                    Some(&fv) if fv > s.value => {
                        return Err(TopologyError::NonMonotone(format!(
                            "face {f:?} value {fv} exceeds coface {:?} value {}",
                            s.verts, s.value
                        )))
                    }
                    _ => {}
                }
            }
        }
        simplices.sort_by(|a, b| {
            (a.value, a.verts.len(), &a.verts)
                .partial_cmp(&(b.value, b.verts.len(), &b.verts))
                .expect("finite filtration values")
        });
        Ok(FilteredComplex { simplices })
    }

    pub fn simplices(&self) -> &[FilteredSimplex] {
        &self.simplices
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    /// Largest filtration value in the complex.
    pub fn max_value(&self) -> Real {
        self.simplices.iter().map(|s| s.value).fold(0.0, Real::max)
    }
}

/// Persistence bar; `death` is `INFINITY` for essential classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub birth: Real,
    pub death: Real,
}

impl Bar {
    pub fn lifetime(&self) -> Real {
        self.death - self.birth
    }

    pub fn is_infinite(&self) -> bool {
        self.death.is_infinite()
    }
}

#[derive(Debug, Clone)]
pub struct PersistenceDiagram {
    pub dim: usize,
    pub bars: Vec<Bar>,
}

impl PersistenceDiagram {
    /// Bars sorted by (birth, death) for stable comparison.
    pub fn sorted_bars(&self) -> Vec<Bar> {
        let mut bars = self.bars.clone();
        bars.sort_by(|a, b| (a.birth, a.death).partial_cmp(&(b.birth, b.death)).unwrap());
        bars
    }
}

/// Standard Z/2 column reduction over simplices sorted by (value, dim, index).
/// Paired pivots give finite bars, unpaired creators give infinite bars;
/// zero-length bars are dropped.
pub fn persistence(
    complex: &FilteredComplex,
    max_dim: usize,
) -> Result<Vec<PersistenceDiagram>, TopologyError> {
    let simplices = complex.simplices();
    let mut position: HashMap<&[usize], usize> = HashMap::with_capacity(simplices.len());
    for (i, s) in simplices.iter().enumerate() {
        position.insert(s.verts.as_slice(), i);
    }

    // pivot row → column that holds it.
    let mut pivot_col: HashMap<usize, usize> = HashMap::new();
    let mut stored: Vec<Option<Vec<usize>>> = vec![None; simplices.len()];
    let mut positive = vec![false; simplices.len()];
    let mut killed = vec![false; simplices.len()];
    let mut diagrams: Vec<PersistenceDiagram> =
        (0..=max_dim).map(|dim| PersistenceDiagram { dim, bars: Vec::new() }).collect();

    let mut face = Vec::new();
    for (j, s) in simplices.iter().enumerate() {
        if s.verts.len() == 1 {
            positive[j] = true;
            continue;
        }
        let mut column: Vec<usize> = (0..s.verts.len())
            .map(|omit| {
                face.clear();
                face.extend(s.verts.iter().copied());
                face.remove(omit);
                *position.get(face.as_slice()).expect("validated complex has all faces")
            })
            .collect();
        column.sort_unstable();

        loop {
            let Some(&low) = column.last() else { break };
            let Some(&other) = pivot_col.get(&low) else { break };
            column = symmetric_difference(&column, stored[other].as_ref().unwrap());
        }

        if column.is_empty() {
            positive[j] = true;
            continue;
        }
        let low = *column.last().unwrap();
        pivot_col.insert(low, j);
        stored[j] = Some(column);
        killed[low] = true;
        let dim = simplices[low].verts.len() - 1;
        let (birth, death) = (simplices[low].value, s.value);
        if dim <= max_dim && death > birth {
            diagrams[dim].bars.push(Bar { birth, death });
        }
    }

    for (i, s) in simplices.iter().enumerate() {
        let dim = s.verts.len() - 1;
        if positive[i] && !killed[i] && dim <= max_dim {
            diagrams[dim].bars.push(Bar { birth: s.value, death: Real::INFINITY });
        }
    }
    for d in &mut diagrams {
        d.bars.sort_by(|a, b| (a.birth, a.death).partial_cmp(&(b.birth, b.death)).unwrap());
    }
    Ok(diagrams)
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Maximum input size for the combinatorial Čech oracle.
pub const CECH_MAX_POINTS: usize = 48;

/// Brute-force Čech filtration over every vertex subset of size ≤
/// `max_dim + 2` (capped at tetrahedra), with minimum-enclosing-ball entry
/// values, truncated at `r_max`. Persistence agrees with the Delaunay-based
/// production path by the nerve correspondence.
pub fn cech_bruteforce(
    points: &[Vec3],
    max_dim: usize,
    r_max: Real,
) -> Result<Vec<PersistenceDiagram>, TopologyError> {
    let n = points.len();
    if n > CECH_MAX_POINTS {
        return Err(TopologyError::TooManyPoints { limit: CECH_MAX_POINTS, got: n });
    }
    if n == 0 {
        return Err(TopologyError::TooFewPoints { needed: 1, got: 0 });
    }
    let max_size = (max_dim + 2).min(4);

    let mut simplices: Vec<FilteredSimplex> = Vec::new();
    let mut values: HashMap<Vec<usize>, Real> = HashMap::new();
    let mut verts_buf: Vec<usize> = Vec::new();
    for size in 1..=max_size {
        combinations(n, size, &mut verts_buf, &mut |verts| {
            let coords: Vec<Vec3> = verts.iter().map(|&i| points[i]).collect();
            let mut value = if size == 1 { 0.0 } else { meb_radius(&coords) };
            // Exact monotonicity under floating-point noise.
            if size > 1 {
                for omit in 0..verts.len() {
                    let mut f = verts.to_vec();
                    f.remove(omit);
                    value = value.max(values[&f]);
                }
            }
            values.insert(verts.to_vec(), value);
            simplices.push(FilteredSimplex { verts: verts.to_vec(), value });
        });
    }
    simplices.retain(|s| s.value <= r_max);
    let complex = FilteredComplex::new(simplices)?;
    persistence(&complex, max_dim)
}

fn combinations(n: usize, size: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, size: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if buf.len() == size {
            f(buf);
            return;
        }
        let remaining = size - buf.len();
        for i in start..=n - remaining {
            buf.push(i);
            rec(i + 1, n, size, buf, f);
            buf.pop();
        }
    }
    if size > n {
        return;
    }
    buf.clear();
    rec(0, n, size, buf, f);
}

/// Multiset equality of bars within `tol` on both endpoints (infinite deaths
/// must match exactly).
pub fn bars_match(a: &PersistenceDiagram, b: &PersistenceDiagram, tol: Real) -> bool {
    if a.bars.len() != b.bars.len() {
        return false;
    }
    let sa = a.sorted_bars();
    let sb = b.sorted_bars();
    sa.iter().zip(&sb).all(|(x, y)| {
        let births = (x.birth - y.birth).abs() <= tol;
        let deaths = match (x.is_infinite(), y.is_infinite()) {
            (true, true) => true,
            (false, false) => (x.death - y.death).abs() <= tol,
            _ => false,
        };
        births && deaths
    })
}

/// Greedy bottleneck-style matching cost between two diagrams: bars may match
/// each other (cost = max endpoint difference) or the diagonal
/// (cost = lifetime / 2). Upper-bounds the true bottleneck distance.
pub fn greedy_matching_cost(a: &PersistenceDiagram, b: &PersistenceDiagram) -> Real {
    let mut order: Vec<usize> = (0..a.bars.len()).collect();
    order.sort_by(|&i, &j| {
        b_lifetime(&a.bars[j]).partial_cmp(&b_lifetime(&a.bars[i])).unwrap()
    });
    let mut used = vec![false; b.bars.len()];
    let mut worst = 0.0 as Real;
    for &i in &order {
        let bar = a.bars[i];
        let mut best_cost = b_lifetime(&bar) / 2.0; // diagonal
        let mut best_j = None;
        for (j, other) in b.bars.iter().enumerate() {
            if used[j] {
                continue;
            }
            let cost = pair_cost(&bar, other);
            if cost < best_cost {
                best_cost = cost;
                best_j = Some(j);
            }
        }
        if let Some(j) = best_j {
            used[j] = true;
        }
        worst = worst.max(best_cost);
    }
    for (j, other) in b.bars.iter().enumerate() {
        if !used[j] {
            worst = worst.max(b_lifetime(other) / 2.0);
        }
    }
    worst
}

fn b_lifetime(bar: &Bar) -> Real {
    if bar.is_infinite() {
        Real::INFINITY
    } else {
        bar.death - bar.birth
    }
}

fn pair_cost(a: &Bar, b: &Bar) -> Real {
    let db = (a.birth - b.birth).abs();
    let dd = match (a.is_infinite(), b.is_infinite()) {
        (true, true) => 0.0,
        (false, false) => (a.death - b.death).abs(),
        _ => Real::INFINITY,
    };
    db.max(dd)
}
