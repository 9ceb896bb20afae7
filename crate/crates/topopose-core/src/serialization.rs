//! Keypoint ordering along 3D space-filling curves: Hilbert (axis-rotation
//! transpose construction) and Z-order bit interleaving, over a quantized
//! bounding-box grid.

use crate::geometry::linalg::Vec3;
use crate::tensor::Real;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SerializationError {
    #[error("grid coordinate {coord} out of range for {bits} bits per axis")]
    OutOfRange { coord: u64, bits: u8 },
    #[error("bits per axis must be in 1..=32, got {0}")]
    BadBits(u8),
    #[error("unknown serialization method `{0}` (expected hilbert, zorder or none)")]
    BadMethod(String),
}

/// Position along a space-filling curve on a `2^bits`-per-axis grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CurveCode {
    pub code: u128,
    pub bits_per_axis: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SerializationMethod {
    #[default]
    Hilbert,
    ZOrder,
    None,
}

impl FromStr for SerializationMethod {
    type Err = SerializationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hilbert" => Ok(SerializationMethod::Hilbert),
            "zorder" => Ok(SerializationMethod::ZOrder),
            "none" => Ok(SerializationMethod::None),
            other => Err(SerializationError::BadMethod(other.to_string())),
        }
    }
}

fn check(grid: [u64; 3], bits: u8) -> Result<(), SerializationError> {
    if bits == 0 || bits > 32 {
        return Err(SerializationError::BadBits(bits));
    }
    for &c in &grid {
        if c >> bits != 0 {
            return Err(SerializationError::OutOfRange { coord: c, bits });
        }
    }
    Ok(())
}

/// Map the axis-aligned bounding box of `coords` onto the integer grid
/// `[0, 2^bits - 1]^3`, floor-rounded; a degenerate axis maps to 0.
pub fn quantize(coords: &[Vec3], bits: u8) -> Vec<[u64; 3]> {
    let top = ((1u64 << bits) - 1) as Real;
    let mut lo = [Real::INFINITY; 3];
    let mut hi = [Real::NEG_INFINITY; 3];
    for p in coords {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    coords
        .iter()
        .map(|p| {
            let mut g = [0u64; 3];
            for a in 0..3 {
                let span = hi[a] - lo[a];
                if span > 0.0 {
                    let cell = ((p[a] - lo[a]) / span * top).floor();
                    g[a] = (cell.max(0.0) as u64).min(top as u64);
                }
            }
            g
        })
        .collect()
}

/// Hilbert index via the transpose/Gray-code construction: consecutive codes
/// visit grid cells one unit step apart.
pub fn hilbert_index(grid: [u64; 3], bits: u8) -> Result<CurveCode, SerializationError> {
    check(grid, bits)?;
    let mut x = grid;
    let m = 1u64 << (bits - 1);

    // Inverse undo: strip the per-level rotations, top bit down.
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode.
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0u64;
    q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in &mut x {
        *xi ^= t;
    }

    // Interleave the transposed bits, axis 0 most significant.
    let mut code: u128 = 0;
    for k in (0..bits).rev() {
        for xi in &x {
            code = (code << 1) | ((xi >> k) & 1) as u128;
        }
    }
    Ok(CurveCode { code, bits_per_axis: bits })
}

/// Z-order (Morton) index: bit interleave `x0 y0 z0 x1 y1 z1 …` with x least
/// significant.
pub fn zorder_index(grid: [u64; 3], bits: u8) -> Result<CurveCode, SerializationError> {
    check(grid, bits)?;
    let mut code: u128 = 0;
    for k in 0..bits {
        for (axis, &c) in grid.iter().enumerate() {
            code |= (((c >> k) & 1) as u128) << (3 * k as u32 + axis as u32);
        }
    }
    Ok(CurveCode { code, bits_per_axis: bits })
}

/// Traversal order of the keypoints: indices sorted by curve code, ties by
/// original index (stable), so the result is always a permutation of
/// `0..coords.len()`. `None` keeps the input order.
pub fn serialize_keypoints(
    coords: &[Vec3],
    method: SerializationMethod,
    bits: u8,
) -> Result<Vec<usize>, SerializationError> {
    if matches!(method, SerializationMethod::None) {
        return Ok((0..coords.len()).collect());
    }
    let grid = quantize(coords, bits);
    let mut keyed: Vec<(u128, usize)> = grid
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let code = match method {
                SerializationMethod::Hilbert => hilbert_index(g, bits)?,
                SerializationMethod::ZOrder => zorder_index(g, bits)?,
                SerializationMethod::None => unreachable!(),
            };
            Ok((code.code, i))
        })
        .collect::<Result<_, SerializationError>>()?;
    keyed.sort_by_key(|&(code, idx)| (code, idx));
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// Inverse permutation: `out[perm[i]] = i`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_cells(bits: u8) -> Vec<[u64; 3]> {
        let n = 1u64 << bits;
        let mut out = Vec::with_capacity((n * n * n) as usize);
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    #[test]
    fn curve_origin_is_zero() {
        for bits in 1..=10u8 {
            assert_eq!(hilbert_index([0, 0, 0], bits).unwrap().code, 0);
            assert_eq!(zorder_index([0, 0, 0], bits).unwrap().code, 0);
        }
    }

    #[test]
    fn hilbert_bijective_and_adjacent_up_to_four_bits() {
        for bits in 1..=4u8 {
            let cells = all_cells(bits);
            let total = cells.len() as u128;
            let mut by_code = vec![None; cells.len()];
            for cell in &cells {
                let code = hilbert_index(*cell, bits).unwrap().code;
                assert!(code < total, "code {code} out of range at {bits} bits");
                assert!(by_code[code as usize].is_none(), "duplicate code {code}");
                by_code[code as usize] = Some(*cell);
            }
            // Every consecutive pair of codes differs by one unit step on
            // exactly one axis.
            for w in by_code.windows(2) {
                let (a, b) = (w[0].unwrap(), w[1].unwrap());
                let diff: u64 = (0..3).map(|i| a[i].abs_diff(b[i])).sum();
                assert_eq!(diff, 1, "non-adjacent cells {a:?} -> {b:?} at {bits} bits");
            }
        }
    }

    #[test]
    fn zorder_bijective_up_to_four_bits() {
        for bits in 1..=4u8 {
            let cells = all_cells(bits);
            let mut seen = std::collections::HashSet::new();
            for cell in &cells {
                let code = zorder_index(*cell, bits).unwrap().code;
                assert!(code < cells.len() as u128);
                assert!(seen.insert(code));
            }
        }
    }

    #[test]
    fn zorder_single_bit_interleave() {
        assert_eq!(zorder_index([1, 0, 0], 1).unwrap().code, 1);
        assert_eq!(zorder_index([0, 1, 0], 1).unwrap().code, 2);
        assert_eq!(zorder_index([0, 0, 1], 1).unwrap().code, 4);
    }

    #[test]
    fn out_of_range_coordinates_fail() {
        assert!(matches!(
            hilbert_index([2, 0, 0], 1),
            Err(SerializationError::OutOfRange { .. })
        ));
        assert!(matches!(
            zorder_index([16, 0, 0], 4),
            Err(SerializationError::OutOfRange { .. })
        ));
    }

    #[test]
    fn quantize_endpoints_and_midpoint() {
        let coords = vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [0.5, 1.0, 1.5]];
        let grid = quantize(&coords, 1);
        assert_eq!(grid[0], [0, 0, 0]);
        assert_eq!(grid[1], [1, 1, 1]);
        // Box midpoint floor-rounds to zero at one bit per axis.
        assert_eq!(grid[2], [0, 0, 0]);

        let same = quantize(&vec![[2.0, 2.0, 2.0]; 4], 10);
        assert!(same.iter().all(|g| *g == [0, 0, 0]));
    }

    #[test]
    fn none_method_is_identity() {
        let coords: Vec<Vec3> = (0..17).map(|i| [i as Real, 0.0, 0.0]).collect();
        let order = serialize_keypoints(&coords, SerializationMethod::None, 10).unwrap();
        assert_eq!(order, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn duplicates_preserve_original_relative_order() {
        let coords = vec![[1.0, 1.0, 1.0]; 6];
        for method in [SerializationMethod::Hilbert, SerializationMethod::ZOrder] {
            let order = serialize_keypoints(&coords, method, 10).unwrap();
            assert_eq!(order, vec![0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn collinear_keypoints_zorder_sorts_by_coordinate() {
        // On a line the grid degenerates to one axis; spreading the bits of a
        // single coordinate is monotone, so Z-order equals coordinate sort.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut coords: Vec<Vec3> = (0..96).map(|i| [i as Real * 0.01, 0.0, 0.0]).collect();
        // Shuffle so the expected permutation is non-trivial.
        for i in (1..coords.len()).rev() {
            let j = rng.random_range(0..=i);
            coords.swap(i, j);
        }
        let mut by_coord: Vec<usize> = (0..96).collect();
        by_coord.sort_by(|&a, &b| coords[a][0].partial_cmp(&coords[b][0]).unwrap());
        let order = serialize_keypoints(&coords, SerializationMethod::ZOrder, 10).unwrap();
        assert_eq!(order, by_coord);
    }

    #[test]
    fn collinear_keypoints_hilbert_visits_blocks_contiguously() {
        // The Hilbert recursion reverses sub-curve orientations, so a line is
        // not traversed in strict coordinate order; its locality guarantee is
        // that every aligned power-of-two block of line cells is visited as
        // one contiguous run.
        for axis in 0..3usize {
            let bits = 6u8;
            let n = 1u64 << bits;
            let ranks: Vec<u128> = (0..n)
                .map(|g| {
                    let mut cell = [0u64; 3];
                    cell[axis] = g;
                    hilbert_index(cell, bits).unwrap().code
                })
                .collect();
            let mut order: Vec<usize> = (0..n as usize).collect();
            order.sort_by_key(|&i| ranks[i]);
            let mut pos = vec![0usize; n as usize];
            for (rank, &cell) in order.iter().enumerate() {
                pos[cell] = rank;
            }
            let mut block = 2usize;
            while block <= n as usize {
                for start in (0..n as usize).step_by(block) {
                    let slice = &pos[start..start + block];
                    let lo = *slice.iter().min().unwrap();
                    let hi = *slice.iter().max().unwrap();
                    assert_eq!(
                        hi - lo + 1,
                        block,
                        "axis {axis}: block {start}..{} not contiguous",
                        start + block
                    );
                }
                block *= 2;
            }
        }
    }

    #[test]
    fn permutation_valid_on_1000_random_sets() {
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=96);
            let coords: Vec<Vec3> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            let method = match seed % 3 {
                0 => SerializationMethod::Hilbert,
                1 => SerializationMethod::ZOrder,
                _ => SerializationMethod::None,
            };
            let order = serialize_keypoints(&coords, method, 10).unwrap();
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>(), "seed {seed}");
        }
    }

    #[test]
    fn translation_leaves_permutation_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let coords: Vec<Vec3> = (0..48)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let shifted: Vec<Vec3> = coords
            .iter()
            .map(|p| [p[0] + 5.0, p[1] - 3.0, p[2] + 0.25])
            .collect();
        for method in [SerializationMethod::Hilbert, SerializationMethod::ZOrder] {
            let a = serialize_keypoints(&coords, method, 10).unwrap();
            let b = serialize_keypoints(&shifted, method, 10).unwrap();
            assert_eq!(a, b, "{method:?}");
        }
    }

    proptest! {
        #[test]
        fn inverse_permutation_round_trips(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1usize..64);
            let coords: Vec<Vec3> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            let order = serialize_keypoints(&coords, SerializationMethod::Hilbert, 10).unwrap();
            let inv = invert_permutation(&order);
            for i in 0..n {
                prop_assert_eq!(order[inv[i]], i);
                prop_assert_eq!(inv[order[i]], i);
            }
        }
    }
}
