//! Small fixed-size vector/matrix helpers used across geometry, topology
//! and metrics.

use crate::tensor::Real;

pub type Vec3 = [Real; 3];
pub type Mat3 = [[Real; 3]; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: Real) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> Real {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm2(a: Vec3) -> Real {
    dot(a, a)
}

pub fn norm(a: Vec3) -> Real {
    norm2(a).sqrt()
}

pub fn dist2(a: Vec3, b: Vec3) -> Real {
    norm2(sub(a, b))
}

pub fn dist(a: Vec3, b: Vec3) -> Real {
    dist2(a, b).sqrt()
}

pub fn mat_identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat_apply(a: &Mat3, v: Vec3) -> Vec3 {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

pub fn mat_det(a: &Mat3) -> Real {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn mat_trace(a: &Mat3) -> Real {
    a[0][0] + a[1][1] + a[2][2]
}

/// Solve a 3×3 linear system by Gaussian elimination with partial pivoting.
/// Returns `None` for (numerically) singular systems.
pub fn solve3(a: &Mat3, b: Vec3) -> Option<Vec3> {
    let mut m = [
        [a[0][0], a[0][1], a[0][2], b[0]],
        [a[1][0], a[1][1], a[1][2], b[1]],
        [a[2][0], a[2][1], a[2][2], b[2]],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for c in col..4 {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = m[row][3];
        for c in row + 1..3 {
            acc -= m[row][c] * x[c];
        }
        if m[row][row].abs() < 1e-300 {
            return None;
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}
