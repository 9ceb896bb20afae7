//! Raw computation kernels shared by forward evaluation and the adjoints.

use super::{Real, Tensor};

/// Right-aligned broadcast of two shapes, NumPy-style: paired extents must be
/// equal or one of them 1; missing leading axes count as 1.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if ea == eb || eb == 1 {
            out[i] = ea;
        } else if ea == 1 {
            out[i] = eb;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides; broadcast axes (extent 1 where the output extent is
/// larger, or missing leading axes) get stride 0.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = s;
        acc *= shape[i];
    }
    strides
}

/// Elementwise binary op with broadcasting. Shapes are assumed compatible.
pub(crate) fn binary_broadcast(
    a: &Tensor,
    b: &Tensor,
    out_shape: &[usize],
    f: impl Fn(Real, Real) -> Real,
) -> Tensor {
    let numel: usize = out_shape.iter().product();
    // Fast path: identical shapes.
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_vec(out_shape, data);
    }
    let sa = broadcast_strides(a.shape(), out_shape);
    let sb = broadcast_strides(b.shape(), out_shape);
    let mut idx = vec![0usize; out_shape.len()];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(f(a.data()[oa], b.data()[ob]));
        // Odometer increment over the output index.
        for axis in (0..out_shape.len()).rev() {
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
            oa -= sa[axis] * out_shape[axis];
            ob -= sb[axis] * out_shape[axis];
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Sum `grad` down to `shape` over the axes that were broadcast.
pub(crate) fn unbroadcast(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out_numel: usize = shape.iter().product();
    let strides = broadcast_strides(shape, grad.shape());
    let gshape = grad.shape();
    let mut idx = vec![0usize; gshape.len()];
    let mut off = 0usize;
    let mut data = vec![0.0; out_numel];
    for g in grad.data() {
        data[off] += *g;
        for axis in (0..gshape.len()).rev() {
            idx[axis] += 1;
            off += strides[axis];
            if idx[axis] < gshape[axis] {
                break;
            }
            idx[axis] = 0;
            off -= strides[axis] * gshape[axis];
        }
    }
    Tensor::from_vec(shape, data)
}

pub(crate) fn unary(a: &Tensor, f: impl Fn(Real) -> Real) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_vec(a.shape(), data)
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a.data()[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub(crate) fn transpose2(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::from_vec(&[n, m], out)
}

/// Decompose a shape around `axis` into (outer, extent, inner) loop bounds.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let red = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, red, inner)
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

pub(crate) fn softplus(x: Real) -> Real {
    // Stable log(1 + e^x).
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
