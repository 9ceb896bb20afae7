//! Graph-building combinators and parameter initialization shared by the
//! neural blocks. Parameters are referenced by dotted names; each block
//! module declares its [`ParamSpec`]s next to its builder so the two stay
//! in lockstep, and the pipeline's shape audit exercises both.

use crate::tensor::{Bindings, GraphBuilder, NodeId, Real, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Guard inside distance square roots: keeps the adjoint finite (exactly
/// zero) for coincident points while biasing distances by at most 1e-15.
pub const DIST_EPS: Real = 1e-30;

/// Epsilon in cosine-similarity norm denominators.
pub const COS_EPS: Real = 1e-12;

const LAYER_NORM_EPS: Real = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Xavier,
    Zeros,
    Ones,
    Constant(Real),
    /// log(row index + 1) per state column, the usual diagonal-state init.
    StateLog,
}

pub fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec { name: name.into(), shape: shape.to_vec(), init }
}

/// Materialize parameters in name order from one seeded stream.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Bindings {
    let mut sorted: Vec<&ParamSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Bindings::new();
    for s in sorted {
        let numel: usize = s.shape.iter().product();
        let data: Vec<Real> = match s.init {
            Init::Xavier => {
                let (fan_in, fan_out) = match s.shape.as_slice() {
                    [input, output] => (*input, *output),
                    [n] => (*n, *n),
                    other => {
                        let last = *other.last().unwrap_or(&1);
                        (numel / last.max(1), last)
                    }
                };
                let a = (6.0 as Real / (fan_in + fan_out) as Real).sqrt();
                (0..numel).map(|_| rng.random_range(-a..a)).collect()
            }
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::Constant(c) => vec![c; numel],
            Init::StateLog => {
                let cols = *s.shape.last().unwrap_or(&1);
                (0..numel).map(|i| ((i % cols) as Real + 1.0).ln()).collect()
            }
        };
        let prev = out.insert(s.name.clone(), Tensor::from_vec(&s.shape, data));
        assert!(prev.is_none(), "duplicate parameter spec `{}`", s.name);
    }
    out
}

/// `x · W + b` with `W: [in, out]`, bias broadcast over rows.
pub fn linear(b: &mut GraphBuilder, x: NodeId, prefix: &str) -> NodeId {
    let w = b.param(&format!("{prefix}.w"));
    let bias = b.param(&format!("{prefix}.b"));
    let xw = b.matmul(x, w);
    b.add(xw, bias)
}

pub fn linear_specs(prefix: &str, d_in: usize, d_out: usize) -> Vec<ParamSpec> {
    vec![
        spec(format!("{prefix}.w"), &[d_in, d_out], Init::Xavier),
        spec(format!("{prefix}.b"), &[d_out], Init::Zeros),
    ]
}

/// Row-wise layer normalization with learnable gain/offset.
pub fn layer_norm(b: &mut GraphBuilder, x: NodeId, prefix: &str, rows: usize) -> NodeId {
    let gain = b.param(&format!("{prefix}.g"));
    let offset = b.param(&format!("{prefix}.o"));
    let mean = b.reduce_mean(x, 1);
    let mean = b.reshape(mean, &[rows, 1]);
    let centered = b.sub(x, mean);
    let sq = b.mul(centered, centered);
    let var = b.reduce_mean(sq, 1);
    let var = b.reshape(var, &[rows, 1]);
    let var = b.add_const(var, LAYER_NORM_EPS);
    let std = b.sqrt(var);
    let unit = b.div(centered, std);
    let scaled = b.mul(unit, gain);
    b.add(scaled, offset)
}

pub fn layer_norm_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    vec![
        spec(format!("{prefix}.g"), &[d], Init::Ones),
        spec(format!("{prefix}.o"), &[d], Init::Zeros),
    ]
}

/// Two-layer perceptron with a rectifier between.
pub fn mlp2(b: &mut GraphBuilder, x: NodeId, prefix: &str) -> NodeId {
    let h = linear(b, x, &format!("{prefix}.0"));
    let h = b.relu(h);
    linear(b, h, &format!("{prefix}.1"))
}

pub fn mlp2_specs(prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Vec<ParamSpec> {
    let mut specs = linear_specs(&format!("{prefix}.0"), d_in, d_hidden);
    specs.extend(linear_specs(&format!("{prefix}.1"), d_hidden, d_out));
    specs
}

/// Per-row L2 norms as an `[n, 1]` column.
pub fn row_norms(b: &mut GraphBuilder, x: NodeId, rows: usize) -> NodeId {
    let sq = b.mul(x, x);
    let sum = b.reduce_sum(sq, 1);
    let sum = b.add_const(sum, DIST_EPS);
    let norm = b.sqrt(sum);
    b.reshape(norm, &[rows, 1])
}

/// Cosine similarity between the rows of `a` (n×d) and `bm` (m×d): an n×m
/// matrix. Zero-norm rows yield zero similarity via the epsilon denominator.
pub fn cosine_rows(b: &mut GraphBuilder, a: NodeId, bm: NodeId, n: usize, m: usize) -> NodeId {
    let na = row_norms(b, a, n);
    let na = b.add_const(na, COS_EPS);
    let an = b.div(a, na);
    let nb = row_norms(b, bm, m);
    let nb = b.add_const(nb, COS_EPS);
    let bn = b.div(bm, nb);
    let bt = b.transpose(bn);
    b.matmul(an, bt)
}

/// Squared Euclidean distances between rows of `a` (n×3) and `bm` (m×3),
/// computed by explicit differences so the result is exactly non-negative.
pub fn pairwise_sqdist(
    b: &mut GraphBuilder,
    a: NodeId,
    bm: NodeId,
    n: usize,
    m: usize,
) -> NodeId {
    let ar = b.reshape(a, &[n, 1, 3]);
    let br = b.reshape(bm, &[1, m, 3]);
    let diff = b.sub(ar, br);
    let sq = b.mul(diff, diff);
    b.reduce_sum(sq, 2)
}

/// Euclidean distances with a guarded square root.
pub fn pairwise_dist(b: &mut GraphBuilder, a: NodeId, bm: NodeId, n: usize, m: usize) -> NodeId {
    let sq = pairwise_sqdist(b, a, bm, n, m);
    let sq = b.add_const(sq, DIST_EPS);
    b.sqrt(sq)
}

/// Mean over every axis, reducing to a scalar.
pub fn mean_all(b: &mut GraphBuilder, x: NodeId, rank: usize) -> NodeId {
    let mut node = x;
    for _ in 0..rank {
        node = b.reduce_mean(node, 0);
    }
    node
}

pub fn sum_all(b: &mut GraphBuilder, x: NodeId, rank: usize) -> NodeId {
    let mut node = x;
    for _ in 0..rank {
        node = b.reduce_sum(node, 0);
    }
    node
}

/// L2 norm of a flattened tensor (guarded at zero).
pub fn l2_norm(b: &mut GraphBuilder, x: NodeId, rank: usize) -> NodeId {
    let sq = b.mul(x, x);
    let total = sum_all(b, sq, rank);
    let total = b.add_const(total, DIST_EPS);
    b.sqrt(total)
}
