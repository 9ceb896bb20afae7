//! Selective-state-space sequence blocks: the causal scan core, the
//! twin-branch block with channel-flip (and token-flip / random-arrangement)
//! backward paths over shared parameters, and the BiMamba / self-attention
//! ablation variants behind the same interface.

use crate::nn::{self, ParamSpec};
use crate::tensor::{GraphBuilder, NodeId, Real, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct MambaConfig {
    /// Token width (d).
    pub feat_dim: usize,
    /// Stream width after the input projection (d_inner, usually 2d).
    pub inner_dim: usize,
    /// Diagonal state size per channel (d_state).
    pub state_dim: usize,
    /// Depthwise causal convolution width.
    pub conv_width: usize,
}

impl MambaConfig {
    pub fn new(feat_dim: usize) -> Self {
        MambaConfig { feat_dim, inner_dim: 2 * feat_dim, state_dim: 16, conv_width: 4 }
    }
}

pub fn mamba_param_specs(prefix: &str, cfg: &MambaConfig) -> Vec<ParamSpec> {
    let (d, di, ds) = (cfg.feat_dim, cfg.inner_dim, cfg.state_dim);
    vec![
        nn::spec(format!("{prefix}.in_proj.w"), &[d, 2 * di], nn::Init::Xavier),
        nn::spec(format!("{prefix}.conv.w"), &[cfg.conv_width, di], nn::Init::Xavier),
        nn::spec(format!("{prefix}.conv.b"), &[di], nn::Init::Zeros),
        nn::spec(format!("{prefix}.dt.w"), &[di, di], nn::Init::Xavier),
        // softplus(-2) ≈ 0.13 keeps the initial state memory moderate.
        nn::spec(format!("{prefix}.dt.b"), &[di], nn::Init::Constant(-2.0)),
        nn::spec(format!("{prefix}.b_proj.w"), &[di, ds], nn::Init::Xavier),
        nn::spec(format!("{prefix}.c_proj.w"), &[di, ds], nn::Init::Xavier),
        // A = -exp(a_log) stays strictly negative for any parameter value.
        nn::spec(format!("{prefix}.a_log"), &[di, ds], nn::Init::StateLog),
        nn::spec(format!("{prefix}.skip"), &[di], nn::Init::Ones),
        nn::spec(format!("{prefix}.out_proj.w"), &[di, d], nn::Init::Xavier),
    ]
}

/// One causal selective-scan pass over an L×d sequence:
/// `h_t = exp(Δ_t ⊙ A) · h_{t-1} + (Δ_t ⊙ B_t) · x_t`, `y_t = C_t · h_t + D ⊙ x_t`,
/// gated by `silu(z_t)` and projected back to d.
pub fn build_mamba(
    b: &mut GraphBuilder,
    seq: NodeId,
    prefix: &str,
    len: usize,
    cfg: &MambaConfig,
) -> NodeId {
    let di = cfg.inner_dim;
    let cw = cfg.conv_width;

    let in_w = b.param(&format!("{prefix}.in_proj.w"));
    let xz = b.matmul(seq, in_w);
    let x = b.slice(xz, 1, 0, di);
    let z = b.slice(xz, 1, di, di);

    // Depthwise causal convolution as a sum of shifted, per-channel-scaled
    // slices over a zero-padded stream.
    let conv_w = b.param(&format!("{prefix}.conv.w"));
    let conv_b = b.param(&format!("{prefix}.conv.b"));
    let pad = b.constant(Tensor::zeros(&[cw - 1, di]));
    let padded = b.concat(&[pad, x], 0);
    let mut acc = None;
    for w in 0..cw {
        let tap = b.slice(conv_w, 0, w, 1);
        let window = b.slice(padded, 0, w, len);
        let term = b.mul(window, tap);
        acc = Some(match acc {
            None => term,
            Some(prev) => b.add(prev, term),
        });
    }
    let conv = b.add(acc.expect("conv_width >= 1"), conv_b);
    let x = b.silu(conv);

    let dt = nn::linear(b, x, &format!("{prefix}.dt"));
    let delta = b.softplus(dt);
    let b_w = b.param(&format!("{prefix}.b_proj.w"));
    let c_w = b.param(&format!("{prefix}.c_proj.w"));
    let b_t = b.matmul(x, b_w);
    let c_t = b.matmul(x, c_w);

    let a_log = b.param(&format!("{prefix}.a_log"));
    let a_exp = b.exp(a_log);
    let a = b.neg(a_exp);

    let delta3 = b.reshape(delta, &[len, di, 1]);
    let decay_log = b.mul(delta3, a);
    let decay = b.exp(decay_log);
    let x3 = b.reshape(x, &[len, di, 1]);
    let gated_x = b.mul(delta3, x3);
    let b3 = b.reshape(b_t, &[len, 1, cfg.state_dim]);
    let drive = b.mul(gated_x, b3);

    let h = b.scan(decay, drive);

    let c3 = b.reshape(c_t, &[len, 1, cfg.state_dim]);
    let read = b.mul(h, c3);
    let y = b.reduce_sum(read, 2);
    let skip = b.param(&format!("{prefix}.skip"));
    let skipped = b.mul(x, skip);
    let y = b.add(y, skipped);

    let gate = b.silu(z);
    let y = b.mul(y, gate);
    let out_w = b.param(&format!("{prefix}.out_proj.w"));
    b.matmul(y, out_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    TwinMamba,
    BiMamba,
    Attention,
}

/// Transform applied around the second TwinMamba branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardBranch {
    /// Channel flipping: reverse the feature axis, token order preserved.
    ChannelFlip,
    /// Token flipping: reverse the sequence, channels preserved.
    TokenFlip,
    /// Fixed random permutation of the channels.
    RandomArrangement,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockConfig {
    pub mamba: MambaConfig,
    pub kind: BlockKind,
    pub backward: BackwardBranch,
    /// Seed for the random channel arrangement (per block).
    pub arrangement_seed: u64,
}

impl BlockConfig {
    pub fn twin(feat_dim: usize) -> Self {
        BlockConfig {
            mamba: MambaConfig::new(feat_dim),
            kind: BlockKind::TwinMamba,
            backward: BackwardBranch::ChannelFlip,
            arrangement_seed: 0,
        }
    }
}

pub fn block_param_specs(prefix: &str, cfg: &BlockConfig) -> Vec<ParamSpec> {
    let d = cfg.mamba.feat_dim;
    let mut specs = Vec::new();
    match cfg.kind {
        BlockKind::TwinMamba => {
            // Pre-norm on the branch input; one parameter set serves both
            // branches.
            specs.extend(nn::layer_norm_specs(&format!("{prefix}.norm"), d));
            specs.extend(mamba_param_specs(&format!("{prefix}.mamba"), &cfg.mamba));
            specs.extend(nn::linear_specs(&format!("{prefix}.fuse"), 2 * d, d));
        }
        BlockKind::BiMamba => {
            specs.extend(nn::layer_norm_specs(&format!("{prefix}.norm"), d));
            specs.extend(mamba_param_specs(&format!("{prefix}.mamba_fwd"), &cfg.mamba));
            specs.extend(mamba_param_specs(&format!("{prefix}.mamba_bwd"), &cfg.mamba));
            specs.extend(nn::linear_specs(&format!("{prefix}.fuse"), 2 * d, d));
        }
        BlockKind::Attention => {
            specs.extend(nn::layer_norm_specs(&format!("{prefix}.ln_attn"), d));
            for name in ["q", "k", "v", "out"] {
                specs.extend(nn::linear_specs(&format!("{prefix}.attn.{name}"), d, d));
            }
            specs.extend(nn::layer_norm_specs(&format!("{prefix}.ln_ff"), d));
            specs.extend(nn::mlp2_specs(&format!("{prefix}.ff"), d, 2 * d, d));
        }
    }
    specs
}

fn arrangement(seed: u64, d: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

fn permute_columns(b: &mut GraphBuilder, x: NodeId, perm: &[usize]) -> NodeId {
    let t = b.transpose(x);
    let g = b.gather(t, perm.to_vec());
    b.transpose(g)
}

/// One aggregation block over an L×d token sequence. TwinMamba runs the scan
/// forward and along a transformed second branch with the *same* parameters,
/// then fuses per token and adds the pre-block residual.
pub fn build_block(
    b: &mut GraphBuilder,
    seq: NodeId,
    prefix: &str,
    len: usize,
    cfg: &BlockConfig,
) -> NodeId {
    let d = cfg.mamba.feat_dim;
    match cfg.kind {
        BlockKind::TwinMamba => {
            // Pre-norm keeps the stacked residual stream bounded; the
            // residual itself stays on the raw pre-block tokens.
            let normed = nn::layer_norm(b, seq, &format!("{prefix}.norm"), len);
            let fwd = build_mamba(b, normed, &format!("{prefix}.mamba"), len, &cfg.mamba);
            let bwd = match cfg.backward {
                BackwardBranch::ChannelFlip => {
                    let flipped = b.reverse_last(normed);
                    let out = build_mamba(b, flipped, &format!("{prefix}.mamba"), len, &cfg.mamba);
                    b.reverse_last(out)
                }
                BackwardBranch::TokenFlip => {
                    let rev: Vec<usize> = (0..len).rev().collect();
                    let flipped = b.gather(normed, rev.clone());
                    let out = build_mamba(b, flipped, &format!("{prefix}.mamba"), len, &cfg.mamba);
                    b.gather(out, rev)
                }
                BackwardBranch::RandomArrangement => {
                    let perm = arrangement(cfg.arrangement_seed, d);
                    let inv = crate::serialization::invert_permutation(&perm);
                    let mixed = permute_columns(b, normed, &perm);
                    let out = build_mamba(b, mixed, &format!("{prefix}.mamba"), len, &cfg.mamba);
                    permute_columns(b, out, &inv)
                }
            };
            let cat = b.concat(&[fwd, bwd], 1);
            let fused = nn::linear(b, cat, &format!("{prefix}.fuse"));
            b.add(seq, fused)
        }
        BlockKind::BiMamba => {
            let normed = nn::layer_norm(b, seq, &format!("{prefix}.norm"), len);
            let fwd = build_mamba(b, normed, &format!("{prefix}.mamba_fwd"), len, &cfg.mamba);
            let rev: Vec<usize> = (0..len).rev().collect();
            let flipped = b.gather(normed, rev.clone());
            let out = build_mamba(b, flipped, &format!("{prefix}.mamba_bwd"), len, &cfg.mamba);
            let bwd = b.gather(out, rev);
            let cat = b.concat(&[fwd, bwd], 1);
            let fused = nn::linear(b, cat, &format!("{prefix}.fuse"));
            b.add(seq, fused)
        }
        BlockKind::Attention => {
            let normed = nn::layer_norm(b, seq, &format!("{prefix}.ln_attn"), len);
            let q = nn::linear(b, normed, &format!("{prefix}.attn.q"));
            let k = nn::linear(b, normed, &format!("{prefix}.attn.k"));
            let v = nn::linear(b, normed, &format!("{prefix}.attn.v"));
            let kt = b.transpose(k);
            let scores = b.matmul(q, kt);
            let scores = b.scale(scores, 1.0 / (d as Real).sqrt());
            let attn = b.softmax(scores, 1);
            let ctx = b.matmul(attn, v);
            let ctx = nn::linear(b, ctx, &format!("{prefix}.attn.out"));
            let mid = b.add(seq, ctx);
            let normed = nn::layer_norm(b, mid, &format!("{prefix}.ln_ff"), len);
            let ff = nn::mlp2(b, normed, &format!("{prefix}.ff"));
            b.add(mid, ff)
        }
    }
}
