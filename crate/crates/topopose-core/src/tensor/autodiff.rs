//! Reverse-mode differentiation over [`Graph`] and the finite-difference
//! gradient checker.

use std::collections::BTreeMap;

use super::graph::{Graph, OpKind};
use super::kernels as k;
use super::{Bindings, Real, Tensor, TensorError};

/// Result of a backward sweep: forward outputs plus gradients of the chosen
/// scalar output with respect to every named leaf (inputs and parameters).
#[derive(Debug)]
pub struct BackwardPass {
    pub outputs: BTreeMap<String, Tensor>,
    pub gradients: BTreeMap<String, Tensor>,
}

impl Graph {
    /// Gradients of the scalar output `output` w.r.t. all named leaves.
    /// Leaves that do not influence the output get zero gradients.
    pub fn backward(&self, output: &str, bindings: &Bindings) -> Result<BackwardPass, TensorError> {
        let values = self.run_forward(bindings)?;
        let out_id = self.output_id(output)?;
        if !values[out_id].is_scalar() {
            return Err(TensorError::NonScalarOutput {
                output: output.to_string(),
                shape: values[out_id].shape().to_vec(),
            });
        }

        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[out_id] = Some(Tensor::full(values[out_id].shape(), 1.0));

        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = adjoints[id].take() else { continue };
            self.push_adjoints(id, &grad, &values, &mut adjoints);
            // Re-install for leaves so gradients can be collected below.
            if matches!(self.nodes[id].op, OpKind::Input(_) | OpKind::Param(_)) {
                adjoints[id] = Some(grad);
            }
        }

        let mut gradients = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let OpKind::Input(name) | OpKind::Param(name) = &node.op {
                let g = adjoints[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(values[id].shape()));
                gradients.insert(name.clone(), g);
            }
        }
        Ok(BackwardPass { outputs: self.collect_outputs(&values)?, gradients })
    }

    fn push_adjoints(
        &self,
        id: usize,
        grad: &Tensor,
        values: &[Tensor],
        adjoints: &mut [Option<Tensor>],
    ) {
        let node = &self.nodes[id];
        let input = |i: usize| -> &Tensor { &values[node.inputs[i]] };
        let send = |slot: usize, delta: Tensor, adjoints: &mut [Option<Tensor>]| {
            let target = node.inputs[slot];
            match &mut adjoints[target] {
                Some(acc) => {
                    debug_assert_eq!(acc.shape(), delta.shape());
                    let summed: Vec<Real> =
                        acc.data().iter().zip(delta.data()).map(|(a, d)| a + d).collect();
                    *acc = Tensor::from_vec(delta.shape(), summed);
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &node.op {
            OpKind::Input(_) | OpKind::Param(_) | OpKind::Constant(_) => {}
            OpKind::Add => {
                send(0, k::unbroadcast(grad, input(0).shape()), adjoints);
                send(1, k::unbroadcast(grad, input(1).shape()), adjoints);
            }
            OpKind::Sub => {
                send(0, k::unbroadcast(grad, input(0).shape()), adjoints);
                let neg = k::unary(grad, |x| -x);
                send(1, k::unbroadcast(&neg, input(1).shape()), adjoints);
            }
            OpKind::Mul => {
                let (a, b) = (input(0), input(1));
                let ga = k::binary_broadcast(grad, b, grad.shape(), |g, y| g * y);
                let gb = k::binary_broadcast(grad, a, grad.shape(), |g, x| g * x);
                send(0, k::unbroadcast(&ga, a.shape()), adjoints);
                send(1, k::unbroadcast(&gb, b.shape()), adjoints);
            }
            OpKind::Div => {
                let (a, b) = (input(0), input(1));
                let ga = k::binary_broadcast(grad, b, grad.shape(), |g, y| g / y);
                // -g·a/b²: compute at broadcast shape in two steps.
                let gxa = k::binary_broadcast(grad, a, grad.shape(), |g, x| g * x);
                let gb = k::binary_broadcast(&gxa, b, grad.shape(), |gx, y| -gx / (y * y));
                send(0, k::unbroadcast(&ga, a.shape()), adjoints);
                send(1, k::unbroadcast(&gb, b.shape()), adjoints);
            }
            OpKind::MatMul => {
                let (a, b) = (input(0), input(1));
                let bt = k::transpose2(b);
                let at = k::transpose2(a);
                send(0, k::matmul(grad, &bt), adjoints);
                send(1, k::matmul(&at, grad), adjoints);
            }
            OpKind::Concat(axis) => {
                let shape = values[id].shape();
                let (outer, _, inner) = k::axis_split(shape, *axis);
                let mut start = 0usize;
                for (slot, &inp) in node.inputs.iter().enumerate() {
                    let ext = values[inp].shape()[*axis];
                    let total_ext = shape[*axis];
                    let mut data = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        let base = (o * total_ext + start) * inner;
                        data.extend_from_slice(&grad.data()[base..base + ext * inner]);
                    }
                    send(slot, Tensor::from_vec(values[inp].shape(), data), adjoints);
                    start += ext;
                }
            }
            OpKind::Slice { axis, start, len } => {
                let x = input(0);
                let (outer, ext, inner) = k::axis_split(x.shape(), *axis);
                let mut data = vec![0.0; x.numel()];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * ext + start) * inner;
                    data[dst..dst + len * inner].copy_from_slice(&grad.data()[src..src + len * inner]);
                }
                send(0, Tensor::from_vec(x.shape(), data), adjoints);
            }
            OpKind::Reshape(_) => {
                send(0, Tensor::from_vec(input(0).shape(), grad.data().to_vec()), adjoints);
            }
            OpKind::Transpose => send(0, k::transpose2(grad), adjoints),
            OpKind::ReverseLast => {
                let last = *grad.shape().last().unwrap();
                let mut data = grad.data().to_vec();
                for row in data.chunks_exact_mut(last.max(1)) {
                    row.reverse();
                }
                send(0, Tensor::from_vec(grad.shape(), data), adjoints);
            }
            OpKind::Gather(indices) => {
                let x = input(0);
                let rows = x.shape()[0];
                let row_len = x.numel() / rows.max(1);
                let mut data = vec![0.0; x.numel()];
                for (r, &i) in indices.iter().enumerate() {
                    let src = &grad.data()[r * row_len..(r + 1) * row_len];
                    let dst = &mut data[i * row_len..(i + 1) * row_len];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
                send(0, Tensor::from_vec(x.shape(), data), adjoints);
            }
            OpKind::Exp => {
                let y = &values[id];
                send(0, zip_mul(grad, y), adjoints);
            }
            OpKind::Log => {
                let x = input(0);
                send(0, zip2(grad, x, |g, x| g / x), adjoints);
            }
            OpKind::Sqrt => {
                let y = &values[id];
                send(0, zip2(grad, y, |g, y| g / (2.0 * y)), adjoints);
            }
            OpKind::Softplus => {
                let x = input(0);
                send(0, zip2(grad, x, |g, x| g * k::sigmoid(x)), adjoints);
            }
            OpKind::Silu => {
                let x = input(0);
                send(
                    0,
                    zip2(grad, x, |g, x| {
                        let s = k::sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    }),
                    adjoints,
                );
            }
            OpKind::Relu => {
                let x = input(0);
                send(0, zip2(grad, x, |g, x| if x > 0.0 { g } else { 0.0 }), adjoints);
            }
            OpKind::LeakyRelu(slope) => {
                let (x, s) = (input(0), *slope);
                send(0, zip2(grad, x, move |g, x| if x > 0.0 { g } else { s * g }), adjoints);
            }
            OpKind::Scale(c) => {
                let c = *c;
                send(0, k::unary(grad, move |g| c * g), adjoints);
            }
            OpKind::AddConst(_) => send(0, grad.clone(), adjoints),
            OpKind::MaxConst(c) => {
                let (x, c) = (input(0), *c);
                send(0, zip2(grad, x, move |g, x| if x > c { g } else { 0.0 }), adjoints);
            }
            OpKind::Softmax(axis) => {
                let y = &values[id];
                let (outer, ext, inner) = k::axis_split(y.shape(), *axis);
                let mut data = vec![0.0; y.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * ext * inner + i;
                        let mut dot = 0.0;
                        for e in 0..ext {
                            let idx = base + e * inner;
                            dot += grad.data()[idx] * y.data()[idx];
                        }
                        for e in 0..ext {
                            let idx = base + e * inner;
                            data[idx] = y.data()[idx] * (grad.data()[idx] - dot);
                        }
                    }
                }
                send(0, Tensor::from_vec(y.shape(), data), adjoints);
            }
            OpKind::ReduceSum(axis) | OpKind::ReduceMean(axis) => {
                let x = input(0);
                let (outer, ext, inner) = k::axis_split(x.shape(), *axis);
                let scale = if matches!(node.op, OpKind::ReduceMean(_)) {
                    1.0 / ext as Real
                } else {
                    1.0
                };
                let mut data = vec![0.0; x.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let g = grad.data()[o * inner + i] * scale;
                        for e in 0..ext {
                            data[o * ext * inner + e * inner + i] = g;
                        }
                    }
                }
                send(0, Tensor::from_vec(x.shape(), data), adjoints);
            }
            OpKind::ReduceMax(axis) | OpKind::ReduceMin(axis) => {
                let x = input(0);
                let is_max = matches!(node.op, OpKind::ReduceMax(_));
                let (outer, ext, inner) = k::axis_split(x.shape(), *axis);
                let mut data = vec![0.0; x.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * ext * inner + i;
                        // First extremum wins; ties routed deterministically.
                        let mut best = 0usize;
                        for e in 1..ext {
                            let v = x.data()[base + e * inner];
                            let b = x.data()[base + best * inner];
                            if (is_max && v > b) || (!is_max && v < b) {
                                best = e;
                            }
                        }
                        data[base + best * inner] = grad.data()[o * inner + i];
                    }
                }
                send(0, Tensor::from_vec(x.shape(), data), adjoints);
            }
            OpKind::Scan => {
                // Reverse recurrence: λ_t = g_t + a_{t+1} ⊙ λ_{t+1};
                // ∂/∂a_t = λ_t ⊙ h_{t-1}, ∂/∂b_t = λ_t, with h_0 = 0.
                let a = input(0);
                let h = &values[id];
                let steps = a.shape()[0];
                let ch = a.numel() / steps.max(1);
                let mut da = vec![0.0; a.numel()];
                let mut db = vec![0.0; a.numel()];
                let mut lam = vec![0.0 as Real; ch];
                for t in (0..steps).rev() {
                    for c in 0..ch {
                        let i = t * ch + c;
                        let next = if t + 1 < steps { a.data()[(t + 1) * ch + c] * lam[c] } else { 0.0 };
                        lam[c] = grad.data()[i] + next;
                        db[i] = lam[c];
                        da[i] = if t > 0 { lam[c] * h.data()[(t - 1) * ch + c] } else { 0.0 };
                    }
                }
                send(0, Tensor::from_vec(a.shape(), da), adjoints);
                send(1, Tensor::from_vec(a.shape(), db), adjoints);
            }
        }
    }
}

fn zip_mul(g: &Tensor, y: &Tensor) -> Tensor {
    zip2(g, y, |a, b| a * b)
}

fn zip2(a: &Tensor, b: &Tensor, f: impl Fn(Real, Real) -> Real) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Per-parameter comparison of analytic gradients against central finite
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: Real,
    pub worst_component: usize,
    pub components: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: Real,
    pub rtol: Real,
}

impl GradCheckReport {
    pub fn all_within(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.rtol)
    }

    pub fn failures(&self) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| e.max_rel_err > self.rtol).collect()
    }

    pub fn max_rel_err(&self) -> Real {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, Real::max)
    }
}

/// Relative discrepancy with an absolute floor: central differences of an
/// O(1) output cannot resolve gradients below ~|f|·ε/h ≈ 1e-10, so
/// components that small are compared absolutely against the floor instead
/// of amplifying roundoff noise. A genuinely wrong adjoint still shows up at
/// ~|a|/floor, far above any practical rtol.
pub(crate) fn rel_err(a: Real, n: Real) -> Real {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-4)
}

/// Compare analytic gradients of `output` against central finite differences
/// for every parameter leaf, component by component.
pub fn check_gradients(
    graph: &Graph,
    output: &str,
    bindings: &Bindings,
    step: Real,
    rtol: Real,
) -> Result<GradCheckReport, TensorError> {
    let pass = graph.backward(output, bindings)?;
    let out_id = graph.output_id(output)?;
    let mut entries = Vec::new();
    for name in graph.param_names() {
        let analytic = &pass.gradients[&name];
        let base = bindings[&name].clone();
        let mut max_rel = 0.0;
        let mut worst = 0;
        for i in 0..base.numel() {
            let mut probe = bindings.clone();
            let mut hi = base.data().to_vec();
            hi[i] += step;
            probe.insert(name.clone(), Tensor::from_vec(base.shape(), hi));
            let f_hi = graph.run_forward(&probe)?[out_id].item();
            let mut lo = base.data().to_vec();
            lo[i] -= step;
            probe.insert(name.clone(), Tensor::from_vec(base.shape(), lo));
            let f_lo = graph.run_forward(&probe)?[out_id].item();
            let numeric = (f_hi - f_lo) / (2.0 * step);
            let e = rel_err(analytic.data()[i], numeric);
            if e > max_rel {
                max_rel = e;
                worst = i;
            }
        }
        entries.push(GradCheckEntry {
            name,
            max_rel_err: max_rel,
            worst_component: worst,
            components: base.numel(),
        });
    }
    Ok(GradCheckReport { entries, step, rtol })
}
