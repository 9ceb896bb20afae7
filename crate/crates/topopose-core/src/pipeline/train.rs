//! Micro-scale training: full-graph reverse-mode gradients, Adam with a
//! triangular cyclic learning rate, deterministic given the seed.

use super::{
    build_forward, compute_routing, heads_config, instance_bindings, topo_row, ModelConfig,
    PipelineError, TrainConfig,
};
use crate::geometry::{synth, PointCloud, Pose, ShapeKind, ShapeSpec};
use crate::heads::{build_losses, LossInputs, LossWeights};
use crate::tensor::{Bindings, GraphBuilder, Real, Tensor};
use std::collections::BTreeMap;

/// One training instance with its precomputed, step-invariant data.
#[derive(Debug, Clone)]
pub struct TrainInstance {
    pub cloud: PointCloud,
    pub category: usize,
    pub gt_pose: Pose,
    topo: Tensor,
}

impl TrainInstance {
    pub fn prepare(
        cloud: PointCloud,
        category: usize,
        gt_pose: Pose,
        cfg: &ModelConfig,
    ) -> Result<Self, PipelineError> {
        let topo = topo_row(&cloud, cfg)?;
        Ok(TrainInstance { cloud, category, gt_pose, topo })
    }
}

/// Desk-scale synthetic dataset cycling through the six categories.
pub fn synth_dataset(
    count: usize,
    points: usize,
    seed: u64,
    cfg: &ModelConfig,
) -> Result<Vec<TrainInstance>, PipelineError> {
    (0..count)
        .map(|i| {
            let category = i % 6;
            let kind = ShapeKind::from_category(category).expect("category in range");
            let spec = ShapeSpec::desk_scale(kind, points, seed.wrapping_add(i as u64));
            let result = synth(&spec)?;
            TrainInstance::prepare(result.cloud, category, result.pose, cfg)
        })
        .collect()
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: Bindings,
    /// Batch-mean total loss per step.
    pub loss_curve: Vec<Real>,
}

struct Adam {
    m: BTreeMap<String, Vec<Real>>,
    v: BTreeMap<String, Vec<Real>>,
    t: usize,
}

impl Adam {
    fn new() -> Self {
        Adam { m: BTreeMap::new(), v: BTreeMap::new(), t: 0 }
    }

    fn step(
        &mut self,
        params: &mut Bindings,
        grads: &BTreeMap<String, Tensor>,
        lr: Real,
        tc: &TrainConfig,
    ) {
        self.t += 1;
        let bias1 = 1.0 - tc.beta1.powi(self.t as i32);
        let bias2 = 1.0 - tc.beta2.powi(self.t as i32);
        let names: Vec<String> = params.keys().cloned().collect();
        for name in names {
            let Some(grad) = grads.get(&name) else { continue };
            let tensor = params.get_mut(&name).expect("key from params");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.numel()]);
            let mut data = tensor.data().to_vec();
            for i in 0..data.len() {
                let g = grad.data()[i];
                m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g;
                v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + tc.eps);
            }
            *tensor = Tensor::from_vec(grad.shape(), data);
        }
    }
}

/// Adam on the total loss over the dataset. Each step rebuilds per-instance
/// graphs with routing from a probe pass, accumulates batch-mean gradients,
/// and records the batch-mean loss. Bit-reproducible for a fixed seed.
pub fn train_micro(
    dataset: &[TrainInstance],
    tc: &TrainConfig,
    cfg: &ModelConfig,
) -> Result<TrainResult, PipelineError> {
    cfg.validate()?;
    tc.validate()?;
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let weights = LossWeights::default();
    let mut params = super::init_params(cfg, tc.seed);
    let mut adam = Adam::new();
    let mut loss_curve = Vec::with_capacity(tc.steps);

    for step in 0..tc.steps {
        let mut grad_sum: BTreeMap<String, Vec<Real>> = BTreeMap::new();
        let mut loss_sum = 0.0;
        let batch = tc.batch.min(dataset.len());
        for j in 0..batch {
            let instance = &dataset[(step * batch + j) % dataset.len()];
            let routing =
                compute_routing(&instance.cloud, None, &instance.topo, &params, cfg)?;

            let mut b = GraphBuilder::new();
            let nodes = build_forward(&mut b, &routing, instance.category, cfg)?;
            let inputs = LossInputs {
                heads: nodes.heads,
                kpt_coords: nodes.detect.coords,
                cloud: b.input("cloud"),
                n_k: cfg.n_k,
                n_points: instance.cloud.len(),
            };
            let losses = build_losses(&mut b, &inputs, &instance.gt_pose, &weights, &heads_config(cfg));
            b.output("loss.total", losses.total);
            let graph = b.finish();

            let mut bindings = params.clone();
            instance_bindings(&instance.cloud, None, &instance.topo, cfg, &mut bindings)?;
            let pass = graph.backward("loss.total", &bindings)?;
            let loss = pass.outputs["loss.total"].item();
            if !loss.is_finite() {
                return Err(PipelineError::NonFiniteLoss { step });
            }
            loss_sum += loss;
            for (name, grad) in &pass.gradients {
                if !params.contains_key(name) {
                    continue;
                }
                let slot = grad_sum.entry(name.clone()).or_insert_with(|| vec![0.0; grad.numel()]);
                for (acc, g) in slot.iter_mut().zip(grad.data()) {
                    *acc += *g;
                }
            }
        }

        let scale = 1.0 / batch as Real;
        let grads: BTreeMap<String, Tensor> = grad_sum
            .into_iter()
            .map(|(name, mut data)| {
                for v in &mut data {
                    *v *= scale;
                }
                let shape = params[&name].shape().to_vec();
                (name, Tensor::from_vec(&shape, data))
            })
            .collect();
        adam.step(&mut params, &grads, tc.learning_rate(step), tc);
        loss_curve.push(loss_sum * scale);
    }

    Ok(TrainResult { params, loss_curve })
}
