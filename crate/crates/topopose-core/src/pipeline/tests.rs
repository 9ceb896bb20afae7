use super::*;
use crate::geometry::{synth, ShapeKind, ShapeSpec};
use crate::tensor::Real;

fn micro_instance(seed: u64, cfg: &ModelConfig) -> TrainInstance {
    let spec = ShapeSpec::desk_scale(ShapeKind::from_category((seed % 6) as usize).unwrap(), cfg.n, seed);
    let result = synth(&spec).unwrap();
    TrainInstance::prepare(result.cloud, (seed % 6) as usize, result.pose, cfg).unwrap()
}

#[test]
fn micro_forward_shapes_follow_config_arithmetic() {
    let cfg = ModelConfig::micro();
    cfg.validate().unwrap();
    let params = init_params(&cfg, 3);
    let instance = micro_instance(1, &cfg);
    let (pred, kpts) = forward(&instance.cloud, None, instance.category, &params, &cfg).unwrap();

    assert_eq!(kpts.coords.len(), cfg.n_k);
    assert_eq!(kpts.features.shape(), &[cfg.n_k, cfg.d]);
    assert_eq!(kpts.heatmap.shape(), &[cfg.n_k, cfg.n]);
    assert_eq!(pred.nocs.shape(), &[cfg.n_k, 3]);
    assert_eq!(pred.recon_offsets.shape(), &[cfg.n_k, cfg.offsets_per_keypoint, 3]);
    assert_eq!(pred.recon_cloud.shape(), &[cfg.n_k * cfg.offsets_per_keypoint, 3]);
    pred.pose.validate().unwrap();
    assert!(pred.nocs.all_finite());
}

#[test]
fn extract_features_concatenation_layout() {
    let mut cfg = ModelConfig::micro();
    cfg.n = 48;
    let mut params = init_params(&cfg, 5);
    // Zero the fused branch: zero appearance leaves the first d_r columns 0.
    let instance = micro_instance(2, &cfg);
    let cloud = crate::geometry::downsample(&instance.cloud, 48, 0).unwrap();
    let f_o = extract_features(&cloud, None, &params, &cfg).unwrap();
    assert_eq!(f_o.shape(), &[48, cfg.d]);
    for row in 0..48 {
        for col in 0..cfg.d_r {
            assert_eq!(f_o.at2(row, col), 0.0, "appearance block must be zero");
        }
    }

    // Zeroed fusion weights kill the geometric block as well.
    params.insert("fuse.w".into(), crate::tensor::Tensor::zeros(&[cfg.d_p + cfg.d_t, cfg.d_p]));
    params.insert("fuse.b".into(), crate::tensor::Tensor::zeros(&[cfg.d_p]));
    let f_o = extract_features(&cloud, None, &params, &cfg).unwrap();
    assert!(f_o.data().iter().all(|&v| v == 0.0));
}

#[test]
fn paper_config_width_is_256() {
    let cfg = ModelConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.d, 256);
    assert_eq!(cfg.d_r + cfg.d_p, 256);
    // Full-width extraction on a real cloud.
    let spec = ShapeSpec::new(ShapeKind::Torus, 1024, 9);
    let cloud = synth(&spec).unwrap().cloud;
    let params = init_params(&cfg, 0);
    let f_o = extract_features(&cloud, None, &params, &cfg).unwrap();
    assert_eq!(f_o.shape(), &[1024, 256]);
}

#[test]
fn topology_ablation_switch_keeps_shapes_valid() {
    let mut cfg = ModelConfig::micro();
    cfg.use_topology = false;
    let params = init_params(&cfg, 7);
    let instance = micro_instance(3, &cfg);
    let (pred, kpts) = forward(&instance.cloud, None, instance.category, &params, &cfg).unwrap();
    assert_eq!(kpts.features.shape(), &[cfg.n_k, cfg.d]);
    pred.pose.validate().unwrap();
}

#[test]
fn forward_is_bit_deterministic() {
    let cfg = ModelConfig::micro();
    let params = init_params(&cfg, 11);
    let instance = micro_instance(4, &cfg);
    let (a, ka) = forward(&instance.cloud, None, instance.category, &params, &cfg).unwrap();
    let (b, kb) = forward(&instance.cloud, None, instance.category, &params, &cfg).unwrap();
    let bits = |t: &crate::tensor::Tensor| -> Vec<u64> {
        t.data().iter().map(|v| (*v as f64).to_bits()).collect()
    };
    assert_eq!(bits(&a.nocs), bits(&b.nocs));
    assert_eq!(bits(&a.recon_cloud), bits(&b.recon_cloud));
    assert_eq!(bits(&ka.heatmap), bits(&kb.heatmap));
    for i in 0..3 {
        assert_eq!(a.pose.translation[i].to_bits(), b.pose.translation[i].to_bits());
        for j in 0..3 {
            assert_eq!(a.pose.rotation[i][j].to_bits(), b.pose.rotation[i][j].to_bits());
        }
    }
}

#[test]
fn ablation_variants_run_under_one_harness() {
    let instance_cfg = ModelConfig::micro();
    let instance = micro_instance(5, &instance_cfg);
    for (kind, backward, serial) in [
        (BlockKindConfig::TwinMamba, BackwardBranchConfig::Cf, crate::serialization::SerializationMethod::Hilbert),
        (BlockKindConfig::TwinMamba, BackwardBranchConfig::Tf, crate::serialization::SerializationMethod::Hilbert),
        (BlockKindConfig::TwinMamba, BackwardBranchConfig::Ra, crate::serialization::SerializationMethod::Hilbert),
        (BlockKindConfig::BiMamba, BackwardBranchConfig::Cf, crate::serialization::SerializationMethod::ZOrder),
        (BlockKindConfig::Attention, BackwardBranchConfig::Cf, crate::serialization::SerializationMethod::None),
    ] {
        let mut cfg = ModelConfig::micro();
        cfg.block_kind = kind;
        cfg.backward_branch = backward;
        cfg.serialization = serial;
        let params = init_params(&cfg, 13);
        let (pred, _) = forward(&instance.cloud, None, instance.category, &params, &cfg)
            .unwrap_or_else(|e| panic!("{kind:?}/{backward:?}: {e}"));
        pred.pose.validate().unwrap();
    }
}

#[test]
fn zero_learning_rate_freezes_the_loss() {
    let mut cfg = ModelConfig::micro();
    cfg.n = 64;
    cfg.n_blocks = 1;
    let dataset = vec![micro_instance(6, &cfg)];
    let tc = TrainConfig {
        steps: 4,
        batch: 1,
        lr_min: 1e-300,
        lr_max: 2e-300,
        seed: 1,
        ..TrainConfig::default()
    };
    let result = train_micro(&dataset, &tc, &cfg).unwrap();
    let first = result.loss_curve[0];
    for v in &result.loss_curve {
        assert!((v - first).abs() < 1e-12, "curve moved: {v} vs {first}");
    }
}

#[test]
fn same_seed_training_is_bitwise_reproducible() {
    let mut cfg = ModelConfig::micro();
    cfg.n = 64;
    cfg.n_blocks = 1;
    let dataset = vec![micro_instance(7, &cfg), micro_instance(8, &cfg)];
    let tc = TrainConfig { steps: 5, batch: 2, seed: 42, ..TrainConfig::default() };
    let a = train_micro(&dataset, &tc, &cfg).unwrap();
    let b = train_micro(&dataset, &tc, &cfg).unwrap();
    let curve_bits = |r: &TrainResult| -> Vec<u64> {
        r.loss_curve.iter().map(|v| (*v as f64).to_bits()).collect()
    };
    assert_eq!(curve_bits(&a), curve_bits(&b));
    assert_eq!(crate::weights::to_bytes(&a.params), crate::weights::to_bytes(&b.params));
}

#[test]
fn short_training_reduces_the_loss() {
    let mut cfg = ModelConfig::micro();
    cfg.n = 64;
    let dataset = synth_dataset(2, cfg.n, 100, &cfg).unwrap();
    let tc = TrainConfig { steps: 40, batch: 2, seed: 3, ..TrainConfig::default() };
    let result = train_micro(&dataset, &tc, &cfg).unwrap();
    let first = result.loss_curve[0];
    let last = *result.loss_curve.last().unwrap();
    assert!(last < first, "loss did not decrease: {first} -> {last}");
    assert!(result.loss_curve.iter().all(|v| v.is_finite()));
}

#[test]
fn learning_rate_schedule_is_triangular_within_bounds() {
    let tc = TrainConfig { steps: 400, ..TrainConfig::default() };
    let mut seen_max = 0.0 as Real;
    for step in 0..tc.steps {
        let lr = tc.learning_rate(step);
        assert!(lr >= tc.lr_min - 1e-18 && lr <= tc.lr_max + 1e-18);
        seen_max = seen_max.max(lr);
    }
    assert!(seen_max > 0.9 * tc.lr_max, "cycle never approaches lr_max");
    assert!((tc.learning_rate(0) - tc.lr_min).abs() < 1e-12);
}

#[test]
fn config_validation_catches_inconsistencies() {
    let mut cfg = ModelConfig::default();
    cfg.d = 100;
    assert!(cfg.validate().is_err());
    let mut cfg = ModelConfig::default();
    cfg.d_t = 64;
    assert!(cfg.validate().is_err());
    let mut cfg = ModelConfig::micro();
    cfg.k = cfg.n_k;
    assert!(cfg.validate().is_err());
    let tc = TrainConfig { lr_min: 1e-3, lr_max: 1e-4, ..TrainConfig::default() };
    assert!(tc.validate().is_err());

    // Round trip through JSON with partial fields.
    let cfg: ModelConfig = serde_json::from_str(r#"{"n": 256, "n_blocks": 3}"#).unwrap();
    assert_eq!(cfg.n, 256);
    assert_eq!(cfg.n_blocks, 3);
    assert_eq!(cfg.d, 256);
}
