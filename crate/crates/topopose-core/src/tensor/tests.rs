use super::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bind(pairs: &[(&str, Tensor)]) -> Bindings {
    pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

#[test]
fn doubling_identity_and_flat_softmax() {
    let mut b = GraphBuilder::new();
    let x = b.input("x");
    let y = b.add(x, x);
    b.output("y", y);
    let g = b.finish();
    let out = g.evaluate(&bind(&[("x", Tensor::from_vec(&[2], vec![1.0, 2.0]))])).unwrap();
    assert_eq!(out["y"].data(), &[2.0, 4.0]);

    let mut b = GraphBuilder::new();
    let x = b.input("x");
    let s = b.softmax(x, 0);
    b.output("s", s);
    let g = b.finish();
    let out = g.evaluate(&bind(&[("x", Tensor::zeros(&[3]))])).unwrap();
    for v in out["s"].data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let mut b = GraphBuilder::new();
    let m = b.input("m");
    let v = b.input("v");
    let y = b.matmul(m, v);
    b.output("y", y);
    let g = b.finish();
    let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let vec = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]);
    let out = g.evaluate(&bind(&[("m", eye), ("v", vec)])).unwrap();
    assert_eq!(out["y"].data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn backward_power_rule_and_bilinearity() {
    let mut b = GraphBuilder::new();
    let x = b.param("x");
    let y = b.mul(x, x);
    b.output("y", y);
    let g = b.finish();
    let pass = g.backward("y", &bind(&[("x", Tensor::scalar(3.0))])).unwrap();
    assert!((pass.gradients["x"].item() - 6.0).abs() < 1e-12);

    let mut b = GraphBuilder::new();
    let a = b.param("a");
    let v = b.input("b");
    let prod = b.mul(a, v);
    let y = b.reduce_sum(prod, 0);
    b.output("y", y);
    let g = b.finish();
    let pass = g
        .backward(
            "y",
            &bind(&[
                ("a", Tensor::from_vec(&[2], vec![1.0, 2.0])),
                ("b", Tensor::from_vec(&[2], vec![3.0, 4.0])),
            ]),
        )
        .unwrap();
    assert_eq!(pass.gradients["a"].data(), &[3.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_output() {
    let mut b = GraphBuilder::new();
    let x = b.param("x");
    let y = b.add(x, x);
    b.output("y", y);
    let g = b.finish();
    let err = g.backward("y", &bind(&[("x", Tensor::from_vec(&[2], vec![1.0, 2.0]))]));
    assert!(matches!(err, Err(TensorError::NonScalarOutput { .. })));
}

#[test]
fn shape_mismatch_names_the_node() {
    let mut b = GraphBuilder::new();
    let x = b.input("x");
    let y = b.input("y");
    let m = b.matmul(x, y);
    b.output("m", m);
    let g = b.finish();
    let err = g
        .evaluate(&bind(&[
            ("x", Tensor::zeros(&[2, 3])),
            ("y", Tensor::zeros(&[2, 3])),
        ]))
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul"), "unexpected message: {msg}");

    let mut b = GraphBuilder::new();
    let x = b.input("x");
    b.output("x", x);
    let g = b.finish();
    assert!(matches!(g.evaluate(&Bindings::new()), Err(TensorError::UnboundInput(_))));
}

#[test]
fn scan_matches_finite_differences() {
    let mut b = GraphBuilder::new();
    let a = b.constant(Tensor::from_vec(&[2], vec![0.5, 0.5]));
    let x = b.param("x");
    let h = b.scan(a, x);
    let y = b.reduce_sum(h, 0);
    b.output("y", y);
    let g = b.finish();
    let report = check_gradients(
        &g,
        "y",
        &bind(&[("x", Tensor::from_vec(&[2], vec![0.3, -0.7]))]),
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(report.all_within(), "max err {}", report.max_rel_err());
}

#[test]
fn constant_graph_has_exactly_zero_gradients() {
    let mut b = GraphBuilder::new();
    let x = b.param("x");
    let c = b.constant(Tensor::scalar(5.0));
    let _ = x;
    b.output("y", c);
    let g = b.finish();
    let report =
        check_gradients(&g, "y", &bind(&[("x", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]))]), 1e-5, 1e-9)
            .unwrap();
    for e in &report.entries {
        assert_eq!(e.max_rel_err, 0.0);
    }
}

#[test]
fn corrupted_adjoint_is_flagged() {
    // Negative control for the comparator itself: a wrong analytic gradient
    // must produce a relative error above any reasonable tolerance.
    let analytic = 6.0 + 0.1;
    let numeric = 6.0;
    assert!(autodiff::rel_err(analytic, numeric) > 1e-3);
    assert!(autodiff::rel_err(6.0, 6.0) == 0.0);
}

#[test]
fn reverse_last_axis_is_an_involution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<Real> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = Tensor::from_vec(&[2, 3, 4], data);
    let mut b = GraphBuilder::new();
    let x = b.input("x");
    let r = b.reverse_last(x);
    let rr = b.reverse_last(r);
    b.output("rr", rr);
    let g = b.finish();
    let out = g.evaluate(&bind(&[("x", t.clone())])).unwrap();
    assert_eq!(out["rr"], t);
}

#[test]
fn softmax_rows_sum_to_one_and_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let data: Vec<Real> = (0..20).map(|_| rng.random_range(-4.0..4.0)).collect();
        let t = Tensor::from_vec(&[4, 5], data.clone());
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let s = b.softmax(x, 1);
        b.output("s", s);
        let g = b.finish();
        let s = g.evaluate(&bind(&[("x", t)])).unwrap().remove("s").unwrap();
        for row in s.data().chunks(5) {
            let sum: Real = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // Permuting entries within a row permutes the outputs identically.
        let mut permuted = data.clone();
        permuted[0..5].rotate_left(2);
        let t2 = Tensor::from_vec(&[4, 5], permuted);
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let sm = b.softmax(x, 1);
        b.output("s", sm);
        let g = b.finish();
        let s2 = g.evaluate(&bind(&[("x", t2)])).unwrap().remove("s").unwrap();
        let mut expect = s.data()[0..5].to_vec();
        expect.rotate_left(2);
        for (a, e) in s2.data()[0..5].iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn evaluation_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<Real> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<Real> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let build = || {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let w = b.param("w");
        let h = b.matmul(x, w);
        let s = b.silu(h);
        let sm = b.softmax(s, 1);
        let y = b.reduce_mean(sm, 1);
        b.output("y", y);
        b.finish()
    };
    let bindings = bind(&[
        ("x", Tensor::from_vec(&[3, 4], data.clone())),
        ("w", Tensor::from_vec(&[4, 4], w.clone())),
    ]);
    let out1 = build().evaluate(&bindings).unwrap();
    let out2 = build().evaluate(&bindings).unwrap();
    let bits1: Vec<u64> = out1["y"].data().iter().map(|v| (*v as f64).to_bits()).collect();
    let bits2: Vec<u64> = out2["y"].data().iter().map(|v| (*v as f64).to_bits()).collect();
    assert_eq!(bits1, bits2);
}

/// Random tensor with entries bounded away from activation kinks.
fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let mag: Real = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

fn rand_positive(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data)
}

/// Every primitive against central finite differences, 100 seeds.
#[test]
fn primitive_gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[3, 4], 0.2, 1.0);
        let y = rand_tensor(&mut rng, &[3, 4], 0.2, 1.0);
        let row = rand_tensor(&mut rng, &[4], 0.2, 1.0);
        let pos = rand_positive(&mut rng, &[3, 4], 0.4, 1.4);
        let posb = rand_positive(&mut rng, &[4], 0.4, 1.4);
        let m = rand_tensor(&mut rng, &[4, 2], 0.2, 1.0);

        type BuildFn = Box<dyn Fn(&mut GraphBuilder, NodeId, NodeId) -> NodeId>;
        let cases: Vec<(&str, Tensor, Tensor, BuildFn)> = vec![
            ("add", x.clone(), y.clone(), Box::new(|b, p, q| b.add(p, q))),
            ("add_broadcast", x.clone(), row.clone(), Box::new(|b, p, q| b.add(p, q))),
            ("sub", x.clone(), y.clone(), Box::new(|b, p, q| b.sub(p, q))),
            ("mul", x.clone(), y.clone(), Box::new(|b, p, q| b.mul(p, q))),
            ("mul_broadcast", x.clone(), row.clone(), Box::new(|b, p, q| b.mul(p, q))),
            ("div", x.clone(), pos.clone(), Box::new(|b, p, q| b.div(p, q))),
            ("div_broadcast", x.clone(), posb.clone(), Box::new(|b, p, q| b.div(p, q))),
            ("matmul", x.clone(), m.clone(), Box::new(|b, p, q| b.matmul(p, q))),
            ("concat", x.clone(), y.clone(), Box::new(|b, p, q| b.concat(&[p, q], 1))),
            ("slice", x.clone(), y.clone(), Box::new(|b, p, _| b.slice(p, 1, 1, 2))),
            ("reshape", x.clone(), y.clone(), Box::new(|b, p, _| b.reshape(p, &[2, 6]))),
            ("transpose", x.clone(), y.clone(), Box::new(|b, p, _| b.transpose(p))),
            ("reverse_last", x.clone(), y.clone(), Box::new(|b, p, _| b.reverse_last(p))),
            ("gather", x.clone(), y.clone(), Box::new(|b, p, _| b.gather(p, vec![2, 0, 1, 0]))),
            ("exp", x.clone(), y.clone(), Box::new(|b, p, _| b.exp(p))),
            ("log", pos.clone(), y.clone(), Box::new(|b, p, _| b.log(p))),
            ("sqrt", pos.clone(), y.clone(), Box::new(|b, p, _| b.sqrt(p))),
            ("softplus", x.clone(), y.clone(), Box::new(|b, p, _| b.softplus(p))),
            ("silu", x.clone(), y.clone(), Box::new(|b, p, _| b.silu(p))),
            ("relu", x.clone(), y.clone(), Box::new(|b, p, _| b.relu(p))),
            ("leaky_relu", x.clone(), y.clone(), Box::new(|b, p, _| b.leaky_relu(p, 0.2))),
            ("scale", x.clone(), y.clone(), Box::new(|b, p, _| b.scale(p, -1.7))),
            ("add_const", x.clone(), y.clone(), Box::new(|b, p, _| b.add_const(p, 0.37))),
            ("max_const", x.clone(), y.clone(), Box::new(|b, p, _| b.max_const(p, 0.0))),
            ("softmax", x.clone(), y.clone(), Box::new(|b, p, _| b.softmax(p, 1))),
            ("reduce_sum", x.clone(), y.clone(), Box::new(|b, p, _| b.reduce_sum(p, 0))),
            ("reduce_mean", x.clone(), y.clone(), Box::new(|b, p, _| b.reduce_mean(p, 1))),
            ("reduce_max", x.clone(), y.clone(), Box::new(|b, p, _| b.reduce_max(p, 1))),
            ("reduce_min", x.clone(), y.clone(), Box::new(|b, p, _| b.reduce_min(p, 0))),
            ("scan", x.clone(), y.clone(), Box::new(|b, p, q| b.scan(p, q))),
        ];

        for (name, xa, xb, build) in cases {
            let bindings = bind(&[("p", xa.clone()), ("q", xb.clone())]);
            // Probe pass to learn the op's output shape.
            let out_shape = {
                let mut tb = GraphBuilder::new();
                let tp = tb.param("p");
                let tq = tb.param("q");
                let tn = build(&mut tb, tp, tq);
                tb.output("o", tn);
                tb.finish().evaluate(&bindings).unwrap()["o"].shape().to_vec()
            };
            // Weight with a random constant so the reduced FD signal is
            // generic, then sum down to a scalar.
            let mut b = GraphBuilder::new();
            let p = b.param("p");
            let q = b.param("q");
            let node = build(&mut b, p, q);
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let w = b.constant(rand_tensor(&mut rng2, &out_shape, 0.3, 1.0));
            let mut out = b.mul(node, w);
            for _ in 0..out_shape.len() {
                out = b.reduce_sum(out, 0);
            }
            b.output("loss", out);
            let g = b.finish();
            let report = check_gradients(&g, "loss", &bindings, 1e-5, 1e-5).unwrap();
            assert!(
                report.all_within(),
                "{name} (seed {seed}): max rel err {}",
                report.max_rel_err()
            );
        }
    }
}
