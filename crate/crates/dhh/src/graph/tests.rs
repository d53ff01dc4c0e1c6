use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_leaf_graph(build: impl FnOnce(&mut GraphBuilder, NodeId) -> NodeId) -> ComputeGraph {
    let mut b = GraphBuilder::new();
    let x = b.leaf("x", Shape::Scalar);
    let xn = b.use_leaf(x);
    let out = build(&mut b, xn);
    b.finish(vec![out])
}

fn eval_scalar(g: &ComputeGraph, x: f64) -> f64 {
    let t = Tensor::scalar(x);
    let mut b = Bindings::for_graph(g);
    b.bind(0, &t);
    g.evaluate(&b).unwrap()[0].as_scalar()
}

#[test]
fn evaluates_square_of_three() {
    let g = scalar_leaf_graph(|b, x| b.mul(x, x));
    assert_eq!(eval_scalar(&g, 3.0), 9.0);
}

#[test]
fn evaluates_tanh_at_origin() {
    let g = scalar_leaf_graph(|b, x| b.tanh(x));
    assert_eq!(eval_scalar(&g, 0.0), 0.0);
}

#[test]
fn evaluates_spring_potential_term() {
    // 0.5 * k * x^2 with k = 2 at x = 1
    let g = scalar_leaf_graph(|b, x| {
        let sq = b.square(x);
        let k = b.scale(sq, 2.0);
        b.scale(k, 0.5)
    });
    assert_eq!(eval_scalar(&g, 1.0), 1.0);
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let g = scalar_leaf_graph(|b, x| {
        let t = b.tanh(x);
        let s = b.sin(t);
        b.mul(s, x)
    });
    let a = eval_scalar(&g, 0.7331);
    let b = eval_scalar(&g, 0.7331);
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn derive_power_rule() {
    let g = scalar_leaf_graph(|b, x| b.square(x));
    let d = g
        .derive(&GradientRequest { target: g.outputs()[0], with_respect_to: vec![0] })
        .unwrap();
    assert_eq!(eval_scalar(&d, 3.0), 6.0);
}

#[test]
fn second_derive_crosses_parameter_and_input() {
    // g(theta, x) = theta * x^2; d/dx = 2 theta x; d/dtheta of that = 2x -> 4 at x = 2
    let mut b = GraphBuilder::new();
    let theta = b.leaf("theta", Shape::Scalar);
    let x = b.leaf("x", Shape::Scalar);
    let tn = b.use_leaf(theta);
    let xn = b.use_leaf(x);
    let sq = b.square(xn);
    let out = b.mul(tn, sq);
    let g = b.finish(vec![out]);

    let dx = g
        .derive(&GradientRequest { target: g.outputs()[0], with_respect_to: vec![x] })
        .unwrap();
    let dx_dtheta = dx
        .derive(&GradientRequest { target: dx.outputs()[0], with_respect_to: vec![theta] })
        .unwrap();

    let tv = Tensor::scalar(0.37);
    let xv = Tensor::scalar(2.0);
    let mut bind = Bindings::for_graph(&dx_dtheta);
    bind.bind(theta, &tv).bind(x, &xv);
    let got = dx_dtheta.evaluate(&bind).unwrap()[0].as_scalar();
    assert!((got - 4.0).abs() < 1e-12, "expected 4, got {got}");
}

#[test]
fn tanh_second_derivative_vanishes_at_origin() {
    let g = scalar_leaf_graph(|b, x| b.tanh(x));
    let d1 = g
        .derive(&GradientRequest { target: g.outputs()[0], with_respect_to: vec![0] })
        .unwrap();
    let d2 = d1
        .derive(&GradientRequest { target: d1.outputs()[0], with_respect_to: vec![0] })
        .unwrap();
    assert_eq!(eval_scalar(&d2, 0.0), 0.0);
}

#[test]
fn derive_rejects_non_scalar_target() {
    let mut b = GraphBuilder::new();
    let x = b.leaf("x", Shape::Vector(3));
    let xn = b.use_leaf(x);
    let y = b.square(xn);
    let g = b.finish(vec![y]);
    let err = g
        .derive(&GradientRequest { target: g.outputs()[0], with_respect_to: vec![x] })
        .unwrap_err();
    assert!(matches!(err, GraphError::NonScalarTarget(Shape::Vector(3))));
}

#[test]
fn evaluate_reports_unbound_leaf() {
    let g = scalar_leaf_graph(|b, x| b.square(x));
    let err = g.evaluate(&Bindings::for_graph(&g)).unwrap_err();
    assert!(matches!(err, EvalError::UnboundLeaf(ref name) if name == "x"));
}

#[test]
fn evaluate_reports_shape_mismatch() {
    let g = scalar_leaf_graph(|b, x| b.square(x));
    let bad = Tensor::vector(vec![1.0, 2.0]);
    let mut b = Bindings::for_graph(&g);
    b.bind(0, &bad);
    let err = g.evaluate(&b).unwrap_err();
    assert!(matches!(err, EvalError::ShapeMismatch { .. }));
}

#[test]
fn finite_difference_check_on_square() {
    let g = scalar_leaf_graph(|b, x| b.square(x));
    let req = GradientRequest { target: g.outputs()[0], with_respect_to: vec![0] };
    let t = Tensor::scalar(3.0);
    let mut b = Bindings::for_graph(&g);
    b.bind(0, &t);
    let err = finite_difference_check(&g, &req, &b, 1e-5).unwrap();
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn finite_difference_check_on_constant_graph() {
    let mut builder = GraphBuilder::new();
    let x = builder.leaf("x", Shape::Scalar);
    builder.use_leaf(x);
    let c = builder.scalar(5.0);
    let g = builder.finish(vec![c]);
    // leaf does not feed the output: derivative and differences are both zero
    let req = GradientRequest { target: g.outputs()[0], with_respect_to: vec![x] };
    let t = Tensor::scalar(1.25);
    let mut b = Bindings::for_graph(&g);
    b.bind(x, &t);
    assert_eq!(finite_difference_check(&g, &req, &b, 1e-5).unwrap(), 0.0);
}

#[test]
fn finite_difference_check_empty_request() {
    let g = scalar_leaf_graph(|b, x| b.square(x));
    let req = GradientRequest { target: g.outputs()[0], with_respect_to: vec![] };
    let t = Tensor::scalar(3.0);
    let mut b = Bindings::for_graph(&g);
    b.bind(0, &t);
    assert_eq!(finite_difference_check(&g, &req, &b, 1e-5).unwrap(), 0.0);
}

/// A small 2-layer tanh network over raw graph ops: W2 tanh(W1 x + b1) + b2.
fn tiny_net(b: &mut GraphBuilder, hidden: usize, inputs: usize) -> (Vec<LeafId>, LeafId, NodeId) {
    let w1 = b.leaf("w1", Shape::Matrix(hidden, inputs));
    let b1 = b.leaf("b1", Shape::Vector(hidden));
    let w2 = b.leaf("w2", Shape::Matrix(1, hidden));
    let b2 = b.leaf("b2", Shape::Vector(1));
    let x = b.leaf("x", Shape::Vector(inputs));
    let xn = b.use_leaf(x);
    let (w1n, b1n, w2n, b2n) = (b.use_leaf(w1), b.use_leaf(b1), b.use_leaf(w2), b.use_leaf(b2));
    let a1 = b.matvec(w1n, xn);
    let z1 = b.add(a1, b1n);
    let h = b.tanh(z1);
    let a2 = b.matvec(w2n, h);
    let z2 = b.add(a2, b2n);
    let out = b.sum(z2);
    (vec![w1, b1, w2, b2], x, out)
}

fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data)
}

#[test]
fn finite_difference_check_random_tanh_net() {
    let mut builder = GraphBuilder::new();
    let (params, x, out) = tiny_net(&mut builder, 6, 3);
    let g = builder.finish(vec![out]);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let values: Vec<Tensor> = g.leaves().iter().map(|l| random_tensor(l.shape, &mut rng)).collect();
    let mut b = Bindings::for_graph(&g);
    for (i, v) in values.iter().enumerate() {
        b.bind(i, v);
    }
    let req = GradientRequest { target: g.outputs()[0], with_respect_to: params.clone() };
    let err = finite_difference_check(&g, &req, &b, 1e-5).unwrap();
    assert!(err < 1e-4, "relative error {err}");
    let _ = x;
}

/// Every primitive's derivative agrees with central differences at 100
/// random points (step 1e-5, relative tolerance 1e-4), and the derivative of
/// the derivative agrees with central differences of the first derivative
/// (tolerance 1e-3).
#[test]
fn primitive_derivatives_match_finite_differences() {
    type BuildFn = fn(&mut GraphBuilder, NodeId, NodeId) -> NodeId;
    let unary_cases: Vec<(&str, BuildFn)> = vec![
        ("add", |b, x, y| b.add(x, y)),
        ("sub", |b, x, y| b.sub(x, y)),
        ("mul", |b, x, y| b.mul(x, y)),
        ("div", |b, x, y| b.div(x, y)),
        ("neg", |b, x, _| b.neg(x)),
        ("powi3", |b, x, _| b.powi(x, 3)),
        ("powi-2", |b, x, _| b.powi(x, -2)),
        ("tanh", |b, x, _| b.tanh(x)),
        ("sin", |b, x, _| b.sin(x)),
        ("cos", |b, x, _| b.cos(x)),
        ("square", |b, x, _| b.square(x)),
        ("scale", |b, x, _| b.scale(x, -1.7)),
        ("broadcast-slice", |b, x, y| {
            // exercise broadcast, concat, slice together
            let joined = b.concat(&[x, y]);
            let piece = b.slice(joined, 1, 3);
            b.sum(piece)
        }),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (name, build) in unary_cases {
        for trial in 0..100 {
            let mut builder = GraphBuilder::new();
            let lx = builder.leaf("x", Shape::Vector(2));
            let ly = builder.leaf("y", Shape::Vector(2));
            let xn = builder.use_leaf(lx);
            let yn = builder.use_leaf(ly);
            let raw = build(&mut builder, xn, yn);
            let out = match builder.shape(raw) {
                Shape::Scalar => raw,
                Shape::Vector(_) => builder.sum(raw),
                Shape::Matrix(..) => unreachable!(),
            };
            let g = builder.finish(vec![out]);

            // keep |x| away from 0 so div and negative powers stay benign
            let sample = |rng: &mut ChaCha8Rng| {
                let mag = rng.gen_range(0.4..1.6);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            };
            let xv = Tensor::vector(vec![sample(&mut rng), sample(&mut rng)]);
            let yv = Tensor::vector(vec![sample(&mut rng), sample(&mut rng)]);
            let mut b = Bindings::for_graph(&g);
            b.bind(lx, &xv).bind(ly, &yv);

            let req = GradientRequest { target: g.outputs()[0], with_respect_to: vec![lx, ly] };
            let err = finite_difference_check(&g, &req, &b, 1e-5).unwrap();
            assert!(err < 1e-4, "{name} trial {trial}: first-order error {err}");

            // second order: finite differences of the first derivative graph
            let d1 = g.derive(&req).unwrap();
            let mut b2 = GraphBuilder::new();
            let spliced = {
                let mut map = HashMap::new();
                map.insert(lx, SpliceSrc::Leaf(lx));
                map.insert(ly, SpliceSrc::Leaf(ly));
                // builder leaves must exist with the same ids
                let nlx = b2.leaf("x", Shape::Vector(2));
                let nly = b2.leaf("y", Shape::Vector(2));
                assert_eq!((nlx, nly), (lx, ly));
                b2.splice(&d1, &map).unwrap()
            };
            let first_component = b2.component(spliced[0], 0);
            let d1_scalar = b2.finish(vec![first_component]);
            let mut bb = Bindings::for_graph(&d1_scalar);
            bb.bind(lx, &xv).bind(ly, &yv);
            let req2 =
                GradientRequest { target: d1_scalar.outputs()[0], with_respect_to: vec![lx, ly] };
            let err2 = finite_difference_check(&d1_scalar, &req2, &bb, 1e-5).unwrap();
            assert!(err2 < 1e-3, "{name} trial {trial}: second-order error {err2}");
        }
    }
}

#[test]
fn matrix_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let mut builder = GraphBuilder::new();
        let lm = builder.leaf("m", Shape::Matrix(3, 2));
        let lv = builder.leaf("v", Shape::Vector(2));
        let lw = builder.leaf("w", Shape::Vector(3));
        let mn = builder.use_leaf(lm);
        let vn = builder.use_leaf(lv);
        let wn = builder.use_leaf(lw);
        let mv = builder.matvec(mn, vn); // 3
        let mtw = builder.matvec_t(mn, wn); // 2
        let ow = builder.outer(mv, mtw); // 3x2
        let prod = builder.mul(ow, mn);
        let flat = builder.matvec(prod, vn);
        let out = builder.sum(flat);
        let g = builder.finish(vec![out]);

        let mv_ = random_tensor(Shape::Matrix(3, 2), &mut rng);
        let vv = random_tensor(Shape::Vector(2), &mut rng);
        let wv = random_tensor(Shape::Vector(3), &mut rng);
        let mut b = Bindings::for_graph(&g);
        b.bind(lm, &mv_).bind(lv, &vv).bind(lw, &wv);
        let req = GradientRequest { target: g.outputs()[0], with_respect_to: vec![lm, lv, lw] };
        let err = finite_difference_check(&g, &req, &b, 1e-5).unwrap();
        assert!(err < 1e-4, "trial {trial}: error {err}");
    }
}

#[test]
fn derivative_is_linear_in_the_graph() {
    // derive(a f + b g) == a derive(f) + b derive(g), evaluated pointwise
    let (a, c) = (1.75, -0.5);
    let build_f = |b: &mut GraphBuilder, x: NodeId| {
        let s = b.sin(x);
        b.mul(s, x)
    };
    let build_g = |b: &mut GraphBuilder, x: NodeId| {
        let t = b.tanh(x);
        b.square(t)
    };

    let f = scalar_leaf_graph(build_f);
    let g = scalar_leaf_graph(build_g);
    let combined = scalar_leaf_graph(|b, x| {
        let fx = build_f(b, x);
        let gx = build_g(b, x);
        let af = b.scale(fx, a);
        let cg = b.scale(gx, c);
        b.add(af, cg)
    });

    let req = |gr: &ComputeGraph| GradientRequest {
        target: gr.outputs()[0],
        with_respect_to: vec![0],
    };
    let df = f.derive(&req(&f)).unwrap();
    let dg = g.derive(&req(&g)).unwrap();
    let dc = combined.derive(&req(&combined)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x = rng.gen_range(-2.0..2.0);
        let lhs = eval_scalar(&dc, x);
        let rhs = a * eval_scalar(&df, x) + c * eval_scalar(&dg, x);
        assert!((lhs - rhs).abs() <= 1e-12, "x={x}: {lhs} vs {rhs}");
    }
}

#[test]
fn splice_substitutes_nodes_for_leaves() {
    // inner graph: y = x^2, spliced at x = t + 1
    let inner = scalar_leaf_graph(|b, x| b.square(x));
    let mut b = GraphBuilder::new();
    let t = b.leaf("t", Shape::Scalar);
    let tn = b.use_leaf(t);
    let one = b.scalar(1.0);
    let shifted = b.add(tn, one);
    let mut map = HashMap::new();
    map.insert(0usize, SpliceSrc::Node(shifted));
    let out = b.splice(&inner, &map).unwrap()[0];
    let g = b.finish(vec![out]);

    let tv = Tensor::scalar(2.0);
    let mut bind = Bindings::for_graph(&g);
    bind.bind(t, &tv);
    assert_eq!(g.evaluate(&bind).unwrap()[0].as_scalar(), 9.0);
}

#[test]
fn splice_requires_full_leaf_mapping() {
    let inner = scalar_leaf_graph(|b, x| b.square(x));
    let mut b = GraphBuilder::new();
    let err = b.splice(&inner, &HashMap::new()).unwrap_err();
    assert!(matches!(err, GraphError::UnmappedLeaf(ref n) if n == "x"));
}

#[test]
fn derivative_of_unused_leaf_is_zero_of_leaf_shape() {
    let mut b = GraphBuilder::new();
    let x = b.leaf("x", Shape::Scalar);
    let unused = b.leaf("unused", Shape::Vector(4));
    let xn = b.use_leaf(x);
    let out = b.square(xn);
    let g = b.finish(vec![out]);

    let d = g
        .derive(&GradientRequest { target: g.outputs()[0], with_respect_to: vec![x, unused] })
        .unwrap();
    let xv = Tensor::scalar(1.5);
    let mut bind = Bindings::for_graph(&d);
    bind.bind(x, &xv);
    let grads = d.evaluate(&bind).unwrap();
    assert_eq!(grads[0].as_scalar(), 3.0);
    assert_eq!(grads[1], Tensor::zeros(Shape::Vector(4)));
}
