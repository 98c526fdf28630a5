//! Op-level checks of the autodiff engine.

use efdr::tensor::{gradcheck, Adam, AdamConfig, Graph, ParamStore, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const OP_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn check(name: &str, f: impl Fn(&mut Graph<f64>, &[Var]) -> efdr::tensor::Result<Var>, inputs: &[Tensor<f64>]) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let r = gradcheck(f, inputs, H, None, &mut rng).unwrap();
    assert!(r.rel_error < OP_TOL, "{name}: relative error {:e}", r.rel_error);
}

#[test]
fn gradient_checks_for_every_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4], 1.0);
    let b = rand_tensor(&mut rng, &[3, 4], 1.0);
    check("add", |g, v| g.add(v[0], v[1]), &[a.clone(), b.clone()]);
    check("sub", |g, v| g.sub(v[0], v[1]), &[a.clone(), b.clone()]);
    check("mul", |g, v| g.mul(v[0], v[1]), &[a.clone(), b.clone()]);
    check("scale", |g, v| g.scale(v[0], -2.5), &[a.clone()]);
    check("exp", |g, v| g.exp(v[0]), &[a.clone()]);
    check("tanh", |g, v| g.tanh(v[0]), &[a.clone()]);
    check("gelu", |g, v| g.gelu(v[0]), &[rand_tensor(&mut rng, &[3, 4], 3.0)]);
    check("matmul", |g, v| g.matmul(v[0], v[1]), &[rand_tensor(&mut rng, &[4, 5], 1.0), rand_tensor(&mut rng, &[5, 3], 1.0)]);
    check("matmul_nt", |g, v| g.matmul_nt(v[0], v[1]), &[rand_tensor(&mut rng, &[4, 5], 1.0), rand_tensor(&mut rng, &[3, 5], 1.0)]);
    check("transpose", |g, v| g.transpose(v[0]), &[rand_tensor(&mut rng, &[2, 5], 1.0)]);
    check("add_row", |g, v| g.add_row(v[0], v[1]), &[a.clone(), rand_tensor(&mut rng, &[4], 1.0)]);
    check("scale_rows", |g, v| g.scale_rows(v[0], &[0.5, -1.0, 3.0]), &[a.clone()]);
    check("scale_cols", |g, v| g.scale_cols(v[0], &[0.5, -1.0, 3.0, 2.0]), &[a.clone()]);
    check(
        "layer_norm",
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
        &[rand_tensor(&mut rng, &[3, 6], 2.0), rand_tensor(&mut rng, &[6], 1.5), rand_tensor(&mut rng, &[6], 1.0)],
    );
    check("softmax rows", |g, v| g.softmax(v[0], 1), &[rand_tensor(&mut rng, &[3, 5], 2.0)]);
    check("softmax cols", |g, v| g.softmax(v[0], 0), &[rand_tensor(&mut rng, &[3, 5], 2.0)]);
    check("slice_cols", |g, v| g.slice_cols(v[0], 1, 2), &[a.clone()]);
    check("slice_rows", |g, v| g.slice_rows(v[0], 1, 2), &[a.clone()]);
    check("concat_cols", |g, v| g.concat_cols(&[v[0], v[1], v[0]]), &[a.clone(), rand_tensor(&mut rng, &[3, 2], 1.0)]);
    check("concat_rows", |g, v| g.concat_rows(&[v[1], v[0]]), &[a.clone(), rand_tensor(&mut rng, &[2, 4], 1.0)]);
    check("sum", |g, v| g.sum(v[0]), &[a.clone()]);
    check("mean", |g, v| g.mean(v[0]), &[a.clone()]);
    check("reshape", |g, v| g.reshape(v[0], &[6, 2]), &[a.clone()]);
    let mut well = rand_tensor(&mut rng, &[4, 4], 0.3);
    for i in 0..4 {
        well.data_mut()[i * 4 + i] += 2.0;
    }
    check("inverse", |g, v| g.inverse(v[0]), &[well]);
    check("conv1x1", |g, v| g.conv1x1(v[0], v[1]), &[rand_tensor(&mut rng, &[6, 2, 2], 1.0), rand_tensor(&mut rng, &[6, 6], 1.0)]);
}

#[test]
fn attention_like_composite_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[5, 6], 1.0);
    let wq = rand_tensor(&mut rng, &[6, 4], 0.5);
    let wk = rand_tensor(&mut rng, &[6, 4], 0.5);
    check(
        "attention",
        |g, v| {
            let q = g.matmul(v[0], v[1])?;
            let k = g.matmul(v[0], v[2])?;
            let s = g.matmul_nt(q, k)?;
            let s = g.scale(s, 0.5)?;
            let p = g.softmax(s, 1)?;
            g.matmul(p, v[0])
        },
        &[x, wq, wk],
    );
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let i = g.constant(Tensor::eye(3));
    let y = g.matmul(i, x).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 5]));
    assert!(matches!(g.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    let c = g.constant(Tensor::zeros(&[3, 4]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[2, 4], vec![3.0, 3.0, 3.0, 3.0, 1.0, 2.0, 3.0, 10.0]).unwrap());
    let gain = g.constant(Tensor::new(&[4], vec![2.0, 2.0, 2.0, 2.0]).unwrap());
    let bias = g.constant(Tensor::new(&[4], vec![0.5, -0.5, 1.0, 0.0]).unwrap());
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(&g.value(y).data()[..4], &[0.5, -0.5, 1.0, 0.0]);
    let ones = g.constant(Tensor::filled(&[4], 1.0));
    let zeros = g.constant(Tensor::zeros(&[4]));
    let z = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
    let row = &g.value(z).data()[4..];
    let mean = row.iter().sum::<f64>() / 4.0;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-5);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let u = g.constant(Tensor::filled(&[2, 5], 0.7));
    let s = g.softmax(u, 1).unwrap();
    assert!(g.value(s).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    let x = g.constant(Tensor::new(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap());
    let xc = g.constant(Tensor::new(&[1, 3], vec![101.0, 98.0, 100.5]).unwrap());
    let (a, b) = (g.softmax(x, 1).unwrap(), g.softmax(xc, 1).unwrap());
    assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-14);
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[3]));
    let e = g.exp(z).unwrap();
    assert_eq!(g.value(e).data(), &[1.0, 1.0, 1.0]);
    let x = g.constant(Tensor::new(&[3], vec![0.3, 1.7, 4.0]).unwrap());
    let nx = g.scale(x, -1.0).unwrap();
    let (t, tn) = (g.tanh(x).unwrap(), g.tanh(nx).unwrap());
    for (p, n) in g.value(t).data().iter().zip(g.value(tn).data()) {
        assert_eq!(*p, -*n);
    }
}

#[test]
fn conv1x1_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, h, w) = (6, 3, 4);
    let x = rand_tensor(&mut rng, &[c, h, w], 1.0);
    let wt = rand_tensor(&mut rng, &[c, c], 1.0);
    let mut g = Graph::<f64>::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(wt.clone()));
    let y = g.conv1x1(xv, wv).unwrap();
    assert_eq!(g.shape(y), &[c, h, w]);
    for o in 0..c {
        for i in 0..h {
            for j in 0..w {
                let want: f64 = (0..c).map(|k| wt.data()[o * c + k] * x.data()[(k * h + i) * w + j]).sum();
                assert!((g.value(y).data()[(o * h + i) * w + j] - want).abs() < 1e-12);
            }
        }
    }
    let eye = g.constant(Tensor::eye(c));
    let same = g.conv1x1(xv, eye).unwrap();
    assert_eq!(g.value(same).data(), x.data());
}

#[test]
fn backward_contracts() {
    // loss = sum(x) -> ones
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap());
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    assert_eq!(g.backward(s), Err(TensorError::BackwardTwice));

    // loss = sum(exp(a) * b): d/da = exp(a) * b, d/db = exp(a)
    let mut g = Graph::<f64>::new();
    let av = [0.2, -1.0, 0.5];
    let bv = [1.5, 2.0, -3.0];
    let a = g.variable(Tensor::new(&[3], av.to_vec()).unwrap());
    let b = g.variable(Tensor::new(&[3], bv.to_vec()).unwrap());
    let e = g.exp(a).unwrap();
    let p = g.mul(e, b).unwrap();
    let l = g.sum(p).unwrap();
    g.backward(l).unwrap();
    for i in 0..3 {
        assert!((g.grad(a).unwrap()[i] - av[i].exp() * bv[i]).abs() < 1e-15);
        assert!((g.grad(b).unwrap()[i] - av[i].exp()).abs() < 1e-15);
    }

    // shared subexpression: y = x*x + 3x, dy/dx = 2x + 3
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::scalar(1.25));
    let sq = g.mul(x, x).unwrap();
    let t = g.scale(x, 3.0).unwrap();
    let y = g.add(sq, t).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0 * 1.25 + 3.0]);

    // non-scalar loss
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::zeros(&[2]));
    assert_eq!(g.backward(x), Err(TensorError::NotScalar("backward")));
}

#[test]
fn shared_parameter_accumulates() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::new(&[1, 1], vec![2.0]).unwrap());
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 1], vec![3.0]).unwrap());
    let w1 = g.param(&store, w);
    let w2 = g.param(&store, w);
    assert_eq!(w1, w2);
    let a = g.matmul(x, w1).unwrap();
    let b = g.matmul(a, w2).unwrap();
    let l = g.sum(b).unwrap();
    g.backward(l).unwrap();
    // l = x w^2 -> 2 x w = 12
    assert_eq!(g.param_grads(&store)[0].as_deref(), Some(&[12.0][..]));
}

#[test]
fn inference_graph_tracks_nothing() {
    let mut store = ParamStore::<f32>::new();
    let w = store.add("w", Tensor::filled(&[2, 2], 1.0));
    let mut g = Graph::inference();
    let p = g.param(&store, w);
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(p).is_none());
}

#[test]
fn non_finite_values_are_reported_when_checking() {
    let mut g = Graph::<f64>::new();
    g.set_check_finite(true);
    let x = g.constant(Tensor::scalar(1000.0));
    assert_eq!(g.exp(x), Err(TensorError::NonFinite("exp")));
}

#[test]
fn f32_forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Tensor<f32> = rand_tensor(&mut rng, &[37, 53], 1.0).cast();
        let b: Tensor<f32> = rand_tensor(&mut rng, &[53, 29], 1.0).cast();
        let mut g = Graph::<f32>::new();
        let (a, b) = (g.variable(a), g.variable(b));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c, 1).unwrap();
        g.value(s).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adam_second_moments_stay_nonnegative(grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..20)) {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::new(&[4], vec![0.1, -0.2, 0.3, 0.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for g in grads {
            adam.step(&mut store, &[Some(g)]).unwrap();
            prop_assert!(adam.second_moments().all(|v| v.iter().all(|&x| x >= 0.0)));
        }
    }

    #[test]
    fn random_small_shapes_pass_gradient_checks(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, k], 1.0);
        let b = rand_tensor(&mut rng, &[k, n], 1.0);
        let gain = rand_tensor(&mut rng, &[n], 1.0);
        let bias = rand_tensor(&mut rng, &[n], 1.0);
        let r = gradcheck(
            |g, v| {
                let c = g.matmul(v[0], v[1])?;
                let c = g.gelu(c)?;
                let c = if n > 1 { g.layer_norm(c, v[2], v[3], 1e-5)? } else { g.add_row(c, v[3])? };
                let t = g.tanh(c)?;
                g.softmax(t, 1)
            },
            &[a, b, gain, bias],
            H,
            None,
            &mut rng,
        ).unwrap();
        prop_assert!(r.rel_error < OP_TOL, "rel error {:e}", r.rel_error);
    }
}
