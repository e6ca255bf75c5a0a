//! Finite-difference checks for every graph op: perturb each input element,
//! compare the central difference of the scalar root against the tape
//! gradient. Inputs are kept away from non-smooth points (|x| = 0 for abs,
//! clamp edges, relu kinks) so the comparison is valid.

use super::*;
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> TensorD {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TensorD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(lo..hi))
}

/// Max relative error between analytic and finite-difference gradients of a
/// scalar-rooted graph with respect to one input tensor.
fn grad_check<F>(build: F, input: &TensorD, h: f64) -> f64
where
    F: Fn(&mut Graph, Value) -> Value,
{
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let root = build(&mut g, x);
    assert_eq!(g.value(root).len(), 1, "grad_check root must be scalar");
    let grads = g.backward(root);
    let analytic = grads.of(x).cloned().unwrap_or_else(|| TensorD::zeros(input.raw_dim()));

    let eval = |t: &TensorD| -> f64 {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let root = build(&mut g, x);
        g.value(root)[[0]]
    };

    // combined tolerance: |fd - an| <= atol + rtol * scale
    let (atol, rtol) = (1e-8, 1e-5);
    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let mut plus = input.clone();
        let mut minus = input.clone();
        {
            let p = plus.as_slice_mut().unwrap();
            p[i] += h;
        }
        {
            let m = minus.as_slice_mut().unwrap();
            m[i] -= h;
        }
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let an = analytic.as_slice().unwrap()[i];
        let scale = an.abs().max(fd.abs());
        worst = worst.max(((fd - an).abs() - atol) / scale.max(1e-12));
    }
    worst
}

fn assert_grad<F>(build: F, input: &TensorD)
where
    F: Fn(&mut Graph, Value) -> Value,
{
    let err = grad_check(build, input, 1e-5);
    assert!(err < 1e-5, "finite-difference mismatch: rel err {err:.3e}");
}

#[test]
fn grad_elementwise_ops() {
    let x = rand_tensor(&[3, 4], 1, -1.0, 1.0);
    let y = rand_tensor(&[3, 4], 2, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let c = g.constant(rand_tensor(&[3, 4], 2, -1.0, 1.0));
            let s = g.add(v, c);
            let s = g.mul(s, v);
            let s = g.sub(s, c);
            let s = g.neg(s);
            let s = g.scalar_mul(s, 0.7);
            let s = g.scalar_add(s, 0.3);
            g.mean_all(s)
        },
        &x,
    );
    // also check the second operand of mul
    assert_grad(
        |g, v| {
            let c = g.constant(rand_tensor(&[3, 4], 1, -1.0, 1.0));
            let s = g.mul(c, v);
            g.sum_all(s)
        },
        &y,
    );
}

#[test]
fn grad_matmul() {
    let a = rand_tensor(&[3, 5], 3, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let b = g.constant(rand_tensor(&[5, 2], 4, -1.0, 1.0));
            let m = g.matmul(v, b);
            g.mean_all(m)
        },
        &a,
    );
    let b = rand_tensor(&[5, 2], 4, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let a = g.constant(rand_tensor(&[3, 5], 3, -1.0, 1.0));
            let m = g.matmul(a, v);
            let m = g.mul(m, m);
            g.sum_all(m)
        },
        &b,
    );
}

#[test]
fn grad_bat_matmul() {
    let a = rand_tensor(&[2, 3, 4], 5, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let b = g.constant(rand_tensor(&[2, 4, 3], 6, -1.0, 1.0));
            let m = g.bat_matmul(v, b);
            g.mean_all(m)
        },
        &a,
    );
    let b = rand_tensor(&[2, 4, 3], 6, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let a = g.constant(rand_tensor(&[2, 3, 4], 5, -1.0, 1.0));
            let m = g.bat_matmul(a, v);
            let m = g.mul(m, m);
            g.mean_all(m)
        },
        &b,
    );
}

#[test]
fn grad_conv2d_input_and_weight() {
    let x = rand_tensor(&[2, 6, 6], 7, -1.0, 1.0);
    for &(stride, pad) in &[(1usize, 1usize), (2, 1), (1, 0)] {
        assert_grad(
            |g, v| {
                let w = g.constant(rand_tensor(&[3, 2, 3, 3], 8, -0.5, 0.5));
                let y = g.conv2d(v, w, stride, pad);
                let y = g.mul(y, y);
                g.mean_all(y)
            },
            &x,
        );
        let w = rand_tensor(&[3, 2, 3, 3], 8, -0.5, 0.5);
        assert_grad(
            |g, v| {
                let x = g.constant(rand_tensor(&[2, 6, 6], 7, -1.0, 1.0));
                let y = g.conv2d(x, v, stride, pad);
                g.mean_all(y)
            },
            &w,
        );
    }
}

#[test]
fn grad_pool_and_upsample() {
    let x = rand_tensor(&[2, 4, 4], 9, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let p = g.avg_pool2(v);
            let p = g.mul(p, p);
            g.sum_all(p)
        },
        &x,
    );
    assert_grad(
        |g, v| {
            let u = g.upsample2(v);
            let u = g.mul(u, u);
            g.mean_all(u)
        },
        &x,
    );
}

#[test]
fn grad_structure_ops() {
    let x = rand_tensor(&[3, 4], 10, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let c = g.constant(rand_tensor(&[2, 4], 11, -1.0, 1.0));
            let cat = g.concat(&[v, c], 0);
            let sl = g.slice_axis(cat, 0, 1, 4);
            let r = g.reshape(sl, &[4, 3]);
            let t = g.transpose(r, &[1, 0]);
            let t = g.mul(t, t);
            g.mean_all(t)
        },
        &x,
    );
}

#[test]
fn grad_nonlinearities() {
    // keep away from relu/abs kinks and clamp edges
    let x = rand_tensor(&[4, 4], 12, 0.1, 0.9);
    let xneg = rand_tensor(&[4, 4], 13, -0.9, -0.1);
    assert_grad(|g, v| { let y = g.leaky_relu(v, 0.2); g.sum_all(y) }, &x);
    assert_grad(|g, v| { let y = g.leaky_relu(v, 0.2); g.sum_all(y) }, &xneg);
    assert_grad(|g, v| { let y = g.silu(v); g.mean_all(y) }, &x);
    assert_grad(|g, v| { let y = g.sigmoid(v); g.mean_all(y) }, &x);
    assert_grad(|g, v| { let y = g.exp(v); g.mean_all(y) }, &x);
    assert_grad(|g, v| { let y = g.ln(v); g.mean_all(y) }, &x);
    assert_grad(|g, v| { let y = g.abs(v); g.mean_all(y) }, &xneg);
    assert_grad(|g, v| { let y = g.clamp(v, 0.0, 1.0); g.mean_all(y) }, &x);
}

#[test]
fn clamp_blocks_gradient_outside_range() {
    let x = TensorD::from_shape_vec(IxDyn(&[3]), vec![-0.5, 0.5, 1.5]).unwrap();
    let mut g = Graph::new();
    let v = g.constant(x);
    let y = g.clamp(v, 0.0, 1.0);
    let s = g.sum_all(y);
    let grads = g.backward(s);
    let dx = grads.of(v).unwrap();
    assert_eq!(dx.as_slice().unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn grad_normalizations() {
    let x = rand_tensor(&[4, 3, 3], 14, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let y = g.group_norm(v, 2, 1e-5);
            let y = g.mul(y, y);
            g.mean_all(y)
        },
        &x,
    );
    assert_grad(
        |g, v| {
            let y = g.channel_std_norm(v, 1e-5);
            let c = g.constant(rand_tensor(&[4, 3, 3], 15, -1.0, 1.0));
            let y = g.mul(y, c);
            g.sum_all(y)
        },
        &x,
    );
    let tokens = rand_tensor(&[5, 8], 16, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let y = g.layer_norm(v, 1e-5);
            let c = g.constant(rand_tensor(&[5, 8], 17, -1.0, 1.0));
            let y = g.mul(y, c);
            g.mean_all(y)
        },
        &tokens,
    );
}

#[test]
fn grad_softmax() {
    let x = rand_tensor(&[3, 6], 18, -2.0, 2.0);
    assert_grad(
        |g, v| {
            let y = g.softmax(v);
            let c = g.constant(rand_tensor(&[3, 6], 19, -1.0, 1.0));
            let y = g.mul(y, c);
            g.sum_all(y)
        },
        &x,
    );
}

#[test]
fn grad_vec_broadcasts() {
    let x = rand_tensor(&[3, 5, 5], 20, -1.0, 1.0);
    let v = rand_tensor(&[3], 21, 0.5, 1.5);
    assert_grad(
        |g, t| {
            let vv = g.constant(rand_tensor(&[3], 21, 0.5, 1.5));
            let y = g.mul_vec(t, vv, 0);
            let y = g.add_vec(y, vv, 0);
            let y = g.mul(y, y);
            g.mean_all(y)
        },
        &x,
    );
    assert_grad(
        |g, t| {
            let xx = g.constant(rand_tensor(&[3, 5, 5], 20, -1.0, 1.0));
            let y = g.mul_vec(xx, t, 0);
            let y = g.add_vec(y, t, 0);
            let y = g.mul(y, y);
            g.mean_all(y)
        },
        &v,
    );
}

#[test]
fn grad_spatial_mean() {
    let x = rand_tensor(&[3, 4, 4], 22, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let y = g.spatial_mean(v);
            let y = g.mul(y, y);
            g.sum_all(y)
        },
        &x,
    );
}

#[test]
fn grad_composite_conv_stack() {
    // conv -> groupnorm -> silu -> pool -> flatten -> linear-ish -> mean
    let x = rand_tensor(&[2, 8, 8], 23, -1.0, 1.0);
    assert_grad(
        |g, v| {
            let w1 = g.constant(rand_tensor(&[4, 2, 3, 3], 24, -0.4, 0.4));
            let h = g.conv2d(v, w1, 1, 1);
            let h = g.group_norm(h, 2, 1e-5);
            let h = g.silu(h);
            let h = g.avg_pool2(h);
            let h = g.reshape(h, &[1, 4 * 4 * 4]);
            let w2 = g.constant(rand_tensor(&[64, 1], 25, -0.3, 0.3));
            let o = g.matmul(h, w2);
            g.mean_all(o)
        },
        &x,
    );
}

#[test]
fn param_grads_accumulate_repeated_use() {
    let mut store = ParamStore::new();
    store.insert("w", TensorD::from_elem(IxDyn(&[1]), 3.0));
    let mut g = Graph::new();
    let w1 = g.param(&store, "w");
    let w2 = g.param(&store, "w");
    // loss = w * w, via two separate leaf uses: d/dw = 2w = 6
    let p = g.mul(w1, w2);
    let root = g.sum_all(p);
    let grads = g.backward(root);
    let by_name = g.param_grads(&grads);
    assert_eq!(by_name["w"][[0]], 6.0);
}

#[test]
fn untouched_params_have_no_gradient_entry() {
    let mut store = ParamStore::new();
    store.insert("used", TensorD::from_elem(IxDyn(&[1]), 2.0));
    store.insert("unused", TensorD::from_elem(IxDyn(&[1]), 5.0));
    let mut g = Graph::new();
    let w = g.param(&store, "used");
    let _lonely = g.param(&store, "unused"); // in the graph but not on the loss path
    let y = g.mul(w, w);
    let root = g.sum_all(y);
    let grads = g.backward(root);
    let by_name = g.param_grads(&grads);
    assert!(by_name.contains_key("used"));
    assert!(!by_name.contains_key("unused"));
}

#[test]
fn backward_is_deterministic() {
    let x = rand_tensor(&[4, 6, 6], 30, -1.0, 1.0);
    let run = || {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let w = g.constant(rand_tensor(&[4, 4, 3, 3], 31, -0.3, 0.3));
        let h = g.conv2d(v, w, 1, 1);
        let h = g.group_norm(h, 2, 1e-5);
        let h = g.silu(h);
        let root = g.mean_all(h);
        let grads = g.backward(root);
        grads.of(v).unwrap().clone()
    };
    let a = run();
    let b = run();
    let abits: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
    let bbits: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
    assert_eq!(abits, bbits);
}
