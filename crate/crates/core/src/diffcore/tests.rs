use super::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central finite differences with step 1e-5; the independent oracle for
/// every backward rule. `f` must rebuild its graph from scratch per call.
fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

fn assert_close_grad(analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1.0);
        let rel = (a - n).abs() / denom;
        assert!(rel <= tol, "grad[{i}]: analytic {a} vs numeric {n} (rel {rel})");
    }
}

#[test]
fn relu_matches_definition() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn sigmoid_at_zero_is_half() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn conv2d_of_ones_sums_window() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 4, 4], vec![1.0; 16]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap());
    let y = g.conv2d(x, k, 2, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[4.0, 4.0, 4.0, 4.0]);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![3.0, -1.0, 2.0]));
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_square_sum() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(DiffError::NonScalarLoss(_))));
}

#[test]
fn log_rejects_non_positive() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(g.log(x), Err(DiffError::LogNonPositive(_))));
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add"), "{msg}");
    assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn gradient_accumulates_over_reuse() {
    // y = x*x + 3x uses x twice; gradient must be the sum of both paths.
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(2.0));
    let sq = g.mul(x, x).unwrap();
    let lin = g.scale(x, 3.0);
    let y = g.add(sq, lin).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0 * 2.0 + 3.0]);
}

/// Two-layer MLP gradient against the finite-difference oracle.
#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (din, dh, dout, batch) = (3, 5, 2, 4);
    let n_params = din * dh + dh + dh * dout + dout;
    let theta: Vec<f64> = (0..n_params).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xs: Vec<f64> = (0..batch * din).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let eval = |theta: &[f64]| -> (f64, Option<Vec<f64>>) {
        let mut g = Graph::new();
        let mut off = 0;
        let w1 = g.variable(Tensor::new(vec![din, dh], theta[off..off + din * dh].to_vec()).unwrap());
        off += din * dh;
        let b1 = g.variable(Tensor::vector(theta[off..off + dh].to_vec()));
        off += dh;
        let w2 = g.variable(Tensor::new(vec![dh, dout], theta[off..off + dh * dout].to_vec()).unwrap());
        off += dh * dout;
        let b2 = g.variable(Tensor::vector(theta[off..off + dout].to_vec()));

        let x = g.constant(Tensor::new(vec![batch, din], xs.clone()).unwrap());
        let h = g.matmul(x, w1).unwrap();
        let h = g.add_row(h, b1).unwrap();
        let h = g.tanh(h);
        let o = g.matmul(h, w2).unwrap();
        let o = g.add_row(o, b2).unwrap();
        let sq = g.mul(o, o).unwrap();
        let loss = g.mean(sq);
        let value = g.value(loss).item();
        g.backward(loss).unwrap();
        let mut grad = Vec::with_capacity(theta.len());
        for id in [w1, b1, w2, b2] {
            grad.extend_from_slice(g.grad(id).unwrap());
        }
        (value, Some(grad))
    };

    let (_, grad) = eval(&theta);
    let f = |t: &[f64]| eval(t).0;
    let numeric = finite_diff(&f, &theta);
    assert_close_grad(&grad.unwrap(), &numeric, 1e-6);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![3, 4], data).unwrap());
        let t = g.tanh(x);
        let s = g.sigmoid(t);
        let loss = g.mean(s);
        g.backward(loss).unwrap();
        (
            g.value(loss).item().to_bits(),
            g.grad(x).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn jvp_matches_directional_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dir: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let forward = |xv: &[f64]| -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![2, 3], xv.to_vec()).unwrap());
        let t = g.tanh(x);
        let e = g.exp(t);
        let r = g.sum_rows(e).unwrap();
        g.value(r).data().to_vec()
    };

    let mut g = Graph::new();
    let x = g.variable(Tensor::new(vec![2, 3], x0.clone()).unwrap());
    let t = g.tanh(x);
    let e = g.exp(t);
    let r = g.sum_rows(e).unwrap();
    g.jvp(&[(x, &dir)]).unwrap();
    let tangent = g.tangent(r).unwrap().to_vec();

    let h = 1e-6;
    let xp: Vec<f64> = x0.iter().zip(&dir).map(|(v, d)| v + h * d).collect();
    let xm: Vec<f64> = x0.iter().zip(&dir).map(|(v, d)| v - h * d).collect();
    let (fp, fm) = (forward(&xp), forward(&xm));
    for (i, tv) in tangent.iter().enumerate() {
        let num = (fp[i] - fm[i]) / (2.0 * h);
        assert!((tv - num).abs() < 1e-7, "tangent[{i}]: {tv} vs {num}");
    }
}

#[test]
fn seeded_backward_matches_scalarized_backward() {
    let x0 = vec![0.3, -0.8, 1.2];
    let seed = vec![0.5, -1.5, 2.0];

    let mut g1 = Graph::new();
    let x1 = g1.variable(Tensor::vector(x0.clone()));
    let y1 = g1.tanh(x1);
    g1.backward_seeded(y1, &seed).unwrap();
    let seeded = g1.grad(x1).unwrap().to_vec();

    let mut g2 = Graph::new();
    let x2 = g2.variable(Tensor::vector(x0));
    let y2 = g2.tanh(x2);
    let s = g2.constant(Tensor::vector(seed));
    let prod = g2.mul(y2, s).unwrap();
    let loss = g2.sum(prod);
    g2.backward(loss).unwrap();
    let scalarized = g2.grad(x2).unwrap().to_vec();

    for (a, b) in seeded.iter().zip(&scalarized) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn conv2d_with_padding_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xlen = 2 * 6 * 6;
    let klen = 3 * 2 * 4 * 4;
    let theta: Vec<f64> = (0..xlen + klen).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let eval = |t: &[f64]| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![1, 2, 6, 6], t[..xlen].to_vec()).unwrap());
        let k = g.variable(Tensor::new(vec![3, 2, 4, 4], t[xlen..].to_vec()).unwrap());
        let y = g.conv2d(x, k, 2, 1).unwrap();
        let a = g.leaky_relu(y, 0.2);
        let loss = g.mean(a);
        let v = g.value(loss).item();
        g.backward(loss).unwrap();
        let mut grad = g.grad(x).unwrap().to_vec();
        grad.extend_from_slice(g.grad(k).unwrap());
        (v, grad)
    };

    let (_, analytic) = eval(&theta);
    let f = |t: &[f64]| eval(t).0;
    let numeric = finite_diff(&f, &theta);
    assert_close_grad(&analytic, &numeric, 1e-6);
}
