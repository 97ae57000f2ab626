use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn causal_mask(t: usize) -> Tensor<f64> {
    Tensor::from_fn(&[t, t], |i| {
        if i % t > i / t {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    })
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.leaf(rand_tensor(&mut rng, &[4, 9]).map(|v| v * 30.0), false);
    let y = g.softmax(x, None).unwrap();
    for r in 0..4 {
        let row = g.value(y).row(r);
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_standardizes_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.leaf(rand_tensor(&mut rng, &[5, 32]).map(|v| 30.0 * v + 7.0), false);
    let gain = g.leaf(Tensor::from_fn(&[32], |_| 1.0), false);
    let bias = g.leaf(Tensor::zeros(&[32]), false);
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    for r in 0..5 {
        let row = g.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn sum_gradient_is_all_ones() {
    let w = Tensor::from_fn(&[3, 4], |i| i as f64);
    let mut g = Graph::new();
    let wv = g.bind(&w, true);
    let loss = g.sum(wv).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(wv).unwrap(), &[1.0; 12]);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_one_hot() {
    let logits = Tensor::new(vec![1, 4], vec![0.3, -1.2, 2.0, 0.5]).unwrap();
    let mut g = Graph::new();
    let l = g.bind(&logits, true);
    let loss = g.cross_entropy(l, &[2], None).unwrap();
    g.backward(loss).unwrap();
    let mut expect: Vec<f64> = logits.data().to_vec();
    super::graph::softmax_row(&mut expect);
    expect[2] -= 1.0;
    for (a, b) in g.grad(l).unwrap().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn backward_twice_is_rejected_until_reset() {
    let w = Tensor::from_fn(&[2], |i| i as f64);
    let mut g = Graph::new();
    let wv = g.bind(&w, true);
    let loss = g.sum(wv).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.backward(loss), Err(AutodiffError::StaleGraph));
    g.zero_grad();
    g.backward(loss).unwrap();
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(g.backward(x), Err(AutodiffError::NotScalar(_))));
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]), false);
    let b = g.leaf(Tensor::zeros(&[2, 3]), false);
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
}

#[test]
fn masked_softmax_gradient_is_exactly_zero_on_masked_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[5, 5]);
    let up = rand_tensor(&mut rng, &[5, 5]);
    let mask = causal_mask(5);
    let mut g = Graph::new();
    let xv = g.bind(&x, true);
    let y = g.softmax(xv, Some(&mask)).unwrap();
    let w = g.leaf(up, false);
    let yw = g.matmul(y, w).unwrap();
    let loss = g.sum(yw).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(xv).unwrap();
    for i in 0..5 {
        for j in i + 1..5 {
            assert_eq!(grad[i * 5 + j], 0.0);
            assert_eq!(g.value(y).data()[i * 5 + j], 0.0);
        }
    }
}

#[test]
fn reused_tensor_gradient_is_sum_of_single_uses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = rand_tensor(&mut rng, &[3, 3]);
    let a = rand_tensor(&mut rng, &[2, 3]);
    let b = rand_tensor(&mut rng, &[2, 3]);

    let single = |input: &Tensor<f64>| {
        let mut g = Graph::new();
        let wv = g.bind(&w, true);
        let x = g.leaf(input.clone(), false);
        let y = g.matmul(x, wv).unwrap();
        let y = g.gelu(y).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        g.grad(wv).unwrap().to_vec()
    };
    let ga = single(&a);
    let gb = single(&b);

    let mut g = Graph::new();
    let wv = g.bind(&w, true);
    let xa = g.leaf(a.clone(), false);
    let xb = g.leaf(b.clone(), false);
    let ya = g.matmul(xa, wv).unwrap();
    let ya = g.gelu(ya).unwrap();
    let yb = g.matmul(xb, wv).unwrap();
    let yb = g.gelu(yb).unwrap();
    let both = g.concat(&[ya, yb]).unwrap();
    let loss = g.sum(both).unwrap();
    g.backward(loss).unwrap();
    for ((x, y), z) in g.grad(wv).unwrap().iter().zip(&ga).zip(&gb) {
        assert!((x - (y + z)).abs() < 1e-12);
    }
}

/// Central finite differences over every parameter of a random 3-layer MLP.
#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = [6, 8, 7, 5];
    let mut params: Vec<Tensor<f64>> = Vec::new();
    for w in dims.windows(2) {
        params.push(rand_tensor(&mut rng, &[w[0], w[1]]));
        params.push(rand_tensor(&mut rng, &[w[1]]));
    }
    let gain = Tensor::from_fn(&[6], |i| 1.0 + 0.1 * i as f64);
    let bias = Tensor::from_fn(&[6], |i| 0.05 * i as f64);
    params.push(gain);
    params.push(bias);
    let input = rand_tensor(&mut rng, &[4, 6]);
    let targets = [0usize, 3, 4, 1];

    let loss_of = |ps: &[Tensor<f64>], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.bind(p, grads)).collect();
        let x = g.leaf(input.clone(), false);
        let mut h = g.layer_norm(x, vars[6], vars[7], 1e-5).unwrap();
        for layer in 0..3 {
            h = g.matmul(h, vars[2 * layer]).unwrap();
            h = g.add(h, vars[2 * layer + 1]).unwrap();
            if layer < 2 {
                h = g.gelu(h).unwrap();
            }
        }
        let h = g.scale(h, 1.5).unwrap();
        let loss = g.cross_entropy(h, &targets, None).unwrap();
        let value = g.value(loss).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        let gs = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
        (value, gs)
    };

    let (_, analytic) = loss_of(&params, true);
    let h = 1e-5;
    for (pi, grad) in analytic.iter().enumerate() {
        for i in 0..params[pi].numel() {
            let mut plus = params.clone();
            plus[pi].data_mut()[i] += h;
            let mut minus = params.clone();
            minus[pi].data_mut()[i] -= h;
            let numeric = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * h);
            let denom = numeric.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (numeric - grad[i]).abs() / denom < 1e-4 || (numeric - grad[i]).abs() < 1e-9,
                "param {pi}[{i}]: numeric {numeric} analytic {}",
                grad[i]
            );
        }
    }
}

#[test]
fn slice_transpose_concat_round_trip() {
    let x = Tensor::from_fn(&[3, 4], |i| i as f64);
    let mut g = Graph::new();
    let xv = g.bind(&x, true);
    let left = g.slice(xv, 0, 2).unwrap();
    let right = g.slice(xv, 2, 4).unwrap();
    let back = g.concat(&[left, right]).unwrap();
    assert_eq!(g.value(back), &x);
    let t = g.transpose(back).unwrap();
    assert_eq!(g.shape(t), &[4, 3]);
    assert_eq!(g.value(t).data()[1], 4.0);
    let loss = g.sum(t).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xv).unwrap(), &[1.0; 12]);
}
