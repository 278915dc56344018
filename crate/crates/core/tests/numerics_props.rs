mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vern::numerics::{Mode, Tape, Tensor, Var};

use common::{rng, uniform};

fn tensor_strategy(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

fn sized(max: usize) -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1..=max, 1..=max, 1..=max, 1..=max)
}

proptest! {
    #[test]
    fn matmul_is_associative(
        (m, k, l, n) in sized(8),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let a = uniform(&mut r, m, k, -1.0, 1.0);
        let b = uniform(&mut r, k, l, -1.0, 1.0);
        let c = uniform(&mut r, l, n, -1.0, 1.0);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) <= 1e-9);
    }

    #[test]
    fn normalize_is_idempotent(x in tensor_strategy(4, 6, -2.0, 2.0)) {
        let once = x.row_l2_normalize(1e-8);
        let twice = once.row_l2_normalize(1e-8);
        prop_assert!(once.max_abs_diff(&twice) <= 1e-12);
    }

    #[test]
    fn eval_dropout_is_identity(x in tensor_strategy(3, 5, -2.0, 2.0), p in 0.0f64..0.99) {
        let tape = Tape::new();
        let v = tape.constant(&x);
        let out = tape.dropout(v, p, &mut Mode::Eval).unwrap();
        prop_assert_eq!(&*tape.value(out), &x);
    }

    #[test]
    fn dropout_survivors_are_rescaled(x in tensor_strategy(4, 8, 0.5, 2.0), seed in any::<u64>()) {
        let tape = Tape::new();
        let v = tape.constant(&x);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let out = tape.dropout(v, 0.2, &mut Mode::Train(&mut r)).unwrap();
        let out = tape.value(out);
        let keep = 1.0 / (1.0 - 0.2);
        for (o, i) in out.data().iter().zip(x.data()) {
            prop_assert!(*o == 0.0 || *o == i * keep);
        }
    }
}

/// Rank-one weighting `Σ a_i b_j y_ij` so that every output entry matters.
fn weighted_sum(tape: &Tape<'_>, y: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(y);
    let mut g = rng(seed);
    let left = tape.constant_owned(uniform(&mut g, 1, r, 0.5, 1.5));
    let right = tape.constant_owned(uniform(&mut g, c, 1, -1.5, 1.5));
    let ly = tape.matmul(left, y).unwrap();
    tape.matmul(ly, right).unwrap()
}

/// Checks the gradient of every input of `f` against central differences.
fn check_op(inputs: &[Tensor], f: &dyn Fn(&Tape<'_>, &[Var]) -> Var) {
    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x)).collect();
        let y = f(&tape, &vars);
        let out = weighted_sum(&tape, y, 99);
        let v = tape.value(out).get(0, 0);
        v
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x)).collect();
    let y = f(&tape, &vars);
    let out = weighted_sum(&tape, y, 99);
    let grads = tape.backward(out).unwrap();
    let eps = 1e-5;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        for e in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[e] += eps;
            let up = eval(&xs);
            xs[i].data_mut()[e] -= 2.0 * eps;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / (a.abs() + 1e-8);
            assert!(rel <= 1e-4, "input {i} entry {e}: analytic {a}, numeric {numeric}");
        }
    }
}

/// Uniform in [-2, 2], resampled away from zero so ReLU kinks stay out of reach.
fn away_from_zero(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut g = rng(seed);
    let mut t = uniform(&mut g, rows, cols, -2.0, 2.0);
    for v in t.data_mut() {
        while v.abs() < 1e-3 {
            *v = uniform(&mut g, 1, 1, -2.0, 2.0).get(0, 0);
        }
    }
    t
}

fn inputs(seed: u64, shapes: &[(usize, usize)]) -> Vec<Tensor> {
    let mut g = rng(seed);
    shapes.iter().map(|&(r, c)| uniform(&mut g, r, c, -2.0, 2.0)).collect()
}

#[test]
fn matmul_gradients() {
    check_op(&inputs(1, &[(3, 4), (4, 2)]), &|t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn add_and_add_row_gradients() {
    check_op(&inputs(2, &[(3, 4), (3, 4)]), &|t, v| t.add(v[0], v[1]).unwrap());
    check_op(&inputs(3, &[(3, 4), (1, 4)]), &|t, v| t.add_row(v[0], v[1]).unwrap());
}

#[test]
fn scale_and_sum_gradients() {
    check_op(&inputs(4, &[(2, 3)]), &|t, v| t.scale(v[0], -1.75).unwrap());
    check_op(&inputs(5, &[(2, 3)]), &|t, v| t.sum(v[0]).unwrap());
}

#[test]
fn relu_gradients() {
    check_op(&[away_from_zero(6, 4, 5)], &|t, v| t.relu(v[0]).unwrap());
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    check_op(&inputs(7, &[(4, 5)]), &|t, v| {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        t.dropout(v[0], 0.3, &mut Mode::Train(&mut r)).unwrap()
    });
}

#[test]
fn normalize_gradients() {
    check_op(&inputs(8, &[(4, 3)]), &|t, v| t.row_l2_normalize(v[0], 1e-8).unwrap());
}

#[test]
fn mean_and_concat_gradients() {
    check_op(&inputs(9, &[(5, 3)]), &|t, v| t.mean_rows(v[0]).unwrap());
    check_op(&inputs(10, &[(3, 2), (3, 4)]), &|t, v| t.concat_cols(v[0], v[1]).unwrap());
}

#[test]
fn neighbor_mean_gradients() {
    let neighbors: &'static [Vec<usize>] = Box::leak(Box::new([vec![1, 2], vec![0], vec![0, 3], vec![2], vec![]]));
    check_op(&inputs(12, &[(5, 3)]), &|t, v| t.neighbor_mean(v[0], neighbors).unwrap());
}

#[test]
fn bce_gradients() {
    for (seed, target, w) in [(13, 1.0, 1.0), (14, 0.0, 1.0), (15, 1.0, 2.5)] {
        check_op(&inputs(seed, &[(1, 1)]), &|t, v| t.bce_with_logits(v[0], target, w).unwrap());
    }
}

#[test]
fn chained_layers_gradients() {
    let xs = vec![away_from_zero(16, 4, 3), inputs(17, &[(3, 3)]).remove(0)];
    check_op(&xs, &|t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let n = t.row_l2_normalize(h, 1e-8).unwrap();
        t.mean_rows(n).unwrap()
    });
}
