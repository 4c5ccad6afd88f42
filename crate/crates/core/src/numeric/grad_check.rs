//! Central finite-difference checks for every differentiable op.

use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

/// Compare analytic gradients of `build` (a scalar-valued graph over the
/// given leaves) against central finite differences.
fn check_gradients(leaves: &[Tensor], build: impl Fn(&mut Tape, &[NodeId]) -> NodeId) {
    let run = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss).unwrap();

    for (leaf_idx, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(ids[leaf_idx], leaf).unwrap();
        for elem in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[leaf_idx].data_mut()[elem] += FD_STEP;
            let mut minus = leaves.to_vec();
            minus[leaf_idx].data_mut()[elem] -= FD_STEP;
            let fd = (run(&plus) - run(&minus)) / (2.0 * FD_STEP);
            let a = analytic.data()[elem];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / denom <= REL_TOL,
                "leaf {leaf_idx} elem {elem}: analytic {a} vs fd {fd}"
            );
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn matmul_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[4, 2]);
    check_gradients(&[a, b], |tape, ids| {
        let c = tape.matmul(ids[0], ids[1]);
        let t = tape.tanh(c);
        tape.sum(t)
    });
}

#[test]
fn add_and_broadcast_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = random_tensor(&mut rng, &[3, 4]);
    let v = random_tensor(&mut rng, &[4]);
    check_gradients(&[m, v], |tape, ids| {
        let s = tape.add_row_broadcast(ids[0], ids[1]);
        let t = tape.tanh(s);
        tape.sum(t)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_tensor(&mut rng, &[5]);
    let b = random_tensor(&mut rng, &[5]);
    check_gradients(&[a, b], |tape, ids| {
        let s = tape.add(ids[0], ids[1]);
        let t = tape.tanh(s);
        tape.sum(t)
    });
}

#[test]
fn scale_neg_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, &[6]);
    check_gradients(&[x], |tape, ids| {
        let s = tape.scale(ids[0], -2.5);
        let n = tape.neg(s);
        let t = tape.tanh(n);
        tape.sum(t)
    });
}

#[test]
fn activations_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[8]);
    check_gradients(&[x.clone()], |tape, ids| {
        let t = tape.tanh(ids[0]);
        tape.sum(t)
    });
    check_gradients(&[x.clone()], |tape, ids| {
        let t = tape.gelu(ids[0]);
        tape.sum(t)
    });
    // keep relu inputs away from the kink
    let far = Tensor::vector(vec![0.5, -0.7, 1.2, -0.3, 0.9]);
    check_gradients(&[far], |tape, ids| {
        let t = tape.relu(ids[0]);
        tape.sum(t)
    });
}

#[test]
fn softmax_masked_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, &[3, 5]);
    let w = random_tensor(&mut rng, &[5, 2]);
    let mask = Rc::new(vec![true, true, false, true, true]);
    check_gradients(&[x, w], |tape, ids| {
        let soft = tape.softmax_rows_masked(ids[0], mask.clone()).unwrap();
        // weight the outputs so the row-sum constraint does not zero the grad
        let t = tape.tanh(ids[1]);
        let prod = tape.matmul(soft, t);
        let s = tape.sum(prod);
        tape.tanh(s)
    });
}

#[test]
fn layer_norm_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[3, 6]);
    let gain = random_tensor(&mut rng, &[6]);
    let bias = random_tensor(&mut rng, &[6]);
    let probe = random_tensor(&mut rng, &[6, 1]);
    check_gradients(&[x, gain, bias], |tape, ids| {
        let ln = tape.layer_norm_rows(ids[0], ids[1], ids[2], 1e-6);
        let p = tape.constant(probe.clone());
        let proj = tape.matmul(ln, p);
        let t = tape.tanh(proj);
        tape.sum(t)
    });
}

#[test]
fn gather_mean_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let table = random_tensor(&mut rng, &[7, 4]);
    let idx = Rc::new(vec![2usize, 5, 2, 0]);
    check_gradients(&[table], |tape, ids| {
        let g = tape.gather_rows(ids[0], idx.clone());
        let m = tape.mean_rows(g);
        let t = tape.tanh(m);
        tape.sum(t)
    });
}

#[test]
fn concat_slice_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_tensor(&mut rng, &[2, 4]);
    let b = random_tensor(&mut rng, &[3, 4]);
    check_gradients(&[a, b], |tape, ids| {
        let cat = tape.concat_rows(&[ids[0], ids[1]]);
        let row = tape.slice_rows(cat, 1..4);
        let left = tape.slice_cols(row, 0..2);
        let right = tape.slice_cols(row, 2..4);
        let back = tape.concat_cols(&[right, left]);
        let t = tape.tanh(back);
        tape.sum(t)
    });
}

#[test]
fn loss_ops_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_tensor(&mut rng, &[5]);
    check_gradients(&[x.clone()], |tape, ids| {
        let ls = tape.log_sigmoid(ids[0]);
        tape.mean_all(ls)
    });
    check_gradients(&[x], |tape, ids| {
        let lse = tape.log_sum_exp(ids[0]);
        tape.tanh(lse)
    });
    let scalars = Tensor::vector(vec![0.3, -0.8, 0.1]);
    check_gradients(&[scalars], |tape, ids| {
        let parts: Vec<NodeId> = (0..3)
            .map(|i| {
                let row = tape.slice_cols(ids[0], i..i + 1);
                tape.sum(row)
            })
            .collect();
        let stacked = tape.stack_scalars(&parts);
        let t = tape.tanh(stacked);
        tape.mean_all(t)
    });
}

#[test]
fn matmul_nt_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random_tensor(&mut rng, &[3, 5]);
    let b = random_tensor(&mut rng, &[4, 5]);
    check_gradients(&[a, b], |tape, ids| {
        let c = tape.matmul_nt(ids[0], ids[1]);
        let t = tape.tanh(c);
        tape.sum(t)
    });
}

#[test]
fn composed_attention_block_grad() {
    // one masked self-attention head with residual + layer norm
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&mut rng, &[4, 6]);
    let wq = random_tensor(&mut rng, &[6, 6]);
    let wk = random_tensor(&mut rng, &[6, 6]);
    let wv = random_tensor(&mut rng, &[6, 6]);
    let gain = random_tensor(&mut rng, &[6]);
    let bias = random_tensor(&mut rng, &[6]);
    let mask = Rc::new(vec![true, true, true, false]);
    check_gradients(&[x, wq, wk, wv, gain, bias], |tape, ids| {
        let (x, wq, wk, wv, gain, bias) = (ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]);
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        let qk = tape.matmul_nt(q, k);
        let scaled = tape.scale(qk, 1.0 / 6.0f64.sqrt());
        let soft = tape.softmax_rows_masked(scaled, mask.clone()).unwrap();
        let mixed = tape.matmul(soft, v);
        let residual = tape.add(x, mixed);
        let normed = tape.layer_norm_rows(residual, gain, bias, 1e-6);
        let t = tape.tanh(normed);
        tape.mean_all(t)
    });
}
