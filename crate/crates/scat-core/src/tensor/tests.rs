//! Finite-difference validation of every backward rule.
//!
//! Each test builds a scalar loss through one or more ops, computes analytic
//! gradients with `backward`, and compares against central differences. The
//! finite-difference side only calls graph *forward* evaluation, so it is
//! independent of the backward implementation under test.

use super::*;
use crate::rng;
use rand_distr::{Distribution, Normal};

fn randn(seed: u64, rows: usize, cols: usize) -> Mat {
    let mut r = rng::stream(7, "tensor-test", &[seed]);
    let dist = Normal::new(0.0, 1.0).unwrap();
    Mat::from_shape_fn((rows, cols), |_| dist.sample(&mut r))
}

/// Max relative error between analytic and finite-difference gradients.
fn max_rel_err(analytic: &Mat, fd: &Mat) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(&a, &f)| (a - f).abs() / (a.abs() + f.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Finite-difference gradient of `loss_fn` with respect to parameter `id`.
fn fd_param_grad(
    store: &mut ParamStore,
    id: ParamId,
    loss_fn: &dyn Fn(&ParamStore) -> f64,
) -> Mat {
    let h = 1e-5;
    let shape = store.get(id).raw_dim();
    let mut fd = Mat::zeros(shape.clone());
    for r in 0..shape[0] {
        for c in 0..shape[1] {
            let orig = store.get(id)[[r, c]];
            store.get_mut(id)[[r, c]] = orig + h;
            let up = loss_fn(store);
            store.get_mut(id)[[r, c]] = orig - h;
            let down = loss_fn(store);
            store.get_mut(id)[[r, c]] = orig;
            fd[[r, c]] = (up - down) / (2.0 * h);
        }
    }
    fd
}

/// Run analytic backward and finite differences for a graph builder over a
/// single parameter store, checking every registered parameter.
fn assert_grads_match<F>(store: &mut ParamStore, build: F, tol: f64)
where
    F: Fn(&mut Graph) -> NodeId,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g);
        g.backward(loss)
    };
    let loss_fn = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let loss = build(&mut g);
        g.value(loss)[[0, 0]]
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let fd = fd_param_grad(store, id, &loss_fn);
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(fd.raw_dim()));
        let err = max_rel_err(&analytic, &fd);
        assert!(
            err < tol,
            "param {} rel err {err:.3e} exceeds {tol:.1e}",
            store.name(id),
        );
    }
}

#[test]
fn matmul_add_relu_chain() {
    let mut store = ParamStore::new();
    let w1 = store.add("w1", randn(1, 4, 5));
    let b1 = store.add("b1", randn(2, 1, 5));
    let w2 = store.add("w2", randn(3, 5, 3));
    let x = randn(4, 6, 4);
    assert_grads_match(
        &mut store,
        |g| {
            let xn = g.input(x.clone());
            let w1n = g.param(w1);
            let b1n = g.param(b1);
            let w2n = g.param(w2);
            let h = g.matmul(xn, w1n);
            let h = g.add_row(h, b1n);
            let h = g.relu(h);
            let out = g.matmul(h, w2n);
            g.mean_all(out)
        },
        1e-5,
    );
}

#[test]
fn gelu_and_mul_row() {
    let mut store = ParamStore::new();
    let w = store.add("w", randn(10, 3, 4));
    let gain = store.add("gain", randn(11, 1, 4));
    assert_grads_match(
        &mut store,
        |g| {
            let wn = g.param(w);
            let gn = g.param(gain);
            let h = g.gelu(wn);
            let h = g.mul_row(h, gn);
            g.sum_all(h)
        },
        1e-5,
    );
}

#[test]
fn softmax_rows_backward() {
    let mut store = ParamStore::new();
    let w = store.add("w", randn(20, 4, 6));
    let mask = randn(21, 4, 6);
    assert_grads_match(
        &mut store,
        |g| {
            let wn = g.param(w);
            let s = g.softmax_rows(wn);
            let m = g.input(mask.clone());
            let prod = g.mul(s, m);
            g.sum_all(prod)
        },
        1e-5,
    );
}

#[test]
fn layer_norm_backward() {
    let mut store = ParamStore::new();
    let w = store.add("w", randn(30, 5, 8));
    let probe = randn(31, 5, 8);
    assert_grads_match(
        &mut store,
        |g| {
            let wn = g.param(w);
            let n = g.layer_norm_rows(wn, 1e-5);
            let p = g.input(probe.clone());
            let prod = g.mul(n, p);
            g.mean_all(prod)
        },
        1e-4,
    );
}

#[test]
fn l2_normalize_backward() {
    let mut store = ParamStore::new();
    let w = store.add("w", randn(40, 4, 7));
    let probe = randn(41, 4, 7);
    assert_grads_match(
        &mut store,
        |g| {
            let wn = g.param(w);
            let n = g.l2_normalize_rows(wn);
            let p = g.input(probe.clone());
            let prod = g.mul(n, p);
            g.sum_all(prod)
        },
        1e-5,
    );
}

#[test]
fn gather_rows_and_row_backward() {
    let mut store = ParamStore::new();
    let emb = store.add("emb", randn(50, 8, 5));
    let probe = randn(51, 1, 5);
    assert_grads_match(
        &mut store,
        |g| {
            let e = g.param(emb);
            // Repeated index 3 exercises scatter-add accumulation.
            let gathered = g.gather_rows(e, vec![3, 0, 3, 7]);
            let r = g.row(gathered, 2);
            let p = g.input(probe.clone());
            let prod = g.mul(r, p);
            g.sum_all(prod)
        },
        1e-5,
    );
}

#[test]
fn matmul_trans_b_backward() {
    let mut store = ParamStore::new();
    let a = store.add("a", randn(60, 3, 6));
    let b = store.add("b", randn(61, 4, 6));
    assert_grads_match(
        &mut store,
        |g| {
            let an = g.param(a);
            let bn = g.param(b);
            let s = g.matmul_trans_b(an, bn);
            g.mean_all(s)
        },
        1e-5,
    );
}

#[test]
fn concat_and_scale_backward() {
    let mut store = ParamStore::new();
    let a = store.add("a", randn(70, 3, 2));
    let b = store.add("b", randn(71, 3, 4));
    let c = store.add("c", randn(72, 2, 6));
    let probe = randn(73, 5, 6);
    assert_grads_match(
        &mut store,
        |g| {
            let an = g.param(a);
            let bn = g.param(b);
            let cn = g.param(c);
            let cols = g.concat_cols(vec![an, bn]);
            let rows = g.concat_rows(vec![cols, cn]);
            let scaled = g.scale(rows, 0.37);
            let p = g.input(probe.clone());
            let prod = g.mul(scaled, p);
            g.sum_all(prod)
        },
        1e-5,
    );
}

#[test]
fn sub_and_mul_backward() {
    let mut store = ParamStore::new();
    let a = store.add("a", randn(80, 4, 4));
    let b = store.add("b", randn(81, 4, 4));
    assert_grads_match(
        &mut store,
        |g| {
            let an = g.param(a);
            let bn = g.param(b);
            let d = g.sub(an, bn);
            let sq = g.mul(d, d);
            g.sum_all(sq)
        },
        1e-5,
    );
}

#[test]
fn lse_skip_diag_and_gather_entries_backward() {
    let mut store = ParamStore::new();
    let z = store.add("z", randn(90, 5, 5));
    assert_grads_match(
        &mut store,
        |g| {
            let zn = g.param(z);
            let lse = g.log_sum_exp_rows_skip_diag(zn);
            let picked = g.gather_entries(zn, vec![(0, 1), (1, 0), (2, 3), (2, 3)]);
            let lsum = g.sum_all(lse);
            let psum = g.sum_all(picked);
            let diff = g.sub(lsum, psum);
            g.scale(diff, 0.5)
        },
        1e-5,
    );
}

#[test]
fn cross_entropy_backward() {
    let mut store = ParamStore::new();
    let w = store.add("w", randn(100, 4, 3));
    let x = randn(101, 6, 4);
    assert_grads_match(
        &mut store,
        |g| {
            let xn = g.input(x.clone());
            let wn = g.param(w);
            let logits = g.matmul(xn, wn);
            g.cross_entropy_mean(logits, vec![0, 2, 1, 1, 0, 2])
        },
        1e-5,
    );
}

#[test]
fn transformer_like_composite() {
    // A miniature attention block end-to-end: QKV projections, scaled
    // dot-product attention, residual + layer norm, GELU feed-forward,
    // pooling, and a contrastive-style scalar.
    let mut store = ParamStore::new();
    let d = 6;
    let dh = 3;
    let wq = store.add("wq", randn(110, d, dh));
    let wk = store.add("wk", randn(111, d, dh));
    let wv = store.add("wv", randn(112, d, dh));
    let wo = store.add("wo", randn(113, dh, d));
    let w1 = store.add("w1", randn(114, d, 8));
    let w2 = store.add("w2", randn(115, 8, d));
    let x = randn(116, 5, d);
    let other = crate::tensor::kernels::l2_normalize_rows(&randn(117, 3, d));
    assert_grads_match(
        &mut store,
        |g| {
            let xn = g.input(x.clone());
            let q = {
                let w = g.param(wq);
                g.matmul(xn, w)
            };
            let k = {
                let w = g.param(wk);
                g.matmul(xn, w)
            };
            let v = {
                let w = g.param(wv);
                g.matmul(xn, w)
            };
            let scores = g.matmul_trans_b(q, k);
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = g.softmax_rows(scores);
            let ctx = g.matmul(attn, v);
            let proj = {
                let w = g.param(wo);
                g.matmul(ctx, w)
            };
            let res = g.add(xn, proj);
            let normed = g.layer_norm_rows(res, 1e-5);
            let ff = {
                let w = g.param(w1);
                let h = g.matmul(normed, w);
                let h = g.gelu(h);
                let w = g.param(w2);
                g.matmul(h, w)
            };
            let out = g.add(normed, ff);
            let pooled = g.row(out, 0);
            let z = g.l2_normalize_rows(pooled);
            let negs = g.input(other.clone());
            let sims = g.matmul_trans_b(z, negs);
            let logits = g.scale(sims, 2.0);
            g.cross_entropy_mean(logits, vec![1])
        },
        1e-4,
    );
}

#[test]
fn node_gradient_matches_finite_difference_on_input() {
    // Gradient with respect to an *input* node (not a parameter): the basis
    // of embedding-gradient word ranking.
    let store = ParamStore::new();
    let x = randn(120, 4, 5);
    let probe = randn(121, 4, 3);
    let w = randn(122, 5, 3);

    let eval = |xv: &Mat| {
        let mut g = Graph::new(&store);
        let xn = g.input(xv.clone());
        let wn = g.input(w.clone());
        let h = g.matmul(xn, wn);
        let h = g.gelu(h);
        let p = g.input(probe.clone());
        let prod = g.mul(h, p);
        let loss = g.mean_all(prod);
        g.value(loss)[[0, 0]]
    };

    let (analytic, _) = {
        let mut g = Graph::new(&store);
        let xn = g.input(x.clone());
        let wn = g.input(w.clone());
        let h = g.matmul(xn, wn);
        let h = g.gelu(h);
        let p = g.input(probe.clone());
        let prod = g.mul(h, p);
        let loss = g.mean_all(prod);
        let grads = g.backward(loss);
        (grads.node(xn).unwrap().clone(), loss)
    };

    let h = 1e-5;
    let mut fd = Mat::zeros(x.raw_dim());
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let up = eval(&xp);
            xp[[r, c]] -= 2.0 * h;
            let down = eval(&xp);
            fd[[r, c]] = (up - down) / (2.0 * h);
        }
    }
    assert!(max_rel_err(&analytic, &fd) < 1e-5);
}

#[test]
fn backward_seeded_skips_param_grads_when_asked() {
    let mut store = ParamStore::new();
    let w = store.add("w", randn(130, 3, 3));
    let mut g = Graph::new(&store);
    let wn = g.param(w);
    let x = g.input(randn(131, 2, 3));
    let h = g.matmul(x, wn);
    let loss = g.sum_all(h);
    let grads = g.backward_seeded(loss, Mat::from_elem((1, 1), 1.0), false);
    assert!(grads.param(w).is_none());
    assert!(grads.node(x).is_some());
}

#[test]
fn param_grads_accumulate_deterministically() {
    let mut store = ParamStore::new();
    let w = store.add("w", randn(140, 3, 3));
    let per_example: Vec<ParamGrads> = (0..8)
        .map(|i| {
            let mut g = Graph::new(&store);
            let wn = g.param(w);
            let x = g.input(randn(141 + i, 2, 3));
            let h = g.matmul(x, wn);
            let loss = g.sum_all(h);
            g.backward(loss).into_param_grads()
        })
        .collect();
    let mut a = ParamGrads::new();
    for g in &per_example {
        a.accumulate(g);
    }
    let mut b = ParamGrads::new();
    for g in &per_example {
        b.accumulate(g);
    }
    assert_eq!(a.get(w).unwrap(), b.get(w).unwrap());
    assert!(a.global_norm() > 0.0);
}
