//! Per-kernel gradient verification against central finite differences
//! evaluated in 64-bit precision. Each test pairs the tape implementation
//! with an independent straight-line f64 reference of the same kernel.

use super::{Tape, Tensor, Var};
use crate::rng::SeededRng;

const FD_H: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;

fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8)
}

fn randn(rng: &mut SeededRng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.normal() as f32).collect()
}

/// Checks autodiff grads of a scalar-valued graph against central FD on an
/// independent f64 evaluation of the same function.
fn check(
    inputs: &[(Vec<usize>, Vec<f32>)],
    forward: impl Fn(&mut Tape, &[Var]) -> Var,
    eval64: impl Fn(&[Vec<f64>]) -> f64,
) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(shape, data)| {
            let t = Tensor::new(shape.clone(), data.clone()).unwrap().trainable();
            tape.leaf(&t)
        })
        .collect();
    let loss = forward(&mut tape, &vars);
    assert_eq!(tape.value(loss).numel(), 1, "check expects a scalar output");
    tape.backward(loss).unwrap();

    let base: Vec<Vec<f64>> = inputs
        .iter()
        .map(|(_, d)| d.iter().map(|&v| v as f64).collect())
        .collect();
    for (ti, (_, data)) in inputs.iter().enumerate() {
        let grad = tape.grad(vars[ti]).expect("trainable leaf has grad");
        for j in 0..data.len() {
            let mut plus = base.clone();
            plus[ti][j] += FD_H;
            let mut minus = base.clone();
            minus[ti][j] -= FD_H;
            let fd = (eval64(&plus) - eval64(&minus)) / (2.0 * FD_H);
            let ad = grad[j] as f64;
            assert!(
                rel_err(ad, fd) < REL_TOL,
                "input {ti} elem {j}: ad={ad} fd={fd} rel={}",
                rel_err(ad, fd)
            );
        }
    }
}

/// Applies a fixed linear functional sum(c * y) to reduce a tensor output
/// to a scalar, on the tape side.
fn reduce(tape: &mut Tape, y: Var, c: &[f32]) -> Var {
    let ct = Tensor::new(tape.value(y).shape().to_vec(), c.to_vec()).unwrap();
    let cv = tape.constant(ct);
    let prod = tape.mul(y, cv).unwrap();
    tape.sum_all(prod).unwrap()
}

fn dot64(y: &[f64], c: &[f32]) -> f64 {
    y.iter().zip(c).map(|(&a, &b)| a * b as f64).sum()
}

#[test]
fn matmul_grad_matches_fd() {
    let mut rng = SeededRng::new(101, 0);
    let (m, k, n) = (3, 4, 2);
    let a = randn(&mut rng, m * k);
    let b = randn(&mut rng, k * n);
    let c = randn(&mut rng, m * n);
    check(
        &[(vec![m, k], a), (vec![k, n], b)],
        |tape, vars| {
            let y = tape.matmul(vars[0], vars[1]).unwrap();
            reduce(tape, y, &c)
        },
        |xs| {
            let mut y = vec![0.0f64; m * n];
            for i in 0..m {
                for j in 0..n {
                    for p in 0..k {
                        y[i * n + j] += xs[0][i * k + p] * xs[1][p * n + j];
                    }
                }
            }
            dot64(&y, &c)
        },
    );
}

#[test]
fn add_mul_scale_bias_grads_match_fd() {
    let mut rng = SeededRng::new(102, 0);
    let (m, n) = (3, 5);
    let a = randn(&mut rng, m * n);
    let b = randn(&mut rng, m * n);
    let bias = randn(&mut rng, n);
    let c = randn(&mut rng, m * n);
    check(
        &[
            (vec![m, n], a),
            (vec![m, n], b),
            (vec![n], bias),
        ],
        |tape, vars| {
            let s = tape.add(vars[0], vars[1]).unwrap();
            let p = tape.mul(s, vars[0]).unwrap();
            let sc = tape.scale(p, 0.37).unwrap();
            let y = tape.add_bias(sc, vars[2]).unwrap();
            reduce(tape, y, &c)
        },
        |xs| {
            let mut y = vec![0.0f64; m * n];
            for i in 0..m {
                for j in 0..n {
                    let idx = i * n + j;
                    y[idx] = (xs[0][idx] + xs[1][idx]) * xs[0][idx] * 0.37 + xs[2][j];
                }
            }
            dot64(&y, &c)
        },
    );
}

#[test]
fn tanh_gelu_grads_match_fd() {
    let mut rng = SeededRng::new(103, 0);
    let n = 9;
    let x = randn(&mut rng, n);
    let c = randn(&mut rng, n);
    check(
        &[(vec![n], x)],
        |tape, vars| {
            let t = tape.tanh(vars[0]).unwrap();
            let g = tape.gelu(t).unwrap();
            reduce(tape, g, &c)
        },
        |xs| {
            let y: Vec<f64> = xs[0]
                .iter()
                .map(|&v| {
                    let t = v.tanh();
                    0.5 * t * (1.0 + libm::erf(t / std::f64::consts::SQRT_2))
                })
                .collect();
            dot64(&y, &c)
        },
    );
}

#[test]
fn softmax_grad_matches_fd() {
    let mut rng = SeededRng::new(104, 0);
    let (m, n) = (2, 5);
    let x = randn(&mut rng, m * n);
    let c = randn(&mut rng, m * n);
    check(
        &[(vec![m, n], x)],
        |tape, vars| {
            let y = tape.softmax_lastdim(vars[0]).unwrap();
            reduce(tape, y, &c)
        },
        |xs| {
            let mut y = vec![0.0f64; m * n];
            for s in 0..m {
                let row = &xs[0][s * n..(s + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                for j in 0..n {
                    y[s * n + j] = (row[j] - max).exp() / sum;
                }
            }
            dot64(&y, &c)
        },
    );
}

#[test]
fn layer_norm_grad_matches_fd() {
    let mut rng = SeededRng::new(105, 0);
    let (m, n) = (3, 6);
    let x = randn(&mut rng, m * n);
    let gamma: Vec<f32> = randn(&mut rng, n).iter().map(|v| v + 1.0).collect();
    let beta = randn(&mut rng, n);
    let c = randn(&mut rng, m * n);
    let eps = 1e-5f64;
    check(
        &[(vec![m, n], x), (vec![n], gamma), (vec![n], beta)],
        |tape, vars| {
            let y = tape
                .layer_norm(vars[0], vars[1], vars[2], eps as f32)
                .unwrap();
            reduce(tape, y, &c)
        },
        |xs| {
            let mut y = vec![0.0f64; m * n];
            for s in 0..m {
                let row = &xs[0][s * n..(s + 1) * n];
                let mean: f64 = row.iter().sum::<f64>() / n as f64;
                let var: f64 = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for j in 0..n {
                    y[s * n + j] = (row[j] - mean) * inv * xs[1][j] + xs[2][j];
                }
            }
            dot64(&y, &c)
        },
    );
}

#[test]
fn structural_op_grads_match_fd() {
    let mut rng = SeededRng::new(106, 0);
    let (m, n) = (4, 6);
    let x = randn(&mut rng, m * n);
    let row = randn(&mut rng, 3);
    let c1 = randn(&mut rng, 2 * 3);
    let c2 = randn(&mut rng, 3);
    let mask = [true, false, false, true];
    check(
        &[(vec![m, n], x), (vec![3], row)],
        |tape, vars| {
            let tr = tape.transpose(vars[0]).unwrap(); // [n,m]
            let sl = tape.slice_cols(tr, 1, 3).unwrap(); // [n,3]
            let left = tape.slice_cols(sl, 0, 1).unwrap();
            let right = tape.slice_cols(sl, 1, 2).unwrap();
            let cat = tape.concat_cols(&[left, right]).unwrap(); // [n,3]
            let head = tape.gather_rows(cat, &[0, 1, 2, 5]).unwrap(); // [4,3]
            let ov = tape.overwrite_rows(head, &mask, vars[1]).unwrap(); // [4,3]
            let mr = tape.mean_rows(ov).unwrap(); // [1,3]
            let g = tape.gather_rows(ov, &[1, 2]).unwrap(); // [2,3]
            let s1 = reduce(tape, g, &c1);
            let s2 = reduce(tape, mr, &c2);
            tape.add(s1, s2).unwrap()
        },
        |xs| {
            // transpose -> cols 1..4 -> rows {0,1,2,5} -> overwrite -> stats
            let x = &xs[0];
            let sl = |r: usize, cc: usize| x[(cc + 1) * n + r];
            let rows = [0usize, 1, 2, 5];
            let mut ov = [[0.0f64; 3]; 4];
            for (i, &r) in rows.iter().enumerate() {
                for j in 0..3 {
                    ov[i][j] = if mask[i] { xs[1][j] } else { sl(r, j) };
                }
            }
            let mut mr = [0.0f64; 3];
            for j in 0..3 {
                for row in &ov {
                    mr[j] += row[j];
                }
                mr[j] /= 4.0;
            }
            let mut y = vec![0.0f64; 6];
            for (i, &r) in [1usize, 2].iter().enumerate() {
                for j in 0..3 {
                    y[i * 3 + j] = ov[r][j];
                }
            }
            dot64(&y, &c1) + dot64(&mr, &c2)
        },
    );
}

#[test]
fn reductions_and_ce_grads_match_fd() {
    let mut rng = SeededRng::new(107, 0);
    let (m, cdim) = (4, 3);
    let logits = randn(&mut rng, m * cdim);
    let targets = [0usize, 2, 1, 1];
    check(
        &[(vec![m, cdim], logits)],
        |tape, vars| {
            let ma = tape.mean_all(vars[0]).unwrap();
            let ce = tape.cross_entropy(vars[0], &targets).unwrap();
            let both = tape.add(ma, ce).unwrap();
            tape.sum_all(both).unwrap()
        },
        |xs| {
            let mean: f64 = xs[0].iter().sum::<f64>() / (m * cdim) as f64;
            let mut ce = 0.0f64;
            for (i, &t) in targets.iter().enumerate() {
                let row = &xs[0][i * cdim..(i + 1) * cdim];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                ce += sum.ln() + max - row[t];
            }
            mean + ce / m as f64
        },
    );
}
