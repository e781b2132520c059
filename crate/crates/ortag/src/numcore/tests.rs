use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, grad_check_multi, NumError, Tape, Tensor};

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len(), "length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!((a - e).abs() <= tol, "entry {i}: {a} vs {e}");
    }
}

/// Values bounded away from zero so relu and max ties stay off the
/// finite-difference step.
fn rand_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, rand_values(rng, r * c)).unwrap()
}

fn rand_vector(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::vector(rand_values(rng, n)).unwrap()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=8)
}

// ── micro examples ──────────────────────────────────────────────────────

#[test]
fn matmul_identity_preserves_rhs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    for k in 1..=5 {
        let a = rand_matrix(&mut rng, 3, k);
        let mut tape = Tape::new();
        let i = tape.constant(eye.clone());
        let v = tape.constant(a.clone());
        let out = tape.matmul(i, v).unwrap();
        assert_close(tape.value(out).values(), a.values(), 1e-12);
    }
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
    let y = tape.sigmoid(x).unwrap();
    assert_close(tape.value(y).values(), &[0.5, 0.5], 1e-12);
}

#[test]
fn max_over_time_takes_per_channel_max() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(2, 2, vec![1.0, 4.0, 3.0, 2.0]).unwrap());
    let y = tape.max_over_time(x).unwrap();
    assert_close(tape.value(y).values(), &[3.0, 4.0], 1e-12);
}

#[test]
fn cumax_of_zeros_is_uniform_prefix_sum() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0; 4]).unwrap());
    let y = tape.cumax(x).unwrap();
    assert_close(tape.value(y).values(), &[0.25, 0.50, 0.75, 1.00], 1e-12);
}

#[test]
fn cumax_saturates_at_large_leading_entry() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![100.0, 0.0, 0.0]).unwrap());
    let y = tape.cumax(x).unwrap();
    assert_close(tape.value(y).values(), &[1.0, 1.0, 1.0], 1e-9);
}

#[test]
fn cumax_matches_direct_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_vector(&mut rng, 6);

    let max = x.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.values().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut expected = Vec::new();
    let mut acc = 0.0;
    for e in &exps {
        acc += e / total;
        expected.push(acc);
    }

    let mut tape = Tape::new();
    let v = tape.constant(x);
    let y = tape.cumax(v).unwrap();
    assert_close(tape.value(y).values(), &expected, 1e-12);
}

#[test]
fn backward_of_sum_of_squares_doubles_input() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
    let sq = tape.hadamard(a, a).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    assert_close(tape.grad(a).unwrap(), &[2.0, 4.0], 1e-12);
}

#[test]
fn backward_of_logsumexp_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap().with_grad());
    let loss = tape.logsumexp(x).unwrap();
    tape.backward(loss).unwrap();
    assert_close(tape.grad(x).unwrap(), &[0.5, 0.5], 1e-12);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
    let err = tape.backward(x).unwrap_err();
    assert!(matches!(err, NumError::Contract(_)));
}

#[test]
fn fan_out_gradients_accumulate() {
    // loss = sum(a) + sum(a) should give grad 2 everywhere.
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![3.0, -1.0, 0.5]).unwrap().with_grad());
    let s1 = tape.sum(a).unwrap();
    let s2 = tape.sum(a).unwrap();
    let loss = tape.add(s1, s2).unwrap();
    tape.backward(loss).unwrap();
    assert_close(tape.grad(a).unwrap(), &[2.0, 2.0, 2.0], 1e-12);
}

#[test]
fn grad_check_of_linear_sum_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_vector(&mut rng, 7);
    let err = grad_check(&x, 1e-5, |tape, v| tape.sum(v)).unwrap();
    assert!(err < 1e-10, "linear grad check error {err}");
}

#[test]
fn grad_check_of_cumax_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_vector(&mut rng, 8);
    let err = grad_check(&x, 1e-5, |tape, v| {
        let y = tape.cumax(v)?;
        tape.sum(y)
    })
    .unwrap();
    assert!(err < 1e-6, "cumax grad check error {err}");
}

#[test]
fn shape_errors_name_the_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    let b = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul"), "message was {msg}");
    assert!(msg.contains('3') && msg.contains('2'), "message was {msg}");
}

#[test]
fn dropout_rejects_bad_probability() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1.0]).unwrap());
    assert!(matches!(tape.dropout(x, 1.0, 0, true), Err(NumError::Config(_))));
    assert!(matches!(tape.dropout(x, -0.1, 0, true), Err(NumError::Config(_))));
}

#[test]
fn dropout_is_identity_in_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_vector(&mut rng, 32);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.dropout(v, 0.5, 9, false).unwrap();
    assert_eq!(y, v, "inference dropout must not add a node");
    assert_close(tape.value(y).values(), x.values(), 0.0);
}

#[test]
fn dropout_mask_is_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_vector(&mut rng, 64);
    let run = |seed: u64| {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.dropout(v, 0.4, seed, true).unwrap();
        tape.value(y).values().to_vec()
    };
    assert_eq!(run(7), run(7), "same seed must give the same mask");
    assert_ne!(run(7), run(8), "different seeds should differ on 64 entries");
    let dropped = run(7).iter().filter(|v| **v == 0.0).count();
    assert!(dropped > 0, "p=0.4 on 64 entries should drop something");
}

#[test]
fn dropout_scales_kept_entries_by_inverse_keep_rate() {
    let x = Tensor::vector(vec![1.0; 50]).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let y = tape.dropout(v, 0.2, 11, true).unwrap();
    for kept in tape.value(y).values().iter().filter(|v| **v != 0.0) {
        assert!((kept - 1.0 / 0.8).abs() < 1e-12);
    }
}

// ── per-primitive gradient checks over random shapes ────────────────────

const SHAPES_PER_PRIMITIVE: usize = 50;
const PRIMITIVE_TOL: f64 = 1e-6;

fn check_all<F>(name: &str, rng: &mut ChaCha8Rng, mut case: F)
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    let mut worst = 0.0f64;
    for _ in 0..SHAPES_PER_PRIMITIVE {
        worst = worst.max(case(rng));
    }
    assert!(worst < PRIMITIVE_TOL, "{name}: worst grad error {worst}");
}

#[test]
fn grad_matmul_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    check_all("matmul mm", &mut rng, |rng| {
        let (m, k, n) = (dim(rng), dim(rng), dim(rng));
        let inputs = [rand_matrix(rng, m, k), rand_matrix(rng, k, n)];
        grad_check_multi(&inputs, 1e-5, |tape, vs| {
            let y = tape.matmul(vs[0], vs[1])?;
            tape.sum(y)
        })
        .unwrap()
    });
}

#[test]
fn grad_matmul_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    check_all("matmul mv", &mut rng, |rng| {
        let (m, k) = (dim(rng), dim(rng));
        let inputs = [rand_matrix(rng, m, k), rand_vector(rng, k)];
        grad_check_multi(&inputs, 1e-5, |tape, vs| {
            let y = tape.matmul(vs[0], vs[1])?;
            let y = tape.tanh(y)?;
            tape.sum(y)
        })
        .unwrap()
    });
}

#[test]
fn grad_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    check_all("transpose", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        grad_check(&x, 1e-5, |tape, v| {
            let t = tape.transpose(v)?;
            let s = tape.sigmoid(t)?;
            tape.sum(s)
        })
        .unwrap()
    });
}

#[test]
fn grad_add_sub_hadamard_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    check_all("add/sub/hadamard/scale", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let inputs = [rand_matrix(rng, m, n), rand_matrix(rng, m, n)];
        grad_check_multi(&inputs, 1e-5, |tape, vs| {
            let a = tape.add(vs[0], vs[1])?;
            let d = tape.sub(a, vs[1])?;
            let h = tape.hadamard(d, vs[1])?;
            let s = tape.scale(h, -1.7)?;
            tape.sum(s)
        })
        .unwrap()
    });
}

#[test]
fn grad_concat_all_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    check_all("concat", &mut rng, |rng| {
        let (m, n1, n2) = (dim(rng), dim(rng), dim(rng));
        let mut worst = 0.0f64;
        let vecs = [rand_vector(rng, n1), rand_vector(rng, n2)];
        worst = worst.max(
            grad_check_multi(&vecs, 1e-5, |tape, vs| {
                let c = tape.concat(vs, 0)?;
                let t = tape.tanh(c)?;
                tape.sum(t)
            })
            .unwrap(),
        );
        let rows = [rand_matrix(rng, m, n1), rand_matrix(rng, n2, n1)];
        worst = worst.max(
            grad_check_multi(&rows, 1e-5, |tape, vs| {
                let c = tape.concat(vs, 0)?;
                tape.sum(c)
            })
            .unwrap(),
        );
        let cols = [rand_matrix(rng, m, n1), rand_matrix(rng, m, n2)];
        worst = worst.max(
            grad_check_multi(&cols, 1e-5, |tape, vs| {
                let c = tape.concat(vs, 1)?;
                let s = tape.sigmoid(c)?;
                tape.sum(s)
            })
            .unwrap(),
        );
        worst
    });
}

#[test]
fn grad_broadcast_and_scale_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    check_all("broadcast_row/scale_rows", &mut rng, |rng| {
        let (rows, n) = (dim(rng), dim(rng));
        let inputs = [rand_vector(rng, n), rand_vector(rng, rows), rand_matrix(rng, rows, n)];
        grad_check_multi(&inputs, 1e-5, |tape, vs| {
            let b = tape.broadcast_row(vs[0], rows)?;
            let x = tape.add(b, vs[2])?;
            let s = tape.scale_rows(x, vs[1])?;
            tape.sum(s)
        })
        .unwrap()
    });
}

#[test]
fn grad_row_stack_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    check_all("row/stack_rows/slice_rows", &mut rng, |rng| {
        let (m, n) = (dim(rng).max(2), dim(rng));
        let x = rand_matrix(rng, m, n);
        let pick = m / 2;
        grad_check(&x, 1e-5, |tape, v| {
            let r0 = tape.row(v, pick)?;
            let r1 = tape.row(v, 0)?;
            let stacked = tape.stack_rows(&[r0, r1, r0])?;
            let sliced = tape.slice_rows(stacked, 1, 2)?;
            let t = tape.tanh(sliced)?;
            tape.sum(t)
        })
        .unwrap()
    });
}

#[test]
fn grad_gather_rows_with_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    check_all("gather_rows", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        let indices: Vec<usize> = (0..dim(rng) + 2).map(|_| rng.gen_range(0..m)).collect();
        grad_check(&x, 1e-5, move |tape, v| {
            let g = tape.gather_rows(v, &indices)?;
            let t = tape.tanh(g)?;
            tape.sum(t)
        })
        .unwrap()
    });
}

#[test]
fn grad_gather_flat_and_reshape() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    check_all("gather/reshape", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        let indices: Vec<usize> = (0..dim(rng)).map(|_| rng.gen_range(0..m * n)).collect();
        grad_check(&x, 1e-5, move |tape, v| {
            let flat = tape.reshape(v, vec![m * n])?;
            let g = tape.gather(flat, &indices)?;
            let s = tape.sigmoid(g)?;
            tape.sum(s)
        })
        .unwrap()
    });
}

#[test]
fn grad_elementwise_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    check_all("sigmoid/tanh/relu", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        grad_check(&x, 1e-5, |tape, v| {
            let a = tape.sigmoid(v)?;
            let b = tape.tanh(a)?;
            let c = tape.relu(b)?;
            tape.sum(c)
        })
        .unwrap()
    });
}

#[test]
fn grad_softmax_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    check_all("softmax", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        let picker = rand_vector(rng, x.cols());
        grad_check_multi(&[x, picker], 1e-5, |tape, vs| {
            let s = tape.softmax(vs[0])?;
            let picked = tape.matmul(s, vs[1])?;
            let t = tape.tanh(picked)?;
            tape.sum(t)
        })
        .unwrap()
    });
}

#[test]
fn grad_cumsum_and_logsumexp() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    check_all("cumsum/logsumexp", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        grad_check(&x, 1e-5, |tape, v| {
            let c = tape.cumsum(v)?;
            let l = tape.logsumexp(c)?;
            tape.logsumexp(l)
        })
        .unwrap()
    });
}

#[test]
fn grad_max_over_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    check_all("max_over_time", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        grad_check(&x, 1e-5, |tape, v| {
            let m = tape.max_over_time(v)?;
            let t = tape.tanh(m)?;
            tape.sum(t)
        })
        .unwrap()
    });
}

#[test]
fn grad_mean_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    check_all("mean_rows", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        grad_check(&x, 1e-5, |tape, v| {
            let m = tape.mean_rows(v)?;
            let t = tape.sigmoid(m)?;
            tape.sum(t)
        })
        .unwrap()
    });
}

#[test]
fn grad_dropout_training_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(114);
    check_all("dropout", &mut rng, |rng| {
        let (m, n) = (dim(rng), dim(rng));
        let x = rand_matrix(rng, m, n);
        let seed = rng.gen::<u64>();
        grad_check(&x, 1e-5, move |tape, v| {
            let d = tape.dropout(v, 0.3, seed, true)?;
            let t = tape.tanh(d)?;
            tape.sum(t)
        })
        .unwrap()
    });
}

#[test]
fn grad_conv1d_same() {
    let mut rng = ChaCha8Rng::seed_from_u64(115);
    check_all("conv1d_same", &mut rng, |rng| {
        let (t_len, c_in, c_out) = (dim(rng), dim(rng), dim(rng));
        let width = [1, 3, 5][rng.gen_range(0..3)];
        let inputs = [rand_matrix(rng, t_len, c_in), rand_matrix(rng, c_out, width * c_in)];
        grad_check_multi(&inputs, 1e-5, move |tape, vs| {
            let y = tape.conv1d_same(vs[0], vs[1], width)?;
            let r = tape.tanh(y)?;
            tape.sum(r)
        })
        .unwrap()
    });
}

#[test]
fn conv1d_same_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(116);
    for _ in 0..20 {
        let (t_len, c_in, c_out) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let width = [1, 3, 5, 7][rng.gen_range(0..4)];
        let x = rand_matrix(&mut rng, t_len, c_in);
        let w = rand_matrix(&mut rng, c_out, width * c_in);
        let half = (width - 1) / 2;
        let mut expected = vec![0.0; t_len * c_out];
        for t in 0..t_len {
            for co in 0..c_out {
                let mut acc = 0.0;
                for dt in 0..width {
                    let src = t as isize + dt as isize - half as isize;
                    if src < 0 || src as usize >= t_len {
                        continue;
                    }
                    for ci in 0..c_in {
                        acc += x.at(src as usize, ci) * w.at(co, dt * c_in + ci);
                    }
                }
                expected[t * c_out + co] = acc;
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.constant(w);
        let y = tape.conv1d_same(xv, wv, width).unwrap();
        assert_close(tape.value(y).values(), &expected, 1e-12);
    }
}

// ── properties ──────────────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cumax_is_monotone_and_ends_at_one(values in prop::collection::vec(-50.0f64..50.0, 1..16)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(values).unwrap());
        let y = tape.cumax(x).unwrap();
        let out = tape.value(y).values();
        for w in out.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "not nondecreasing: {out:?}");
        }
        prop_assert!(out[0] > 0.0, "first entry must be positive: {out:?}");
        prop_assert!((out[out.len() - 1] - 1.0).abs() <= 1e-6, "last entry {} != 1", out[out.len() - 1]);
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..7,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.softmax(v).unwrap();
        for r in 0..rows {
            let row = tape.value(s).row_slice(r);
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9, "row {r} sums to {total}");
            prop_assert!(row.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn logsumexp_is_stable_and_exceeds_max(
        values in prop::collection::vec(-700.0f64..700.0, 1..9),
    ) {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(values.clone()).unwrap());
        let l = tape.logsumexp(x).unwrap();
        let out = tape.value(l).values()[0];
        prop_assert!(out.is_finite(), "overflowed on {values:?}");
        prop_assert!(out >= max - 1e-9);
        prop_assert!(out <= max + (values.len() as f64).ln() + 1e-9);
    }
}
