//! Dual-aware feature encoder: argument-conditioned attention over the
//! recurrent states (local view) and a widening convolution stack over the
//! raw embeddings with global max pooling (global view), fused into one
//! per-token feature matrix.
//!
//! Attention scores each token as `v · tanh(W_a h_t + U_a a)` where `a`
//! embeds the candidate argument pair, so the same sentence attends
//! differently for different candidate pairs. The convolution stack grows
//! its kernel width by two per layer (3, 5, 7, …) and keeps only each
//! filter's highest activation over time.

use rand::Rng;

use crate::numcore::{NumError, Result, Tape, Tensor, Var};

/// Attention projection weights.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// score-space × token-feature
    pub w_a: Tensor,
    /// score-space × pair-embedding
    pub u_a: Tensor,
    /// score-space; projects the tanh output to a scalar score
    pub v: Tensor,
}

impl AttentionParams {
    pub fn new(token_dim: usize, pair_dim: usize, score_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if token_dim == 0 || pair_dim == 0 || score_dim == 0 {
            return Err(NumError::Config(format!(
                "attention dims must be positive, got token {token_dim}, pair {pair_dim}, score {score_dim}"
            )));
        }
        let wb = 1.0 / (token_dim as f64).sqrt();
        let ub = 1.0 / (pair_dim as f64).sqrt();
        let vb = 1.0 / (score_dim as f64).sqrt();
        Ok(AttentionParams {
            w_a: Tensor::rand_uniform(vec![score_dim, token_dim], -wb, wb, rng)?.with_grad(),
            u_a: Tensor::rand_uniform(vec![score_dim, pair_dim], -ub, ub, rng)?.with_grad(),
            v: Tensor::rand_uniform(vec![score_dim], -vb, vb, rng)?.with_grad(),
        })
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w_a, &self.u_a, &self.v]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_a, &mut self.u_a, &mut self.v]
    }

    pub fn register(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            w_a: tape.leaf(self.w_a.clone()),
            u_a: tape.leaf(self.u_a.clone()),
            v: tape.leaf(self.v.clone()),
        }
    }
}

/// Tape handles for [`AttentionParams`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_a: Var,
    pub u_a: Var,
    pub v: Var,
}

/// One convolution layer: flattened filters and a per-channel bias.
#[derive(Debug, Clone)]
pub struct ConvLayerParams {
    /// channels_out × (width · channels_in)
    pub filters: Tensor,
    /// channels_out
    pub bias: Tensor,
    pub width: usize,
}

/// Convolution layers with widths 3, 5, 7, … by depth.
#[derive(Debug, Clone)]
pub struct ConvStackParams {
    pub layers: Vec<ConvLayerParams>,
}

impl ConvStackParams {
    pub fn new(input_dim: usize, filters: usize, depth: usize, rng: &mut impl Rng) -> Result<Self> {
        if depth == 0 {
            return Err(NumError::Config("convolution stack needs at least one layer".into()));
        }
        if input_dim == 0 || filters == 0 {
            return Err(NumError::Config(format!(
                "conv dims must be positive, got input {input_dim}, filters {filters}"
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let width = 2 * i + 3;
            let c_in = if i == 0 { input_dim } else { filters };
            let bound = 1.0 / ((width * c_in) as f64).sqrt();
            layers.push(ConvLayerParams {
                filters: Tensor::rand_uniform(vec![filters, width * c_in], -bound, bound, rng)?
                    .with_grad(),
                // Small positive bias keeps relu channels initially active.
                bias: Tensor::filled(vec![filters], 0.1)?.with_grad(),
                width,
            });
        }
        Ok(ConvStackParams { layers })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.filters, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.filters, &mut l.bias]).collect()
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<ConvLayerVars> {
        self.layers
            .iter()
            .map(|l| ConvLayerVars {
                filters: tape.leaf(l.filters.clone()),
                bias: tape.leaf(l.bias.clone()),
                width: l.width,
            })
            .collect()
    }
}

/// Tape handles for one convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct ConvLayerVars {
    pub filters: Var,
    pub bias: Var,
    pub width: usize,
}

/// Argument-conditioned attention: per-token weights `alpha` (summing to 1)
/// and the reweighted token features `alpha_t · h_t`.
pub fn attend(
    tape: &mut Tape,
    params: &AttentionVars,
    h: Var,
    pair: Var,
) -> Result<(Var, Var)> {
    let t_len = tape.value(h).rows();
    let w_t = tape.transpose(params.w_a)?;
    let projected = tape.matmul(h, w_t)?;
    let pair_proj = tape.matmul(params.u_a, pair)?;
    let spread = tape.broadcast_row(pair_proj, t_len)?;
    let combined = tape.add(projected, spread)?;
    let activated = tape.tanh(combined)?;
    let scores = tape.matmul(activated, params.v)?;
    let alpha = tape.softmax(scores)?;
    let local = tape.scale_rows(h, alpha)?;
    Ok((alpha, local))
}

/// Run the widening convolution stack over `x` and max-pool each channel
/// over time. Only the first `valid_len` rows are real tokens: later rows
/// are zeroed between layers and excluded from the pool, so zero-embedded
/// padding never changes the result.
pub fn conv_stack(
    tape: &mut Tape,
    layers: &[ConvLayerVars],
    x: Var,
    valid_len: usize,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(NumError::Config("convolution stack needs at least one layer".into()));
    }
    let t_len = tape.value(x).rows();
    if valid_len == 0 || valid_len > t_len {
        return Err(NumError::Contract(format!(
            "valid_len {valid_len} out of range for {t_len} rows"
        )));
    }
    let mask = if valid_len < t_len {
        let mut m = vec![1.0; t_len];
        for slot in &mut m[valid_len..] {
            *slot = 0.0;
        }
        Some(tape.constant(Tensor::vector(m)?))
    } else {
        None
    };
    let mut h = x;
    for layer in layers {
        let conv = tape.conv1d_same(h, layer.filters, layer.width)?;
        let spread = tape.broadcast_row(layer.bias, t_len)?;
        let biased = tape.add(conv, spread)?;
        let active = tape.relu(biased)?;
        h = match mask {
            Some(m) => tape.scale_rows(active, m)?,
            None => active,
        };
    }
    let valid = tape.slice_rows(h, 0, valid_len)?;
    tape.max_over_time(valid)
}

/// Concatenate the global feature vector onto every row of the local
/// feature matrix.
pub fn fuse(tape: &mut Tape, local: Var, global: Var) -> Result<Var> {
    let t_len = tape.value(local).rows();
    let spread = tape.broadcast_row(global, t_len)?;
    tape.concat(&[local, spread], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check_multi;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        Tensor::rand_uniform(shape, -1.0, 1.0, rng).unwrap()
    }

    fn run_attend(params: &AttentionParams, h: &Tensor, a: &Tensor) -> (Vec<f64>, Tensor) {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let hv = tape.constant(h.clone());
        let av = tape.constant(a.clone());
        let (alpha, local) = attend(&mut tape, &vars, hv, av).unwrap();
        (tape.value(alpha).values().to_vec(), tape.value(local).clone())
    }

    #[test]
    fn zero_projections_attend_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let params = AttentionParams {
            w_a: Tensor::zeros(vec![3, 4]).unwrap(),
            u_a: Tensor::zeros(vec![3, 2]).unwrap(),
            v: rand_tensor(&mut rng, vec![3]),
        };
        let h = rand_tensor(&mut rng, vec![5, 4]);
        let a = rand_tensor(&mut rng, vec![2]);
        let (alpha, _) = run_attend(&params, &h, &a);
        for w in &alpha {
            assert!((w - 0.2).abs() < 1e-12, "expected uniform 1/5, got {alpha:?}");
        }
    }

    #[test]
    fn single_token_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let params = AttentionParams::new(4, 2, 3, &mut rng).unwrap();
        let h = rand_tensor(&mut rng, vec![1, 4]);
        let a = rand_tensor(&mut rng, vec![2]);
        let (alpha, local) = run_attend(&params, &h, &a);
        assert_eq!(alpha, vec![1.0]);
        for (g, e) in local.values().iter().zip(h.values()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_direct_formula_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let (t_len, token_dim, pair_dim, score_dim) = (4, 5, 3, 6);
        let params = AttentionParams::new(token_dim, pair_dim, score_dim, &mut rng).unwrap();
        let h = rand_tensor(&mut rng, vec![t_len, token_dim]);
        let a = rand_tensor(&mut rng, vec![pair_dim]);

        let mut scores = vec![0.0; t_len];
        for t in 0..t_len {
            let mut score = 0.0;
            for s in 0..score_dim {
                let mut pre = 0.0;
                for c in 0..token_dim {
                    pre += params.w_a.at(s, c) * h.at(t, c);
                }
                for c in 0..pair_dim {
                    pre += params.u_a.at(s, c) * a.values()[c];
                }
                score += params.v.values()[s] * pre.tanh();
            }
            scores[t] = score;
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let expected_alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let (alpha, local) = run_attend(&params, &h, &a);
        for (g, e) in alpha.iter().zip(&expected_alpha) {
            assert!((g - e).abs() < 1e-12);
        }
        for t in 0..t_len {
            for c in 0..token_dim {
                let expected = expected_alpha[t] * h.at(t, c);
                assert!((local.at(t, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_weights_form_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        for _ in 0..20 {
            let t_len = rng.gen_range(1..8);
            let params = AttentionParams::new(4, 3, 5, &mut rng).unwrap();
            let h = rand_tensor(&mut rng, vec![t_len, 4]);
            let a = rand_tensor(&mut rng, vec![3]);
            let (alpha, _) = run_attend(&params, &h, &a);
            let total: f64 = alpha.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(alpha.iter().all(|w| *w > 0.0 && *w <= 1.0));
        }
    }

    #[test]
    fn different_argument_pairs_shift_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let params = AttentionParams::new(4, 3, 5, &mut rng).unwrap();
        let h = rand_tensor(&mut rng, vec![6, 4]);
        let mut found_difference = false;
        for _ in 0..5 {
            let a1 = rand_tensor(&mut rng, vec![3]);
            let a2 = rand_tensor(&mut rng, vec![3]);
            let (alpha1, _) = run_attend(&params, &h, &a1);
            let (alpha2, _) = run_attend(&params, &h, &a2);
            if alpha1.iter().zip(&alpha2).any(|(x, y)| (x - y).abs() > 1e-6) {
                found_difference = true;
                break;
            }
        }
        assert!(found_difference, "attention ignored the argument pair");
    }

    fn run_stack(params: &ConvStackParams, x: &Tensor, valid_len: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let xv = tape.constant(x.clone());
        let out = conv_stack(&mut tape, &vars, xv, valid_len).unwrap();
        tape.value(out).values().to_vec()
    }

    #[test]
    fn widths_grow_by_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let params = ConvStackParams::new(4, 6, 4, &mut rng).unwrap();
        let widths: Vec<usize> = params.layers.iter().map(|l| l.width).collect();
        assert_eq!(widths, vec![3, 5, 7, 9]);
        assert!(ConvStackParams::new(4, 6, 0, &mut rng).is_err());
    }

    #[test]
    fn zero_weights_pool_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let mut params = ConvStackParams::new(3, 4, 2, &mut rng).unwrap();
        for layer in &mut params.layers {
            layer.filters = Tensor::zeros(layer.filters.shape().to_vec()).unwrap();
            layer.bias = Tensor::zeros(layer.bias.shape().to_vec()).unwrap();
        }
        let x = rand_tensor(&mut rng, vec![6, 3]);
        assert_eq!(run_stack(&params, &x, 6), vec![0.0; 4]);
    }

    #[test]
    fn window_summing_filter_pools_impulse_to_one() {
        let params = ConvStackParams {
            layers: vec![ConvLayerParams {
                filters: Tensor::filled(vec![1, 3], 1.0).unwrap(),
                bias: Tensor::zeros(vec![1]).unwrap(),
                width: 3,
            }],
        };
        for impulse_at in 0..5 {
            let mut values = vec![0.0; 5];
            values[impulse_at] = 1.0;
            let x = Tensor::matrix(5, 1, values).unwrap();
            assert_eq!(run_stack(&params, &x, 5), vec![1.0]);
        }
    }

    /// Naive stack oracle: nested-loop convolution, bias, relu per layer,
    /// then per-channel max.
    fn stack_oracle(params: &ConvStackParams, x: &Tensor, valid_len: usize) -> Vec<f64> {
        let t_len = x.rows();
        let mut current: Vec<Vec<f64>> = (0..t_len).map(|t| x.row_slice(t).to_vec()).collect();
        for layer in &params.layers {
            let c_in = current[0].len();
            let c_out = layer.bias.numel();
            let half = (layer.width - 1) / 2;
            let mut next = vec![vec![0.0; c_out]; t_len];
            for t in 0..t_len {
                for co in 0..c_out {
                    let mut acc = layer.bias.values()[co];
                    for dt in 0..layer.width {
                        let src = t as isize + dt as isize - half as isize;
                        if src < 0 || src as usize >= t_len {
                            continue;
                        }
                        for ci in 0..c_in {
                            acc += layer.filters.at(co, dt * c_in + ci)
                                * current[src as usize][ci];
                        }
                    }
                    next[t][co] = acc.max(0.0);
                }
            }
            for row in next.iter_mut().skip(valid_len) {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
            current = next;
        }
        let c_out = current[0].len();
        (0..c_out)
            .map(|c| {
                (0..valid_len)
                    .map(|t| current[t][c])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    #[test]
    fn stack_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let params = ConvStackParams::new(3, 4, 2, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, vec![7, 3]);
        let got = run_stack(&params, &x, 7);
        let expected = stack_oracle(&params, &x, 7);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn zero_padding_rows_never_change_the_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(68);
        for _ in 0..10 {
            let t_len = rng.gen_range(2..7);
            let pad = rng.gen_range(1..4);
            let params = ConvStackParams::new(3, 5, 3, &mut rng).unwrap();
            let x = rand_tensor(&mut rng, vec![t_len, 3]);
            let mut padded_values = x.values().to_vec();
            padded_values.extend(std::iter::repeat(0.0).take(pad * 3));
            let padded = Tensor::matrix(t_len + pad, 3, padded_values).unwrap();
            let base = run_stack(&params, &x, t_len);
            let with_pad = run_stack(&params, &padded, t_len);
            assert_eq!(base, with_pad, "padding changed the pooled features");
        }
    }

    #[test]
    fn fuse_broadcasts_global_onto_every_row() {
        let local = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let global = Tensor::vector(vec![7.0, 8.0]).unwrap();
        let mut tape = Tape::new();
        let lv = tape.constant(local);
        let gv = tape.constant(global);
        let fused = fuse(&mut tape, lv, gv).unwrap();
        assert_eq!(tape.value(fused).shape(), &[3, 4]);
        assert_eq!(
            tape.value(fused).values(),
            &[1.0, 2.0, 7.0, 8.0, 3.0, 4.0, 7.0, 8.0, 5.0, 6.0, 7.0, 8.0]
        );
    }

    #[test]
    fn fuse_with_zero_global_right_pads_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(69);
        let local = rand_tensor(&mut rng, vec![1, 3]);
        let mut tape = Tape::new();
        let lv = tape.constant(local.clone());
        let gv = tape.constant(Tensor::zeros(vec![2]).unwrap());
        let fused = fuse(&mut tape, lv, gv).unwrap();
        let row = tape.value(fused).row_slice(0).to_vec();
        assert_eq!(&row[..3], local.values());
        assert_eq!(&row[3..], &[0.0, 0.0]);
    }

    #[test]
    fn gradients_flow_through_the_full_encoder_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let (t_len, token_dim, pair_dim, score_dim, filters) = (4, 3, 2, 3, 2);
        let attn = AttentionParams::new(token_dim, pair_dim, score_dim, &mut rng).unwrap();
        let conv = ConvStackParams::new(token_dim, filters, 2, &mut rng).unwrap();
        let h = rand_tensor(&mut rng, vec![t_len, token_dim]);
        let a = rand_tensor(&mut rng, vec![pair_dim]);

        let mut inputs: Vec<Tensor> = vec![h, a];
        inputs.extend(attn.tensors().into_iter().cloned());
        inputs.extend(conv.tensors().into_iter().cloned());
        let widths: Vec<usize> = conv.layers.iter().map(|l| l.width).collect();

        let err = grad_check_multi(&inputs, 1e-5, |tape, vars| {
            let attn_vars = AttentionVars { w_a: vars[2], u_a: vars[3], v: vars[4] };
            let conv_vars: Vec<ConvLayerVars> = widths
                .iter()
                .enumerate()
                .map(|(i, &width)| ConvLayerVars {
                    filters: vars[5 + 2 * i],
                    bias: vars[6 + 2 * i],
                    width,
                })
                .collect();
            let (_, local) = attend(tape, &attn_vars, vars[0], vars[1])?;
            let global = conv_stack(tape, &conv_vars, vars[0], t_len)?;
            let fused = fuse(tape, local, global)?;
            let squashed = tape.tanh(fused)?;
            tape.sum(squashed)
        })
        .unwrap();
        assert!(err < 1e-6, "encoder grad check error {err}");
    }
}
