//! The two attention kernels everything else is built from.
//!
//! Both take pre-projected query/key/value matrices, split them into heads
//! along the channel axis and concatenate the per-head results. FLOP
//! accounting lands on the label supplied by the caller, so a stage can be
//! measured in isolation.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

fn validate(g: &Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<(usize, usize, usize)> {
    let qs = g.shape_of(q);
    let ks = g.shape_of(k);
    let vs = g.shape_of(v);
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::Dim(format!("attention expects rank-2 inputs, got {qs:?}/{ks:?}/{vs:?}")));
    }
    let (n_q, d) = (qs[0], qs[1]);
    let (n_k, dk) = (ks[0], ks[1]);
    if dk != d || vs[0] != n_k || vs[1] != d {
        return Err(Error::Dim(format!(
            "attention shapes q={n_q}x{d}, k={n_k}x{dk}, v={}x{}",
            vs[0], vs[1]
        )));
    }
    if n_q == 0 || n_k == 0 {
        return Err(Error::Dim("attention requires at least one query and one key".into()));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Dim(format!("width {d} not divisible by {heads} heads")));
    }
    for (name, var) in [("Q", q), ("K", k), ("V", v)] {
        g.value(var).require_finite(name)?;
    }
    Ok((n_q, n_k, d))
}

/// Per-head `softmax(Q Kᵀ / sqrt(d/heads)) V`, heads concatenated.
pub fn dot_product_attention(g: &Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    dot_product_attention_labeled(g, q, k, v, heads, "attention.dot")
}

pub fn dot_product_attention_labeled(
    g: &Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    label: &str,
) -> Result<Var> {
    let (_, _, d) = validate(g, q, k, v, heads)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.scale(g.matmul_flags(qh, false, kh, true, label), scale);
        let weights = g.softmax_rows(scores);
        outs.push(g.matmul(weights, vh, label));
    }
    Ok(g.concat_cols(&outs))
}

/// Kernelized attention with the `elu(x)+1` feature map:
/// `phi(Q) (phi(K)ᵀ V) / (phi(Q) (phi(K)ᵀ 1))` per head.
pub fn linear_attention(g: &Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    linear_attention_labeled(g, q, k, v, heads, "attention.linear")
}

pub fn linear_attention_labeled(
    g: &Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    label: &str,
) -> Result<Var> {
    let (n_q, _, d) = validate(g, q, k, v, heads)?;
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qf = g.elu1(g.slice_cols(q, h * dh, dh));
        let kf = g.elu1(g.slice_cols(k, h * dh, dh));
        let vh = g.slice_cols(v, h * dh, dh);
        let kv = g.matmul_flags(kf, true, vh, false, label);
        let num = g.matmul(qf, kv, label);
        let ksum = g.col_sum(kf);
        let den = g.matmul(qf, g.reshape(ksum, vec![dh, 1]), label);
        let den = g.reshape(den, vec![n_q]);
        if g.value(den).data().iter().any(|x| x.abs() < 1e-12) {
            return Err(Error::Numeric("linear attention denominator underflow".into()));
        }
        outs.push(g.div_by_col(num, den));
    }
    Ok(g.concat_cols(&outs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;
    use rand::Rng;

    fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Straight-line single-head softmax attention, kept independent of the
    /// graph implementation on purpose.
    fn reference_dot(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
        let (n_q, d) = q.dims2();
        let (n_k, _) = k.dims2();
        let dh = d / heads;
        let mut out = vec![0.0; n_q * d];
        for h in 0..heads {
            for i in 0..n_q {
                let mut logits = vec![0.0; n_k];
                for j in 0..n_k {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q.data()[i * d + h * dh + c] * k.data()[j * d + h * dh + c];
                    }
                    logits[j] = s / (dh as f64).sqrt();
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for j in 0..n_k {
                    let w = (logits[j] - m).exp() / z;
                    for c in 0..dh {
                        out[i * d + h * dh + c] += w * v.data()[j * d + h * dh + c];
                    }
                }
            }
        }
        Tensor::new(vec![n_q, d], out)
    }

    fn reference_linear(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
        let phi = |x: f64| if x > 0.0 { x + 1.0 } else { x.exp() };
        let (n_q, d) = q.dims2();
        let (n_k, _) = k.dims2();
        let dh = d / heads;
        let mut out = vec![0.0; n_q * d];
        for h in 0..heads {
            for i in 0..n_q {
                for c in 0..dh {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for j in 0..n_k {
                        let mut kq = 0.0;
                        for e in 0..dh {
                            kq += phi(q.data()[i * d + h * dh + e])
                                * phi(k.data()[j * d + h * dh + e]);
                        }
                        num += kq * v.data()[j * d + h * dh + c];
                        den += kq;
                    }
                    out[i * d + h * dh + c] = num / den;
                }
            }
        }
        Tensor::new(vec![n_q, d], out)
    }

    #[test]
    fn single_key_returns_value_exactly() {
        let g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 4], vec![0.3, -2.0, 1.0, 0.5]));
        let k = g.constant(Tensor::new(vec![1, 4], vec![5.0, 1.0, -1.0, 2.0]));
        let v = g.constant(Tensor::new(vec![1, 4], vec![9.0, -3.0, 0.25, 7.0]));
        let out = dot_product_attention(&g, q, k, v, 2).unwrap();
        assert_eq!(g.value(out).data(), &[9.0, -3.0, 0.25, 7.0]);

        let out_lin = linear_attention(&g, q, k, v, 2).unwrap();
        for (a, b) in g.value(out_lin).data().iter().zip([9.0, -3.0, 0.25, 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let g = Graph::new();
        let q = g.constant(Tensor::new(vec![2, 2], vec![0.1, 0.7, -0.3, 0.2]));
        let k = g.constant(Tensor::new(vec![3, 2], vec![0.5, -0.25, 0.5, -0.25, 0.5, -0.25]));
        let v = g.constant(Tensor::new(vec![3, 2], vec![3.0, 0.0, 0.0, 6.0, 3.0, 3.0]));
        let out = dot_product_attention(&g, q, k, v, 1).unwrap();
        for i in 0..2 {
            assert!((g.value(out).at2(i, 0) - 2.0).abs() < 1e-12);
            assert!((g.value(out).at2(i, 1) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_matches_reference_on_random_inputs() {
        let mut rng = crate::rng::stream(11, &[99]);
        for heads in [1, 2] {
            let q = rand_mat(&mut rng, 3, 4);
            let k = rand_mat(&mut rng, 3, 4);
            let v = rand_mat(&mut rng, 3, 4);
            let g = Graph::new();
            let (qv, kv, vv) =
                (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
            let out = dot_product_attention(&g, qv, kv, vv, heads).unwrap();
            let want = reference_dot(&q, &k, &v, heads);
            let diff = g
                .value(out)
                .data()
                .iter()
                .zip(want.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "max diff {diff}");
        }
    }

    #[test]
    fn linear_matches_reference_on_random_inputs() {
        let mut rng = crate::rng::stream(12, &[100]);
        for heads in [1, 2, 4] {
            let q = rand_mat(&mut rng, 5, 8);
            let k = rand_mat(&mut rng, 5, 8);
            let v = rand_mat(&mut rng, 5, 8);
            let g = Graph::new();
            let (qv, kv, vv) =
                (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
            let out = linear_attention(&g, qv, kv, vv, heads).unwrap();
            let want = reference_linear(&q, &k, &v, heads);
            let diff = g
                .value(out)
                .data()
                .iter()
                .zip(want.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "max diff {diff}");
        }
    }

    #[test]
    fn linear_flops_beat_dot_flops_at_scale() {
        let n = 1024;
        let d = 64;
        let mut rng = crate::rng::stream(13, &[101]);
        let q = rand_mat(&mut rng, n, d);
        let k = rand_mat(&mut rng, n, d);
        let v = rand_mat(&mut rng, n, d);

        let g1 = Graph::new();
        let (qv, kv, vv) = (g1.constant(q.clone()), g1.constant(k.clone()), g1.constant(v.clone()));
        dot_product_attention(&g1, qv, kv, vv, 1).unwrap();
        let dot_flops = g1.flops().get("attention.dot");

        let g2 = Graph::new();
        let (qv, kv, vv) = (g2.constant(q), g2.constant(k), g2.constant(v));
        linear_attention(&g2, qv, kv, vv, 1).unwrap();
        let lin_flops = g2.flops().get("attention.linear");

        assert!(lin_flops < dot_flops, "linear {lin_flops} !< dot {dot_flops}");
    }

    #[test]
    fn flop_counts_depend_only_on_shapes() {
        let mut rng = crate::rng::stream(14, &[102]);
        let mut totals = Vec::new();
        for _ in 0..2 {
            let q = rand_mat(&mut rng, 6, 8);
            let k = rand_mat(&mut rng, 7, 8);
            let v = rand_mat(&mut rng, 7, 8);
            let g = Graph::new();
            let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v));
            dot_product_attention(&g, qv, kv, vv, 2).unwrap();
            linear_attention(&g, qv, kv, vv, 2).unwrap();
            totals.push(g.flops().total());
        }
        assert_eq!(totals[0], totals[1]);
    }

    #[test]
    fn dot_outputs_stay_in_value_hull_per_head() {
        let mut rng = crate::rng::stream(15, &[103]);
        for _ in 0..20 {
            let q = rand_mat(&mut rng, 4, 6);
            let k = rand_mat(&mut rng, 5, 6);
            let v = rand_mat(&mut rng, 5, 6);
            let g = Graph::new();
            let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v.clone()));
            let out = dot_product_attention(&g, qv, kv, vv, 2).unwrap();
            let ov = g.value_clone(out);
            for c in 0..6 {
                let lo = (0..5).map(|j| v.at2(j, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..5).map(|j| v.at2(j, c)).fold(f64::NEG_INFINITY, f64::max);
                for i in 0..4 {
                    let x = ov.at2(i, c);
                    assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let g = Graph::new();
        let q = g.constant(Tensor::zeros(&[2, 4]));
        let k = g.constant(Tensor::zeros(&[3, 6]));
        let v = g.constant(Tensor::zeros(&[3, 6]));
        assert!(matches!(
            dot_product_attention(&g, q, k, v, 2),
            Err(crate::error::Error::Dim(_))
        ));
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]));
        let k = g.constant(Tensor::zeros(&[1, 2]));
        let v = g.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            dot_product_attention(&g, q, k, v, 1),
            Err(crate::error::Error::Numeric(_))
        ));
    }
}
