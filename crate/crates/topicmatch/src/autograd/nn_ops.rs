//! Convolution, normalization and resampling ops for the feature extractor.

use super::graph::{BnBatchStats, Graph, Var};
use super::tensor::{gemm, Tensor};

/// Zero-padded im2col: `[c_in*kh*kw, oh*ow]` column per output position.
fn im2col(x: &Tensor, kh: usize, kw: usize, stride: usize, pad: usize) -> (Tensor, usize, usize) {
    let (c_in, h, w) = x.dims3();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let rows = c_in * kh * kw;
    let cols = oh * ow;
    let mut out = vec![0.0; rows * cols];
    let xd = x.data();
    for ci in 0..c_in {
        for dy in 0..kh {
            for dx in 0..kw {
                let r = (ci * kh + dy) * kw + dx;
                for oy in 0..oh {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[r * cols + oy * ow + ox] =
                            xd[(ci * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    (Tensor::new(vec![rows, cols], out), oh, ow)
}

/// Scatter-add of an im2col-shaped gradient back onto the input map.
fn col2im(
    dcol: &Tensor,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (rows, cols) = dcol.dims2();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    debug_assert_eq!(rows, c_in * kh * kw);
    debug_assert_eq!(cols, oh * ow);
    let mut dx = vec![0.0; c_in * h * w];
    let dd = dcol.data();
    for ci in 0..c_in {
        for dy in 0..kh {
            for dx_k in 0..kw {
                let r = (ci * kh + dy) * kw + dx_k;
                for oy in 0..oh {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + dx_k) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(ci * h + iy as usize) * w + ix as usize] +=
                            dd[r * cols + oy * ow + ox];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_in, h, w], dx)
}

impl Graph {
    /// 2-D convolution of a `[c_in, h, w]` map with `[c_out, c_in, kh, kw]`
    /// weights and a `[c_out]` bias; zero padding.
    ///
    /// The im2col buffer is rebuilt in the backward pass rather than kept
    /// alive, which keeps tape memory at one activation per node.
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize, label: &str) -> Var {
        let (out, c_out, oh, ow) = {
            let xv = self.value_clone(x);
            let wv = self.value_clone(w);
            let bv = self.value_clone(b);
            let ws = wv.shape().to_vec();
            assert_eq!(ws.len(), 4, "conv weights must be rank-4");
            let (c_out, c_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
            let (xc, _, _) = xv.dims3();
            assert_eq!(xc, c_in, "conv input channels");
            assert_eq!(bv.shape(), [c_out], "conv bias");
            let (col, oh, ow) = im2col(&xv, kh, kw, stride, pad);
            let wmat = wv.reshaped(vec![c_out, c_in * kh * kw]);
            let mut omat = gemm(&wmat, false, &col, false);
            let od = omat.data_mut();
            for c in 0..c_out {
                let bias = bv.data()[c];
                for p in 0..oh * ow {
                    od[c * oh * ow + p] += bias;
                }
            }
            self.count_flops(label, (c_out * c_in * kh * kw * oh * ow) as u64);
            (omat.reshaped(vec![c_out, oh, ow]), c_out, oh, ow)
        };
        let needs = [x, w, b].iter().any(|v| self.var_needs_grad(*v));
        let (xi, wi, bi) = (x.0, w.0, b.0);
        self.push_node(
            out,
            needs,
            Box::new(move |vals, needs, g, grads| {
                let ws = vals[wi].shape().to_vec();
                let (c_in, kh, kw) = (ws[1], ws[2], ws[3]);
                let (_, h, w_in) = vals[xi].dims3();
                let gmat = g.reshaped(vec![c_out, oh * ow]);

                let mut db = vec![0.0; c_out];
                for c in 0..c_out {
                    for p in 0..oh * ow {
                        db[c] += gmat.data()[c * oh * ow + p];
                    }
                }
                super::graph::accumulate(grads, needs, bi, Tensor::new(vec![c_out], db));

                let (col, _, _) = im2col(&vals[xi], kh, kw, stride, pad);
                let dwmat = gemm(&gmat, false, &col, true);
                super::graph::accumulate(
                    grads,
                    needs,
                    wi,
                    dwmat.reshaped(vec![c_out, c_in, kh, kw]),
                );

                if needs[xi] {
                    let wmat = vals[wi].reshaped(vec![c_out, c_in * kh * kw]);
                    let dcol = gemm(&wmat, true, &gmat, false);
                    let dx = col2im(&dcol, c_in, h, w_in, kh, kw, stride, pad);
                    super::graph::accumulate(grads, needs, xi, dx);
                }
            }),
        )
    }

    /// Training-mode batch norm over the spatial extent of a `[c, h, w]` map,
    /// returning the batch statistics so the caller can fold them into
    /// running averages.
    pub fn batchnorm_train(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, BnBatchStats) {
        let (out, mean, var) = {
            let xv = self.value_clone(x);
            let (c, h, w) = xv.dims3();
            let gv = self.value_clone(gamma);
            let bv = self.value_clone(beta);
            assert_eq!(gv.shape(), [c]);
            assert_eq!(bv.shape(), [c]);
            let n = (h * w) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let plane = &xv.data()[ci * h * w..(ci + 1) * h * w];
                let m: f64 = plane.iter().sum::<f64>() / n;
                let v: f64 = plane.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / n;
                mean[ci] = m;
                var[ci] = v;
            }
            let mut data = vec![0.0; c * h * w];
            for ci in 0..c {
                let istd = 1.0 / (var[ci] + eps).sqrt();
                for p in 0..h * w {
                    let xhat = (xv.data()[ci * h * w + p] - mean[ci]) * istd;
                    data[ci * h * w + p] = gv.data()[ci] * xhat + bv.data()[ci];
                }
            }
            (Tensor::new(vec![c, h, w], data), mean, var)
        };
        let needs = [x, gamma, beta].iter().any(|v| self.var_needs_grad(*v));
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        let stats = BnBatchStats { mean: mean.clone(), var: var.clone() };
        let var_node = self.push_node(
            out,
            needs,
            Box::new(move |vals, needs, g, grads| {
                let (c, h, w) = vals[xi].dims3();
                let n = (h * w) as f64;
                let mut dx = vec![0.0; c * h * w];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ci in 0..c {
                    let istd = 1.0 / (var[ci] + eps).sqrt();
                    let gch = vals[gi].data()[ci];
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for p in 0..h * w {
                        let gv = g.data()[ci * h * w + p];
                        let xhat = (vals[xi].data()[ci * h * w + p] - mean[ci]) * istd;
                        dbeta[ci] += gv;
                        dgamma[ci] += gv * xhat;
                        sum_g += gv;
                        sum_gx += gv * xhat;
                    }
                    for p in 0..h * w {
                        let gv = g.data()[ci * h * w + p];
                        let xhat = (vals[xi].data()[ci * h * w + p] - mean[ci]) * istd;
                        dx[ci * h * w + p] =
                            gch * istd * (gv - sum_g / n - xhat * sum_gx / n);
                    }
                }
                super::graph::accumulate(grads, needs, xi, Tensor::new(vec![c, h, w], dx));
                super::graph::accumulate(grads, needs, gi, Tensor::new(vec![c], dgamma));
                super::graph::accumulate(grads, needs, bi, Tensor::new(vec![c], dbeta));
            }),
        );
        (var_node, stats)
    }

    /// Evaluation-mode batch norm with frozen running statistics.
    pub fn batchnorm_eval(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Var {
        let out = {
            let xv = self.value_clone(x);
            let (c, h, w) = xv.dims3();
            let gv = self.value_clone(gamma);
            let bv = self.value_clone(beta);
            assert_eq!(running_mean.len(), c);
            assert_eq!(running_var.len(), c);
            let mut data = vec![0.0; c * h * w];
            for ci in 0..c {
                let istd = 1.0 / (running_var[ci] + eps).sqrt();
                for p in 0..h * w {
                    let xhat = (xv.data()[ci * h * w + p] - running_mean[ci]) * istd;
                    data[ci * h * w + p] = gv.data()[ci] * xhat + bv.data()[ci];
                }
            }
            Tensor::new(vec![c, h, w], data)
        };
        let needs = [x, gamma, beta].iter().any(|v| self.var_needs_grad(*v));
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        let rm = running_mean.to_vec();
        let rv = running_var.to_vec();
        self.push_node(
            out,
            needs,
            Box::new(move |vals, needs, g, grads| {
                let (c, h, w) = vals[xi].dims3();
                let mut dx = vec![0.0; c * h * w];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ci in 0..c {
                    let istd = 1.0 / (rv[ci] + eps).sqrt();
                    let gch = vals[gi].data()[ci];
                    for p in 0..h * w {
                        let gv = g.data()[ci * h * w + p];
                        let xhat = (vals[xi].data()[ci * h * w + p] - rm[ci]) * istd;
                        dx[ci * h * w + p] = gv * gch * istd;
                        dgamma[ci] += gv * xhat;
                        dbeta[ci] += gv;
                    }
                }
                super::graph::accumulate(grads, needs, xi, Tensor::new(vec![c, h, w], dx));
                super::graph::accumulate(grads, needs, gi, Tensor::new(vec![c], dgamma));
                super::graph::accumulate(grads, needs, bi, Tensor::new(vec![c], dbeta));
            }),
        )
    }

    /// Linear 2x upsampling of a `[c, h, w]` map. Source samples land on the
    /// even output positions and odd positions take midpoints, which keeps
    /// the operator equivariant under boundary-axis mirroring.
    pub fn upsample2x(&self, x: Var) -> Var {
        let taps = |o: usize, n: usize| -> (usize, usize) {
            ((o / 2).min(n - 1), (o.div_ceil(2)).min(n - 1))
        };
        let out = {
            let xv = self.value_clone(x);
            let (c, h, w) = xv.dims3();
            let mut data = vec![0.0; c * 4 * h * w];
            let (oh, ow) = (2 * h, 2 * w);
            for ci in 0..c {
                for y in 0..oh {
                    let (y0, y1) = taps(y, h);
                    for xq in 0..ow {
                        let (x0, x1) = taps(xq, w);
                        data[(ci * oh + y) * ow + xq] = 0.25
                            * (xv.data()[(ci * h + y0) * w + x0]
                                + xv.data()[(ci * h + y0) * w + x1]
                                + xv.data()[(ci * h + y1) * w + x0]
                                + xv.data()[(ci * h + y1) * w + x1]);
                    }
                }
            }
            Tensor::new(vec![c, oh, ow], data)
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push_node(
            out,
            needs,
            Box::new(move |vals, needs, g, grads| {
                let (c, h, w) = vals[xi].dims3();
                let (oh, ow) = (2 * h, 2 * w);
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..c {
                    for y in 0..oh {
                        let (y0, y1) = taps(y, h);
                        for xq in 0..ow {
                            let (x0, x1) = taps(xq, w);
                            let gv = 0.25 * g.data()[(ci * oh + y) * ow + xq];
                            dx[(ci * h + y0) * w + x0] += gv;
                            dx[(ci * h + y0) * w + x1] += gv;
                            dx[(ci * h + y1) * w + x0] += gv;
                            dx[(ci * h + y1) * w + x1] += gv;
                        }
                    }
                }
                super::graph::accumulate(grads, needs, xi, Tensor::new(vec![c, h, w], dx));
            }),
        )
    }

    /// Row-wise layer norm of a `[n, d]` tensor with learnable scale and shift.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (out, means, vars_) = {
            let xv = self.value_clone(x);
            let (n, d) = xv.dims2();
            let gv = self.value_clone(gamma);
            let bv = self.value_clone(beta);
            assert_eq!(gv.shape(), [d]);
            assert_eq!(bv.shape(), [d]);
            let mut data = vec![0.0; n * d];
            let mut means = vec![0.0; n];
            let mut vars_ = vec![0.0; n];
            for i in 0..n {
                let row = &xv.data()[i * d..(i + 1) * d];
                let m: f64 = row.iter().sum::<f64>() / d as f64;
                let v: f64 = row.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / d as f64;
                means[i] = m;
                vars_[i] = v;
                let istd = 1.0 / (v + eps).sqrt();
                for j in 0..d {
                    data[i * d + j] = gv.data()[j] * (row[j] - m) * istd + bv.data()[j];
                }
            }
            (Tensor::new(vec![n, d], data), means, vars_)
        };
        let needs = [x, gamma, beta].iter().any(|v| self.var_needs_grad(*v));
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        self.push_node(
            out,
            needs,
            Box::new(move |vals, needs, g, grads| {
                let (n, d) = vals[xi].dims2();
                let mut dx = vec![0.0; n * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for i in 0..n {
                    let istd = 1.0 / (vars_[i] + eps).sqrt();
                    let mut sum_h = 0.0;
                    let mut sum_hx = 0.0;
                    for j in 0..d {
                        let gv = g.data()[i * d + j];
                        let xhat = (vals[xi].data()[i * d + j] - means[i]) * istd;
                        dgamma[j] += gv * xhat;
                        dbeta[j] += gv;
                        let hj = gv * vals[gi].data()[j];
                        sum_h += hj;
                        sum_hx += hj * xhat;
                    }
                    for j in 0..d {
                        let gv = g.data()[i * d + j];
                        let xhat = (vals[xi].data()[i * d + j] - means[i]) * istd;
                        let hj = gv * vals[gi].data()[j];
                        dx[i * d + j] = istd * (hj - sum_h / d as f64 - xhat * sum_hx / d as f64);
                    }
                }
                super::graph::accumulate(grads, needs, xi, Tensor::new(vec![n, d], dx));
                super::graph::accumulate(grads, needs, gi, Tensor::new(vec![d], dgamma));
                super::graph::accumulate(grads, needs, bi, Tensor::new(vec![d], dbeta));
            }),
        )
    }
}
