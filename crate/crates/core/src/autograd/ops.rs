use std::rc::Rc;

use super::kernels::{self, AttentionSaved, Conv1dGeom, ConvT2dGeom, LayerNormSaved};
use super::Var;
use crate::error::{bail_arg, Error, Result};
use crate::tensor::{numel, Real, Tensor};

pub(crate) enum Op<T: Real> {
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Scale(Var<T>, T),
    AddChannel(Var<T>, Var<T>),
    Tanh(Var<T>),
    Sigmoid(Var<T>),
    Relu(Var<T>),
    LeakyRelu(Var<T>, T),
    Linear {
        x: Var<T>,
        w: Var<T>,
        b: Option<Var<T>>,
    },
    Conv1d {
        x: Var<T>,
        w: Var<T>,
        b: Option<Var<T>>,
        geom: Conv1dGeom,
    },
    ConvTranspose2d {
        x: Var<T>,
        w: Var<T>,
        geom: ConvT2dGeom,
    },
    Narrow {
        x: Var<T>,
        axis: usize,
        start: usize,
    },
    Reshape(Var<T>),
    Transpose(Var<T>),
    Gather {
        x: Var<T>,
        index: Rc<[usize]>,
    },
    LayerNorm {
        x: Var<T>,
        gamma: Var<T>,
        beta: Var<T>,
        saved: LayerNormSaved<T>,
    },
    Softmax(Var<T>),
    Attention {
        q: Var<T>,
        k: Var<T>,
        v: Var<T>,
        heads: usize,
        saved: AttentionSaved<T>,
    },
    MeanRows(Var<T>),
    Sum(Var<T>),
    Mean(Var<T>),
    CrossEntropy {
        logits: Var<T>,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        pred: Var<T>,
        target: Tensor<T>,
    },
    GradReverse(Var<T>, T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl<T: Real> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Var<T>> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddChannel(a, b) => vec![a, b],
            Scale(a, _)
            | Tanh(a)
            | Sigmoid(a)
            | Relu(a)
            | LeakyRelu(a, _)
            | Reshape(a)
            | Transpose(a)
            | Softmax(a)
            | MeanRows(a)
            | Sum(a)
            | Mean(a)
            | GradReverse(a, _) => vec![a],
            Linear { x, w, b } | Conv1d { x, w, b, .. } => {
                let mut v = vec![x, w];
                if let Some(b) = b {
                    v.push(b);
                }
                v
            }
            ConvTranspose2d { x, w, .. } => vec![x, w],
            Narrow { x, .. } | Gather { x, .. } => vec![x],
            LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Attention { q, k, v, .. } => vec![q, k, v],
            CrossEntropy { logits, .. } => vec![logits],
            Mse { pred, .. } => vec![pred],
        }
    }

    /// Propagate `g` (gradient of the output `out`) to the parents.
    pub(crate) fn backward(
        &self,
        out: &Tensor<T>,
        g: &Tensor<T>,
        acc: &mut dyn FnMut(&Var<T>, Tensor<T>),
    ) {
        use Op::*;
        let like = |v: &Var<T>, data: Vec<T>| Tensor::from_parts(v.shape().to_vec(), data);
        match self {
            Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            Sub(a, b) => {
                acc(a, g.clone());
                acc(b, g.map(|v| -v));
            }
            Mul(a, b) => {
                if a.requires_grad() {
                    acc(a, g.zip_map(b.value(), |gv, bv| gv * bv));
                }
                if b.requires_grad() {
                    acc(b, g.zip_map(a.value(), |gv, av| gv * av));
                }
            }
            Scale(a, s) => acc(a, g.map(|v| v * *s)),
            AddChannel(x, bias) => {
                acc(x, g.clone());
                if bias.requires_grad() {
                    let len = g.len() / bias.value().len();
                    let data = g
                        .data()
                        .chunks_exact(len)
                        .map(|row| T::of(crate::tensor::sum_f64(row)))
                        .collect();
                    acc(bias, like(bias, data));
                }
            }
            Tanh(a) => acc(a, g.zip_map(out, |gv, y| gv * (T::one() - y * y))),
            Sigmoid(a) => acc(a, g.zip_map(out, |gv, y| gv * y * (T::one() - y))),
            Relu(a) => acc(
                a,
                g.zip_map(
                    a.value(),
                    |gv, x| if x > T::zero() { gv } else { T::zero() },
                ),
            ),
            LeakyRelu(a, slope) => acc(
                a,
                g.zip_map(
                    a.value(),
                    |gv, x| if x > T::zero() { gv } else { gv * *slope },
                ),
            ),
            Linear { x, w, b } => {
                let d_in = x.value().cols();
                let d_out = w.shape()[0];
                let n = x.value().len() / d_in;
                let (gx, gw, gb) = kernels::linear_backward(
                    x.value().data(),
                    w.value().data(),
                    g.data(),
                    n,
                    d_in,
                    d_out,
                );
                acc(x, like(x, gx));
                acc(w, like(w, gw));
                if let Some(b) = b {
                    acc(b, like(b, gb));
                }
            }
            Conv1d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv1d_backward(
                    x.value().data(),
                    w.value().data(),
                    g.data(),
                    *geom,
                    x.requires_grad(),
                    w.requires_grad(),
                );
                if x.requires_grad() {
                    acc(x, like(x, gx));
                }
                if w.requires_grad() {
                    acc(w, like(w, gw));
                }
                if let Some(b) = b {
                    acc(b, like(b, gb));
                }
            }
            ConvTranspose2d { x, w, geom } => {
                let (gx, gw) =
                    kernels::conv_t2d_backward(x.value().data(), w.value().data(), g.data(), *geom);
                acc(x, like(x, gx));
                acc(w, like(w, gw));
            }
            Narrow { x, axis, start } => {
                let (outer, full, inner) = split_axis(x.shape(), *axis);
                let len = g.shape()[*axis];
                let mut gx = vec![T::zero(); x.value().len()];
                for o in 0..outer {
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    let dst_start = (o * full + start) * inner;
                    gx[dst_start..dst_start + len * inner].copy_from_slice(src);
                }
                acc(x, like(x, gx));
            }
            Reshape(x) => acc(x, like(x, g.data().to_vec())),
            Transpose(x) => acc(x, kernels::transpose(g)),
            Gather { x, index } => {
                let mut gx = vec![T::zero(); x.value().len()];
                for (&i, &gv) in index.iter().zip(g.data()) {
                    gx[i] += gv;
                }
                acc(x, like(x, gx));
            }
            LayerNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let d = x.value().cols();
                let (gx, gg, gb) =
                    kernels::layer_norm_backward(gamma.value().data(), saved, g.data(), d);
                acc(x, like(x, gx));
                acc(gamma, like(gamma, gg));
                acc(beta, like(beta, gb));
            }
            Softmax(x) => {
                let d = x.value().cols();
                acc(
                    x,
                    like(x, kernels::softmax_rows_backward(out.data(), g.data(), d)),
                );
            }
            Attention {
                q,
                k,
                v,
                heads,
                saved,
            } => {
                let (n, d) = (q.shape()[0], q.shape()[1]);
                let (gq, gk, gv) = kernels::attention_backward(
                    q.value().data(),
                    k.value().data(),
                    v.value().data(),
                    saved,
                    g.data(),
                    n,
                    d,
                    *heads,
                );
                acc(q, like(q, gq));
                acc(k, like(k, gk));
                acc(v, like(v, gv));
            }
            MeanRows(x) => {
                let d = x.value().cols();
                let n = x.value().rows();
                let inv = T::of(1.0 / n as f64);
                let mut gx = Vec::with_capacity(n * d);
                for _ in 0..n {
                    gx.extend(g.data().iter().map(|&v| v * inv));
                }
                acc(x, like(x, gx));
            }
            Sum(x) => acc(x, Tensor::full(x.shape(), g.item())),
            Mean(x) => {
                let n = x.value().len() as f64;
                acc(x, Tensor::full(x.shape(), T::of(g.item().f64() / n)));
            }
            CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = logits.value().cols();
                let n = labels.len();
                let scale = T::of(g.item().f64() / n as f64);
                let mut gx = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gx[r * c + y] -= T::one();
                }
                gx.iter_mut().for_each(|v| *v *= scale);
                acc(logits, like(logits, gx));
            }
            Mse { pred, target } => {
                let n = pred.value().len() as f64;
                let s = T::of(2.0 * g.item().f64() / n);
                acc(pred, pred.value().zip_map(target, |p, t| (p - t) * s));
            }
            GradReverse(x, coeff) => acc(x, g.map(|v| -v * *coeff)),
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn same_shape<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Real> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("add", self, other)?;
        let v = self.value().zip_map(other.value(), |a, b| a + b);
        Ok(Var::from_op(v, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", self, other)?;
        let v = self.value().zip_map(other.value(), |a, b| a - b);
        Ok(Var::from_op(v, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", self, other)?;
        let v = self.value().zip_map(other.value(), |a, b| a * b);
        Ok(Var::from_op(v, Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, s: f64) -> Var<T> {
        let s = T::of(s);
        Var::from_op(self.value().map(|a| a * s), Op::Scale(self.clone(), s))
    }

    /// `self [C, ...]` plus `bias [C]` broadcast over the trailing axes.
    pub fn add_channel(&self, bias: &Var<T>) -> Result<Var<T>> {
        let c = self.shape()[0];
        if bias.shape() != [c] {
            return Err(Error::shape("add_channel", &[c], bias.shape()));
        }
        let len = self.value().len() / c;
        let mut v = self.value().clone();
        for (row, &b) in v.data_mut().chunks_exact_mut(len).zip(bias.value().data()) {
            row.iter_mut().for_each(|x| *x += b);
        }
        Ok(Var::from_op(v, Op::AddChannel(self.clone(), bias.clone())))
    }

    pub fn tanh(&self) -> Var<T> {
        Var::from_op(self.value().map(|x| x.tanh()), Op::Tanh(self.clone()))
    }

    pub fn sigmoid(&self) -> Var<T> {
        let v = self.value().map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        Var::from_op(v, Op::Sigmoid(self.clone()))
    }

    /// `x · sigmoid(x)`
    pub fn swish(&self) -> Var<T> {
        self.mul(&self.sigmoid()).expect("same shape")
    }

    pub fn relu(&self) -> Var<T> {
        let v = self.value().map(|x| x.max(T::zero()));
        Var::from_op(v, Op::Relu(self.clone()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::of(slope);
        let v = self.value().map(|x| if x > T::zero() { x } else { x * s });
        Var::from_op(v, Op::LeakyRelu(self.clone(), s))
    }

    /// Affine map over the last axis: `x [.., d_in]`, `w [d_out, d_in]`.
    pub fn linear(&self, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let d_in = self.value().cols();
        if w.value().rank() != 2 || w.shape()[1] != d_in {
            return Err(Error::shape("linear", &[w.shape()[0], d_in], w.shape()));
        }
        let d_out = w.shape()[0];
        if let Some(b) = b {
            if b.shape() != [d_out] {
                return Err(Error::shape("linear bias", &[d_out], b.shape()));
            }
        }
        let n = self.value().len() / d_in;
        let data = kernels::linear_forward(
            self.value().data(),
            w.value().data(),
            b.map(|b| b.value().data()),
            n,
            d_in,
            d_out,
        );
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        Ok(Var::from_op(
            Tensor::from_parts(shape, data),
            Op::Linear {
                x: self.clone(),
                w: w.clone(),
                b: b.cloned(),
            },
        ))
    }

    /// Dilated cross-correlation. `self [c_in, len]`, `w [c_out, c_in, k]`.
    pub fn conv1d(
        &self,
        w: &Var<T>,
        b: Option<&Var<T>>,
        dilation: usize,
        padding: usize,
    ) -> Result<Var<T>> {
        if dilation == 0 {
            bail_arg!("conv1d dilation must be >= 1");
        }
        if self.value().rank() != 2 {
            return Err(Error::shape("conv1d input", &[0, 0], self.shape()));
        }
        let (c_in, len_in) = (self.shape()[0], self.shape()[1]);
        if w.value().rank() != 3 || w.shape()[1] != c_in {
            return Err(Error::shape("conv1d weight", &[0, c_in, 0], w.shape()));
        }
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        if let Some(b) = b {
            if b.shape() != [c_out] {
                return Err(Error::shape("conv1d bias", &[c_out], b.shape()));
            }
        }
        let span = dilation * (k - 1);
        if len_in + 2 * padding <= span {
            bail_arg!("conv1d input length {len_in} too short for receptive span {span}");
        }
        let geom = Conv1dGeom {
            c_in,
            c_out,
            k,
            len_in,
            len_out: len_in + 2 * padding - span,
            dilation,
            padding,
        };
        let data = kernels::conv1d_forward(
            self.value().data(),
            w.value().data(),
            b.map(|b| b.value().data()),
            geom,
        );
        Ok(Var::from_op(
            Tensor::from_parts(vec![c_out, geom.len_out], data),
            Op::Conv1d {
                x: self.clone(),
                w: w.clone(),
                b: b.cloned(),
                geom,
            },
        ))
    }

    /// Transposed 2-D convolution without padding. `self [c_in, h, w]`,
    /// `weight [c_in, c_out, kh, kw]`. Output `[c_out, (h-1)·sh+kh, (w-1)·sw+kw]`.
    pub fn conv_transpose2d(&self, weight: &Var<T>, stride: (usize, usize)) -> Result<Var<T>> {
        if stride.0 == 0 || stride.1 == 0 {
            bail_arg!("conv_transpose2d strides must be >= 1, got {stride:?}");
        }
        if self.value().rank() != 3 {
            return Err(Error::shape(
                "conv_transpose2d input",
                &[0, 0, 0],
                self.shape(),
            ));
        }
        let c_in = self.shape()[0];
        if weight.value().rank() != 4 || weight.shape()[0] != c_in {
            return Err(Error::shape(
                "conv_transpose2d weight",
                &[c_in, 0, 0, 0],
                weight.shape(),
            ));
        }
        let geom = ConvT2dGeom {
            c_in,
            c_out: weight.shape()[1],
            h: self.shape()[1],
            w: self.shape()[2],
            kh: weight.shape()[2],
            kw: weight.shape()[3],
            sh: stride.0,
            sw: stride.1,
        };
        let data = kernels::conv_t2d_forward(self.value().data(), weight.value().data(), geom);
        Ok(Var::from_op(
            Tensor::from_parts(vec![geom.c_out, geom.out_h(), geom.out_w()], data),
            Op::ConvTranspose2d {
                x: self.clone(),
                w: weight.clone(),
                geom,
            },
        ))
    }

    /// Sub-range `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        if axis >= self.value().rank() || len == 0 || start + len > self.shape()[axis] {
            bail_arg!(
                "narrow axis {axis} range {start}..{} out of bounds for {:?}",
                start + len,
                self.shape()
            );
        }
        let (outer, full, inner) = split_axis(self.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&self.value().data()[s..s + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Var::from_op(
            Tensor::from_parts(shape, data),
            Op::Narrow {
                x: self.clone(),
                axis,
                start,
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let v = self.value().reshape(shape)?;
        Ok(Var::from_op(v, Op::Reshape(self.clone())))
    }

    pub fn transpose(&self) -> Result<Var<T>> {
        let v = self.value().transpose2d()?;
        Ok(Var::from_op(v, Op::Transpose(self.clone())))
    }

    /// `out.flat[j] = self.flat[index[j]]`, reshaped to `shape`.
    pub fn gather(&self, index: Rc<[usize]>, shape: &[usize]) -> Result<Var<T>> {
        if numel(shape) != index.len() {
            return Err(Error::shape("gather", &[index.len()], shape));
        }
        let src = self.value().data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            bail_arg!("gather index {bad} out of range for {} elements", src.len());
        }
        let data = index.iter().map(|&i| src[i]).collect();
        Ok(Var::from_op(
            Tensor::from_parts(shape.to_vec(), data),
            Op::Gather {
                x: self.clone(),
                index,
            },
        ))
    }

    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let d = self.value().cols();
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", &[d], gamma.shape()));
        }
        let (data, saved) = kernels::layer_norm_forward(
            self.value().data(),
            gamma.value().data(),
            beta.value().data(),
            d,
            eps,
        );
        Ok(Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), data),
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                saved,
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<T> {
        let d = self.value().cols();
        let data = kernels::softmax_rows(self.value().data(), d);
        Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), data),
            Op::Softmax(self.clone()),
        )
    }

    /// Multi-head scaled dot-product attention; `q`, `k`, `v` are `[n, d]`
    /// with `d` divisible by `heads`.
    pub fn attention(q: &Var<T>, k: &Var<T>, v: &Var<T>, heads: usize) -> Result<Var<T>> {
        same_shape("attention k", q, k)?;
        same_shape("attention v", q, v)?;
        if q.value().rank() != 2 || heads == 0 || !q.shape()[1].is_multiple_of(heads) {
            bail_arg!(
                "attention needs [n, d] with d divisible by {heads} heads, got {:?}",
                q.shape()
            );
        }
        let (n, d) = (q.shape()[0], q.shape()[1]);
        let (data, saved) = kernels::attention_forward(
            q.value().data(),
            k.value().data(),
            v.value().data(),
            n,
            d,
            heads,
        );
        Ok(Var::from_op(
            Tensor::from_parts(vec![n, d], data),
            Op::Attention {
                q: q.clone(),
                k: k.clone(),
                v: v.clone(),
                heads,
                saved,
            },
        ))
    }

    /// Mean over the leading axis of `[n, d]`, giving `[d]`.
    pub fn mean_rows(&self) -> Var<T> {
        let d = self.value().cols();
        let n = self.value().rows();
        let mut acc = vec![0.0f64; d];
        for row in self.value().data().chunks_exact(d) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v.f64();
            }
        }
        let data = acc.into_iter().map(|a| T::of(a / n as f64)).collect();
        Var::from_op(
            Tensor::from_parts(vec![d], data),
            Op::MeanRows(self.clone()),
        )
    }

    pub fn sum(&self) -> Var<T> {
        let s = T::of(self.value().sum_f64());
        Var::from_op(Tensor::scalar(s), Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Var<T> {
        let s = T::of(self.value().mean_f64());
        Var::from_op(Tensor::scalar(s), Op::Mean(self.clone()))
    }

    pub fn reduce(&self, r: Reduction) -> Var<T> {
        match r {
            Reduction::Sum => self.sum(),
            Reduction::Mean => self.mean(),
        }
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of
    /// `self [n, c]`.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<T>> {
        if self.value().rank() != 2 {
            return Err(Error::shape(
                "cross_entropy",
                &[labels.len(), 0],
                self.shape(),
            ));
        }
        let (n, c) = (self.shape()[0], self.shape()[1]);
        if labels.len() != n || n == 0 {
            return Err(Error::shape("cross_entropy labels", &[n], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            bail_arg!("label {bad} out of range for {c} classes");
        }
        let probs = kernels::softmax_rows(self.value().data(), c);
        let mut total = 0.0f64;
        for (r, &y) in labels.iter().enumerate() {
            let row = self.value().row(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(b.f64()));
            let lse = m + row.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln();
            total += lse - row[y].f64();
        }
        Ok(Var::from_op(
            Tensor::scalar(T::of(total / n as f64)),
            Op::CrossEntropy {
                logits: self.clone(),
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&self, target: &Tensor<T>) -> Result<Var<T>> {
        if self.shape() != target.shape() {
            return Err(Error::shape("mse", self.shape(), target.shape()));
        }
        let s: f64 = self
            .value()
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p.f64() - t.f64()).powi(2))
            .sum();
        Ok(Var::from_op(
            Tensor::scalar(T::of(s / target.len() as f64)),
            Op::Mse {
                pred: self.clone(),
                target: target.clone(),
            },
        ))
    }

    /// Identity forward; backward multiplies the incoming gradient by `-coeff`.
    pub fn gradient_reverse(&self, coeff: f64) -> Var<T> {
        debug_assert!(coeff >= 0.0);
        Var::from_op(
            self.value().clone(),
            Op::GradReverse(self.clone(), T::of(coeff)),
        )
    }
}
