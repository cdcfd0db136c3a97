//! The fixed differentiable operation set.
//!
//! Binary elementwise ops accept identical shapes or a one-element operand
//! (scalar broadcast). The only other broadcast is [`Tensor::add_bias`], which
//! adds a per-channel vector to every row of a `seq x ch` tensor.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Zero padding scheme of [`Tensor::conv1d_depthwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// `w - 1` zeros on the left; output `t` sees inputs `t-w+1 ..= t`.
    Causal,
    /// `(w - 1) / 2` zeros on the left, the remainder on the right.
    Same,
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    #[inline]
    fn apply<F: Real>(self, a: F, b: F) -> F {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

fn reduce_sum<F: Real>(g: &[F]) -> Vec<F> {
    vec![g.iter().copied().sum()]
}

impl<F: Real> Tensor<F> {
    fn binary(&self, other: &Tensor<F>, kind: Binary) -> Result<Tensor<F>> {
        let (na, nb) = (self.numel(), other.numel());
        let shape = if self.shape() == other.shape() {
            self.shape().to_vec()
        } else if nb == 1 {
            self.shape().to_vec()
        } else if na == 1 {
            other.shape().to_vec()
        } else {
            return Err(Error::ShapeMismatch {
                op: kind.name(),
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        };
        let n = na.max(nb);
        let (a, b) = (self.data(), other.data());
        let ia = move |i: usize| if na == 1 { 0 } else { i };
        let ib = move |i: usize| if nb == 1 { 0 } else { i };
        let data: Vec<F> = (0..n).map(|i| kind.apply(a[ia(i)], b[ib(i)])).collect();

        Ok(Tensor::from_op(
            kind.name(),
            data,
            shape,
            vec![self.clone(), other.clone()],
            move |g, parents, _| {
                let (a, b) = (parents[0].data(), parents[1].data());
                let (ga, gb): (Vec<F>, Vec<F>) = match kind {
                    Binary::Add => (g.to_vec(), g.to_vec()),
                    Binary::Sub => (g.to_vec(), g.iter().map(|&v| -v).collect()),
                    Binary::Mul => (
                        (0..n).map(|i| g[i] * b[ib(i)]).collect(),
                        (0..n).map(|i| g[i] * a[ia(i)]).collect(),
                    ),
                };
                let fold = |full: Vec<F>, len: usize| if len == 1 && n != 1 { reduce_sum(&full) } else { full };
                vec![
                    parents[0].requires_grad().then(|| fold(ga, na)),
                    parents[1].requires_grad().then(|| fold(gb, nb)),
                ]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Mul)
    }

    /// Unary map with derivative expressed through input `x` and output `y`.
    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(F) -> F,
        df: impl Fn(F, F) -> F + 'static,
    ) -> Tensor<F> {
        let data: Vec<F> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            name,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, parents, out| {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter().zip(out))
                        .map(|(&g, (&x, &y))| g * df(x, y))
                        .collect(),
                )]
            },
        )
    }

    pub fn scale(&self, c: f64) -> Tensor<F> {
        let c = F::of(c);
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    /// Adds a constant to every element.
    pub fn shift(&self, c: f64) -> Tensor<F> {
        let c = F::of(c);
        self.unary("shift", move |x| x + c, |_, _| F::one())
    }

    pub fn tanh(&self) -> Tensor<F> {
        self.unary("tanh", |x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn exp(&self) -> Tensor<F> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor<F> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            },
        )
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Tensor<F> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn sum(&self) -> Tensor<F> {
        let s: F = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![s], vec![], vec![self.clone()], move |g, _, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<F> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Adds `bias[ch]` to every row of `self[seq x ch]`.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let (rows, cols) = self.dims2("add_bias")?;
        if bias.numel() != cols {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let b = bias.data();
        let mut data = self.to_vec();
        for row in data.chunks_exact_mut(cols) {
            row.iter_mut().zip(b).for_each(|(x, &b)| *x += b);
        }
        Ok(Tensor::from_op(
            "add_bias",
            data,
            vec![rows, cols],
            vec![self.clone(), bias.clone()],
            move |g, parents, _| {
                let gb = parents[1].requires_grad().then(|| {
                    let mut acc = vec![F::zero(); cols];
                    for row in g.chunks_exact(cols) {
                        acc.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                    }
                    acc
                });
                vec![parents[0].requires_grad().then(|| g.to_vec()), gb]
            },
        ))
    }

    /// `self[m x k] @ other[k x n]`.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut data = vec![F::zero(); m * n];
        F::gemm(m, k, n, F::one(), self.data(), (k, 1), other.data(), (n, 1), F::zero(), &mut data, (n, 1));
        Ok(Tensor::from_op(
            "matmul",
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, parents, _| {
                let (a, b) = (parents[0].data(), parents[1].data());
                let ga = parents[0].requires_grad().then(|| {
                    // dA = dC @ B^T
                    let mut ga = vec![F::zero(); m * k];
                    F::gemm(m, n, k, F::one(), g, (n, 1), b, (1, n), F::zero(), &mut ga, (k, 1));
                    ga
                });
                let gb = parents[1].requires_grad().then(|| {
                    // dB = A^T @ dC
                    let mut gb = vec![F::zero(); k * n];
                    F::gemm(k, m, n, F::one(), a, (1, k), g, (n, 1), F::zero(), &mut gb, (n, 1));
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Per-channel 1-D convolution of `self[seq x ch]` with `kernel[w x ch]`.
    /// Output length equals input length.
    pub fn conv1d_depthwise(&self, kernel: &Tensor<F>, padding: Padding) -> Result<Tensor<F>> {
        let (t_len, ch) = self.dims2("conv1d_depthwise")?;
        let (w, kch) = kernel.dims2("conv1d_depthwise")?;
        if kch != ch || w == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d_depthwise",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if w > t_len {
            return Err(Error::invalid(format!(
                "conv1d kernel width {w} exceeds sequence length {t_len}"
            )));
        }
        let left = match padding {
            Padding::Causal => w - 1,
            Padding::Same => (w - 1) / 2,
        };
        let (x, kern) = (self.data(), kernel.data());
        let mut data = vec![F::zero(); t_len * ch];
        for t in 0..t_len {
            let out = &mut data[t * ch..(t + 1) * ch];
            for j in 0..w {
                let Some(s) = (t + j).checked_sub(left).filter(|&s| s < t_len) else {
                    continue;
                };
                let xs = &x[s * ch..(s + 1) * ch];
                let kj = &kern[j * ch..(j + 1) * ch];
                for c in 0..ch {
                    out[c] += kj[c] * xs[c];
                }
            }
        }
        Ok(Tensor::from_op(
            "conv1d_depthwise",
            data,
            vec![t_len, ch],
            vec![self.clone(), kernel.clone()],
            move |g, parents, _| {
                let (x, kern) = (parents[0].data(), parents[1].data());
                let need_x = parents[0].requires_grad();
                let need_k = parents[1].requires_grad();
                let mut gx = vec![F::zero(); if need_x { t_len * ch } else { 0 }];
                let mut gk = vec![F::zero(); if need_k { w * ch } else { 0 }];
                for t in 0..t_len {
                    let gt = &g[t * ch..(t + 1) * ch];
                    for j in 0..w {
                        let Some(s) = (t + j).checked_sub(left).filter(|&s| s < t_len) else {
                            continue;
                        };
                        if need_x {
                            let kj = &kern[j * ch..(j + 1) * ch];
                            let gxs = &mut gx[s * ch..(s + 1) * ch];
                            for c in 0..ch {
                                gxs[c] += kj[c] * gt[c];
                            }
                        }
                        if need_k {
                            let xs = &x[s * ch..(s + 1) * ch];
                            let gkj = &mut gk[j * ch..(j + 1) * ch];
                            for c in 0..ch {
                                gkj[c] += xs[c] * gt[c];
                            }
                        }
                    }
                }
                vec![need_x.then_some(gx), need_k.then_some(gk)]
            },
        ))
    }

    /// Normalizes each row of `self[seq x ch]` over channels, then applies
    /// `gamma * x_hat + beta`.
    pub fn layernorm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
        let (rows, ch) = self.dims2("layernorm")?;
        if gamma.numel() != ch || beta.numel() != ch {
            return Err(Error::ShapeMismatch {
                op: "layernorm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::invalid("layernorm eps must be positive"));
        }
        let eps = F::of(eps);
        let inv_ch = F::one() / F::of(ch as f64);
        let (x, ga, be) = (self.data(), gamma.data(), beta.data());
        let mut xhat = vec![F::zero(); rows * ch];
        let mut rstd = vec![F::zero(); rows];
        let mut data = vec![F::zero(); rows * ch];
        for r in 0..rows {
            let xr = &x[r * ch..(r + 1) * ch];
            let mu = xr.iter().copied().sum::<F>() * inv_ch;
            let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() * inv_ch;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..ch {
                let h = (xr[c] - mu) * rs;
                xhat[r * ch + c] = h;
                data[r * ch + c] = h * ga[c] + be[c];
            }
        }
        Ok(Tensor::from_op(
            "layernorm",
            data,
            vec![rows, ch],
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, parents, _| {
                let ga = parents[1].data();
                let mut gx = vec![F::zero(); rows * ch];
                let mut gg = vec![F::zero(); ch];
                let mut gb = vec![F::zero(); ch];
                for r in 0..rows {
                    let gr = &g[r * ch..(r + 1) * ch];
                    let hr = &xhat[r * ch..(r + 1) * ch];
                    let mut mean_d = F::zero();
                    let mut mean_dh = F::zero();
                    for c in 0..ch {
                        let d = gr[c] * ga[c];
                        mean_d += d;
                        mean_dh += d * hr[c];
                        gg[c] += gr[c] * hr[c];
                        gb[c] += gr[c];
                    }
                    mean_d *= inv_ch;
                    mean_dh *= inv_ch;
                    for c in 0..ch {
                        let d = gr[c] * ga[c];
                        gx[r * ch + c] = rstd[r] * (d - mean_d - hr[c] * mean_dh);
                    }
                }
                vec![
                    parents[0].requires_grad().then_some(gx),
                    parents[1].requires_grad().then_some(gg),
                    parents[2].requires_grad().then_some(gb),
                ]
            },
        ))
    }

    /// Reverses the leading (sequence) axis.
    pub fn flip_sequence(&self) -> Tensor<F> {
        let rows = self.shape().first().copied().unwrap_or(1);
        let width = if rows == 0 { 0 } else { self.numel() / rows };
        Tensor::from_op(
            "flip_sequence",
            flip_rows(self.data(), width),
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _, _| vec![Some(flip_rows(g, width))],
        )
    }

    /// Rows `start .. start + len` of the leading axis.
    pub fn narrow_rows(&self, start: usize, len: usize) -> Result<Tensor<F>> {
        let rows = *self
            .shape()
            .first()
            .ok_or_else(|| Error::invalid("narrow_rows on a 0-d tensor"))?;
        if start + len > rows {
            return Err(Error::invalid(format!(
                "narrow_rows {start}..{} out of range for {rows} rows",
                start + len
            )));
        }
        let width = self.numel() / rows.max(1);
        let data = self.data()[start * width..(start + len) * width].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        let total = self.numel();
        Ok(Tensor::from_op("narrow_rows", data, shape, vec![self.clone()], move |g, _, _| {
            let mut full = vec![F::zero(); total];
            full[start * width..(start + len) * width].copy_from_slice(g);
            vec![Some(full)]
        }))
    }

    /// Non-overlapping depthwise pooling: window `k`, stride `k`, zero padded
    /// at the tail. `self[seq x ch]`, `kernel[k x ch]` -> `[ceil(seq/k) x ch]`.
    pub fn pool_strided(&self, kernel: &Tensor<F>) -> Result<Tensor<F>> {
        let (t_len, ch) = self.dims2("pool_strided")?;
        let (k, kch) = kernel.dims2("pool_strided")?;
        if kch != ch || k == 0 {
            return Err(Error::ShapeMismatch {
                op: "pool_strided",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        let groups = t_len.div_ceil(k);
        let (x, kern) = (self.data(), kernel.data());
        let mut data = vec![F::zero(); groups * ch];
        for t in 0..t_len {
            let (gi, j) = (t / k, t % k);
            for c in 0..ch {
                data[gi * ch + c] += kern[j * ch + c] * x[t * ch + c];
            }
        }
        Ok(Tensor::from_op(
            "pool_strided",
            data,
            vec![groups, ch],
            vec![self.clone(), kernel.clone()],
            move |g, parents, _| {
                let (x, kern) = (parents[0].data(), parents[1].data());
                let mut gx = vec![F::zero(); t_len * ch];
                let mut gk = vec![F::zero(); k * ch];
                for t in 0..t_len {
                    let (gi, j) = (t / k, t % k);
                    for c in 0..ch {
                        let go = g[gi * ch + c];
                        gx[t * ch + c] = kern[j * ch + c] * go;
                        gk[j * ch + c] += x[t * ch + c] * go;
                    }
                }
                vec![
                    parents[0].requires_grad().then_some(gx),
                    parents[1].requires_grad().then_some(gk),
                ]
            },
        ))
    }

    /// Nearest-neighbour upsampling: each row repeated `k` times, truncated
    /// to `n_out` rows. Requires `ceil(n_out / k)` input rows.
    pub fn upsample_repeat(&self, k: usize, n_out: usize) -> Result<Tensor<F>> {
        let (groups, ch) = self.dims2("upsample_repeat")?;
        if k == 0 || n_out.div_ceil(k) != groups {
            return Err(Error::invalid(format!(
                "upsample_repeat: {groups} rows cannot expand by {k} to {n_out}"
            )));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(n_out * ch);
        for t in 0..n_out {
            data.extend_from_slice(&x[(t / k) * ch..(t / k + 1) * ch]);
        }
        Ok(Tensor::from_op(
            "upsample_repeat",
            data,
            vec![n_out, ch],
            vec![self.clone()],
            move |g, _, _| {
                let mut gx = vec![F::zero(); groups * ch];
                for t in 0..n_out {
                    let gi = t / k;
                    for c in 0..ch {
                        gx[gi * ch + c] += g[t * ch + c];
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<F: Real>(x: F) -> F {
    if x > F::of(20.0) {
        x
    } else {
        x.max(F::zero()) + (-x.abs()).exp().ln_1p()
    }
}

fn flip_rows<F: Real>(data: &[F], width: usize) -> Vec<F> {
    if width == 0 {
        return Vec::new();
    }
    data.chunks_exact(width).rev().flatten().copied().collect()
}
