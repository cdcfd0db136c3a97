//! Selective state-space blocks.
//!
//! A block maps `x[seq x d_model]` to the same shape:
//! `out_proj(scan(silu(conv(in_proj x))) * silu(gate_proj x))`, where the
//! scan is a diagonal SSM whose step size and input/output maps depend on the
//! token. The bidirectional variant runs the same parameters on the reversed
//! sequence and adds the two results.

mod scan;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use scan::{
    associative_scan, causal_convolve, lti_kernel, scan_parallel, scan_sequential, ScanTrace,
    sequential_recurrence, ScanInputs, ScanMode,
};

use crate::error::{Error, Result};
use crate::tensor::{Padding, Real, Tensor};

/// Shape hyperparameters of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsmConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
    /// Rank of the step-size projection; 0 means `ceil(d_model / 16)`.
    pub dt_rank: usize,
    pub scan: ScanMode,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig {
            d_model: 128,
            d_state: 16,
            expand: 2,
            conv_width: 4,
            dt_rank: 0,
            scan: ScanMode::Parallel,
        }
    }
}

impl SsmConfig {
    pub fn with_width(d_model: usize) -> Self {
        SsmConfig {
            d_model,
            ..Self::default()
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn rank(&self) -> usize {
        if self.dt_rank == 0 {
            self.d_model.div_ceil(16).max(1)
        } else {
            self.dt_rank
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.expand == 0 || self.conv_width == 0 {
            return Err(Error::invalid(format!("degenerate SSM config {self:?}")));
        }
        Ok(())
    }

    /// Parameter names and shapes, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (dm, di, s, r, w) = (self.d_model, self.d_inner(), self.d_state, self.rank(), self.conv_width);
        vec![
            ("in_proj", vec![dm, di]),
            ("gate_proj", vec![dm, di]),
            ("conv_kernel", vec![w, di]),
            ("conv_bias", vec![di]),
            ("dt_down", vec![di, r]),
            ("dt_up", vec![r, di]),
            ("dt_bias", vec![di]),
            ("b_proj", vec![di, s]),
            ("c_proj", vec![di, s]),
            ("a_log", vec![di, s]),
            ("d_skip", vec![di]),
            ("out_proj", vec![di, dm]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Bound parameter tensors of one block.
#[derive(Clone, Debug)]
pub struct SsmParams<F: Real> {
    pub config: SsmConfig,
    pub in_proj: Tensor<F>,
    pub gate_proj: Tensor<F>,
    pub conv_kernel: Tensor<F>,
    pub conv_bias: Tensor<F>,
    pub dt_down: Tensor<F>,
    pub dt_up: Tensor<F>,
    pub dt_bias: Tensor<F>,
    pub b_proj: Tensor<F>,
    pub c_proj: Tensor<F>,
    pub a_log: Tensor<F>,
    pub d_skip: Tensor<F>,
    pub out_proj: Tensor<F>,
}

/// Inverse of softplus, for initializing the step bias.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Initial values for every parameter, keyed like [`SsmConfig::param_shapes`].
///
/// Linear maps use `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; `A = -(1..=S)` on
/// every channel; step sizes start log-uniform in `[1e-3, 0.1]`.
pub fn init_values<R: Rng + ?Sized>(cfg: &SsmConfig, rng: &mut R) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (name, shape) in cfg.param_shapes() {
        let n: usize = shape.iter().product();
        let uniform = |rng: &mut R, bound: f64| -> Vec<f64> {
            let dist = Uniform::new_inclusive(-bound, bound);
            (0..n).map(|_| dist.sample(rng)).collect()
        };
        let values = match name {
            "conv_kernel" | "conv_bias" => uniform(rng, 1.0 / (cfg.conv_width as f64).sqrt()),
            "dt_up" => uniform(rng, 1.0 / (cfg.rank() as f64).sqrt()),
            "dt_bias" => {
                let (lo, hi) = (1e-3f64.ln(), 0.1f64.ln());
                (0..n)
                    .map(|_| inv_softplus(rng.gen_range(lo..hi).exp().max(1e-4)))
                    .collect()
            }
            "a_log" => (0..n).map(|i| ((i % cfg.d_state + 1) as f64).ln()).collect(),
            "d_skip" => vec![1.0; n],
            _ => uniform(rng, 1.0 / (shape[0] as f64).sqrt()),
        };
        out.push((name, shape, values));
    }
    out
}

impl<F: Real> SsmParams<F> {
    /// Builds a block by asking `lookup` for each named tensor.
    pub fn bind(
        config: SsmConfig,
        mut lookup: impl FnMut(&'static str, &[usize]) -> Result<Tensor<F>>,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        let mut t = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            let tensor = lookup(name, shape)?;
            if tensor.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: tensor.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            t.push(tensor);
        }
        let mut it = t.into_iter();
        let mut next = || it.next().expect("shape list");
        Ok(SsmParams {
            config,
            in_proj: next(),
            gate_proj: next(),
            conv_kernel: next(),
            conv_bias: next(),
            dt_down: next(),
            dt_up: next(),
            dt_bias: next(),
            b_proj: next(),
            c_proj: next(),
            a_log: next(),
            d_skip: next(),
            out_proj: next(),
        })
    }

    /// Freshly initialized trainable block.
    pub fn init<R: Rng + ?Sized>(config: SsmConfig, rng: &mut R) -> Result<Self> {
        let values = init_values(&config, rng);
        let mut it = values.into_iter();
        Self::bind(config, |_, _| {
            let (_, shape, v) = it.next().expect("init order");
            Tensor::param(v.into_iter().map(F::of).collect(), &shape)
        })
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor<F>)> {
        vec![
            ("in_proj", &self.in_proj),
            ("gate_proj", &self.gate_proj),
            ("conv_kernel", &self.conv_kernel),
            ("conv_bias", &self.conv_bias),
            ("dt_down", &self.dt_down),
            ("dt_up", &self.dt_up),
            ("dt_bias", &self.dt_bias),
            ("b_proj", &self.b_proj),
            ("c_proj", &self.c_proj),
            ("a_log", &self.a_log),
            ("d_skip", &self.d_skip),
            ("out_proj", &self.out_proj),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Differentiable selective scan.
///
/// `u, delta: [L x D]`, `a_log: [D x S]` with `A = -exp(a_log)`,
/// `b, c: [L x S]`, `d_skip: [D]`. Returns `y[L x D]`. The backward pass
/// replays the recurrence in reverse using the stored states.
pub fn selective_scan<F: Real>(
    u: &Tensor<F>,
    delta: &Tensor<F>,
    a_log: &Tensor<F>,
    b: &Tensor<F>,
    c: &Tensor<F>,
    d_skip: &Tensor<F>,
    mode: ScanMode,
) -> Result<Tensor<F>> {
    let (l_n, d_n) = u.dims2("selective_scan")?;
    let (_, s_n) = a_log.dims2("selective_scan")?;
    if delta.shape() != u.shape() || a_log.shape() != [d_n, s_n] || b.shape() != [l_n, s_n] || c.shape() != [l_n, s_n] || d_skip.numel() != d_n {
        return Err(Error::ShapeMismatch {
            op: "selective_scan",
            lhs: u.shape().to_vec(),
            rhs: a_log.shape().to_vec(),
        });
    }
    let a: Vec<F> = a_log.data().iter().map(|v| -v.exp()).collect();
    let inputs = ScanInputs {
        len: l_n,
        channels: d_n,
        state: s_n,
        delta: delta.to_vec(),
        a,
        b: b.to_vec(),
        c: c.to_vec(),
        d_skip: Some(d_skip.to_vec()),
    };
    let parents = vec![u.clone(), delta.clone(), a_log.clone(), b.clone(), c.clone(), d_skip.clone()];
    let tracking = parents.iter().any(|p| p.requires_grad());
    let mut trace = ScanTrace::default();
    let store = tracking.then_some(&mut trace);
    let y = match mode {
        ScanMode::Sequential => scan_sequential(u.data(), &inputs, store)?,
        ScanMode::Parallel => scan_parallel(u.data(), &inputs, store)?,
    };
    Ok(Tensor::from_op("selective_scan", y, vec![l_n, d_n], parents, move |g, parents, _| {
        let grads = scan_backward(g, parents[0].data(), &inputs, &trace);
        let [gu, gdelta, ga, gb, gc, gd] = grads;
        let ga_log: Vec<F> = ga.iter().zip(&inputs.a).map(|(g, a)| *g * *a).collect();
        let keep = |i: usize, v: Vec<F>| parents[i].requires_grad().then_some(v);
        vec![keep(0, gu), keep(1, gdelta), keep(2, ga_log), keep(3, gb), keep(4, gc), keep(5, gd)]
    }))
}

/// Gradients w.r.t. `u, delta, A, B, C, D` given upstream `g[L x D]`.
fn scan_backward<F: Real>(g: &[F], u: &[F], p: &ScanInputs<F>, trace: &ScanTrace<F>) -> [Vec<F>; 6] {
    let states = &trace.states;
    let (l_n, d_n, s_n) = (p.len, p.channels, p.state);
    let lanes = d_n * s_n;
    let mut gu = vec![F::zero(); l_n * d_n];
    let mut gdelta = vec![F::zero(); l_n * d_n];
    let mut ga = vec![F::zero(); lanes];
    let mut gb = vec![F::zero(); l_n * s_n];
    let mut gc = vec![F::zero(); l_n * s_n];
    let mut gd = vec![F::zero(); d_n];
    let d_skip = p.d_skip.as_deref().unwrap_or(&[]);
    let mut gh = vec![F::zero(); lanes];
    for t in (0..l_n).rev() {
        let h = &states[t * lanes..(t + 1) * lanes];
        let bt = &p.b[t * s_n..(t + 1) * s_n];
        let ct = &p.c[t * s_n..(t + 1) * s_n];
        for d in 0..d_n {
            let gy = g[t * d_n + d];
            let dt = p.delta[t * d_n + d];
            let ud = u[t * d_n + d];
            if !d_skip.is_empty() {
                gu[t * d_n + d] += gy * d_skip[d];
                gd[d] += gy * ud;
            }
            let mut g_delta = F::zero();
            let mut g_u = F::zero();
            for s in 0..s_n {
                let l = d * s_n + s;
                gc[t * s_n + s] += gy * h[l];
                let gl = gh[l] + ct[s] * gy;
                let ad = p.a[l];
                let decay = trace.decays[t * lanes + l];
                let h_prev = if t > 0 { states[(t - 1) * lanes + l] } else { F::zero() };
                g_delta += gl * (h_prev * decay * ad + bt[s] * ud);
                ga[l] += gl * h_prev * decay * dt;
                gb[t * s_n + s] += gl * dt * ud;
                g_u += gl * dt * bt[s];
                gh[l] = gl * decay;
            }
            gdelta[t * d_n + d] += g_delta;
            gu[t * d_n + d] += g_u;
        }
    }
    [gu, gdelta, ga, gb, gc, gd]
}

/// One selective SSM block on `x[seq x d_model]`.
pub fn mamba_block<F: Real>(x: &Tensor<F>, p: &SsmParams<F>) -> Result<Tensor<F>> {
    let (seq, dm) = x.dims2("mamba_block")?;
    if dm != p.config.d_model {
        return Err(Error::ShapeMismatch {
            op: "mamba_block",
            lhs: x.shape().to_vec(),
            rhs: vec![seq, p.config.d_model],
        });
    }
    if seq == 0 {
        return Err(Error::Empty("mamba_block input sequence".into()));
    }
    let inner = x.matmul(&p.in_proj)?;
    // A causal kernel longer than the sequence only ever sees padding in its
    // leading taps, so dropping them gives the same result.
    let kernel = if p.config.conv_width > seq {
        p.conv_kernel.narrow_rows(p.config.conv_width - seq, seq)?
    } else {
        p.conv_kernel.clone()
    };
    let u = inner
        .conv1d_depthwise(&kernel, Padding::Causal)?
        .add_bias(&p.conv_bias)?
        .silu();
    let delta = u
        .matmul(&p.dt_down)?
        .matmul(&p.dt_up)?
        .add_bias(&p.dt_bias)?
        .softplus();
    let b = u.matmul(&p.b_proj)?;
    let c = u.matmul(&p.c_proj)?;
    let y = selective_scan(&u, &delta, &p.a_log, &b, &c, &p.d_skip, p.config.scan)?;
    let gate = x.matmul(&p.gate_proj)?.silu();
    y.mul(&gate)?.matmul(&p.out_proj)
}

/// `block(x) + flip(block(flip(x)))` with one shared parameter set.
pub fn bidirectional_block<F: Real>(x: &Tensor<F>, p: &SsmParams<F>) -> Result<Tensor<F>> {
    let forward = mamba_block(x, p)?;
    let backward = mamba_block(&x.flip_sequence(), p)?.flip_sequence();
    forward.add(&backward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> SsmConfig {
        SsmConfig {
            d_model: 4,
            d_state: 3,
            expand: 2,
            conv_width: 3,
            dt_rank: 2,
            scan: ScanMode::Sequential,
        }
    }

    #[test]
    fn default_rank_and_count() {
        let cfg = SsmConfig::with_width(128);
        assert_eq!(cfg.rank(), 8);
        assert_eq!(cfg.d_inner(), 256);
        let p = SsmParams::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.param_count(), cfg.param_count());
    }

    #[test]
    fn a_starts_negative_real() {
        let cfg = small();
        let p = SsmParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (i, v) in p.a_log.data().iter().enumerate() {
            assert!((v.exp() - (i % cfg.d_state + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn short_sequences_are_accepted() {
        let cfg = small();
        let p = SsmParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for seq in 1..5 {
            let x = Tensor::new(vec![0.1; seq * 4], &[seq, 4]).unwrap();
            let y = bidirectional_block(&x, &p).unwrap();
            assert_eq!(y.shape(), &[seq, 4]);
        }
    }

    #[test]
    fn scan_modes_agree_inside_block() {
        let mut cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = SsmParams::<f64>::init(cfg, &mut rng).unwrap();
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(x, &[10, 4]).unwrap();
        let a = mamba_block(&x, &p).unwrap();
        cfg.scan = ScanMode::Parallel;
        p.config = cfg;
        let b = mamba_block(&x, &p).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn selective_scan_gradient() {
        let (l, d, s) = (6, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut r = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
        let params = vec![
            r(l * d, -1.0, 1.0),
            r(l * d, 0.05, 0.8),
            r(d * s, -0.5, 1.0),
            r(l * s, -1.0, 1.0),
            r(l * s, -1.0, 1.0),
            r(d, -1.0, 1.0),
            r(l * d, -1.0, 1.0),
        ];
        for mode in [ScanMode::Sequential, ScanMode::Parallel] {
            let report = finite_difference_check(&params, 1e-5, |p| {
                let u = Tensor::param(p[0].clone(), &[l, d])?;
                let dl = Tensor::param(p[1].clone(), &[l, d])?;
                let al = Tensor::param(p[2].clone(), &[d, s])?;
                let b = Tensor::param(p[3].clone(), &[l, s])?;
                let c = Tensor::param(p[4].clone(), &[l, s])?;
                let ds = Tensor::param(p[5].clone(), &[d])?;
                let w = Tensor::new(p[6].clone(), &[l, d])?;
                let y = selective_scan(&u, &dl, &al, &b, &c, &ds, mode)?;
                Ok((y.mul(&w)?.sum(), vec![u, dl, al, b, c, ds]))
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{mode:?} {report:?}");
        }
    }

    #[test]
    fn bidirectional_block_gradient() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = init_values(&cfg, &mut rng);
        let mut params: Vec<Vec<f64>> = init.iter().map(|(_, _, v)| v.clone()).collect();
        let x: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        params.push(x);
        let report = finite_difference_check(&params, 1e-5, |p| {
            let mut i = 0;
            let block = SsmParams::bind(cfg, |_, shape| {
                i += 1;
                Tensor::param(p[i - 1].clone(), shape)
            })?;
            let x = Tensor::param(p[12].clone(), &[5, 4])?;
            let y = bidirectional_block(&x, &block)?;
            let mut leaves: Vec<Tensor<f64>> = block.named().into_iter().map(|(_, t)| t.clone()).collect();
            leaves.push(x);
            Ok((y.mul(&y)?.sum(), leaves))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn identity_pathway() {
        // in/out projections are the identity, kernel taps only the current
        // step, B = C = 0: the block reduces to silu(x) * silu(x W_gate).
        let cfg = SsmConfig {
            d_model: 3,
            d_state: 2,
            expand: 1,
            conv_width: 2,
            dt_rank: 1,
            scan: ScanMode::Parallel,
        };
        let gate = vec![0.5, -0.2, 0.1, 0.3, 0.8, -0.6, 0.0, 0.4, 0.9];
        let p = SsmParams::<f64>::bind(cfg, |name, shape| {
            let n: usize = shape.iter().product();
            let v = match name {
                "in_proj" | "out_proj" => (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect(),
                "gate_proj" => gate.clone(),
                "conv_kernel" => vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
                "d_skip" => vec![1.0; n],
                _ => vec![0.0; n],
            };
            Tensor::new(v, shape)
        })
        .unwrap();
        let xs = vec![0.3, -1.0, 2.0, 0.7, 0.1, -0.4];
        let x = Tensor::new(xs.clone(), &[2, 3]).unwrap();
        let y = mamba_block(&x, &p).unwrap();
        let silu = |v: f64| v / (1.0 + (-v).exp());
        for t in 0..2 {
            for j in 0..3 {
                let g: f64 = (0..3).map(|i| xs[t * 3 + i] * gate[i * 3 + j]).sum();
                let want = silu(xs[t * 3 + j]) * silu(g);
                assert!((y.data()[t * 3 + j] - want).abs() < 1e-12);
            }
        }
    }
}
