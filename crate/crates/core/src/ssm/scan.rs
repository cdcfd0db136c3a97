//! Diagonal linear recurrences `h_t = a_t * h_{t-1} + b_t`, evaluated either
//! left to right or with a work-efficient associative scan.
//!
//! The scan combinator on pairs is
//! `(a2, b2) o (a1, b1) = (a2 * a1, a2 * b1 + b2)`; it is associative, so any
//! bracketing of the prefix products gives the same states.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// How the selective scan evaluates its recurrence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    /// Plain left-to-right loop.
    Sequential,
    /// Chunked Brent-Kung associative scan.
    #[default]
    Parallel,
}

/// Elements per chunk for the chunked scan (bounds the scratch memory).
const CHUNK_ELEMS: usize = 1 << 21;
/// Minimum lanes-per-task before a scan level is split across threads.
const PAR_MIN_LANES: usize = 1 << 14;

#[inline]
fn combine_into<F: Real>(a_left: &[F], b_left: &[F], a_right: &mut [F], b_right: &mut [F]) {
    for l in 0..a_right.len() {
        b_right[l] = a_right[l] * b_left[l] + b_right[l];
        a_right[l] *= a_left[l];
    }
}

/// In-place inclusive scan over `len` rows of `lanes` independent recurrences.
///
/// On return `b[t]` holds `h_t` (with `h_{-1} = 0`) and `a[t]` the
/// cumulative decay `a_t * ... * a_0`. Each combine touches a fixed pair of
/// rows, so the result is bitwise independent of the thread count.
pub fn associative_scan<F: Real>(a: &mut [F], b: &mut [F], lanes: usize) {
    let len = if lanes == 0 { 0 } else { a.len() / lanes };
    debug_assert_eq!(a.len(), b.len());
    if len <= 1 {
        return;
    }
    // Up-sweep: row i gathers the block ending at i.
    let mut d = 1;
    while d < len {
        let step = 2 * d;
        scan_level(a, b, lanes, len, d, step, step - 1);
        d = step;
    }
    // Down-sweep: fill in the remaining prefixes.
    d /= 2;
    while d >= 1 {
        let step = 2 * d;
        if 3 * d - 1 < len {
            scan_level(a, b, lanes, len, d, step, 3 * d - 1);
        }
        if d == 1 {
            break;
        }
        d /= 2;
    }
}

/// Applies `row[i] = row[i - d] o row[i]` for `i = first, first + step, ...`.
fn scan_level<F: Real>(
    a: &mut [F],
    b: &mut [F],
    lanes: usize,
    len: usize,
    d: usize,
    step: usize,
    first: usize,
) {
    if first >= len {
        return;
    }
    let tasks = (len - 1 - first) / step + 1;
    let apply = |i: usize, a: &mut [F], b: &mut [F]| {
        let (al, ar) = a.split_at_mut(i * lanes);
        let (bl, br) = b.split_at_mut(i * lanes);
        let src = (i - d) * lanes;
        combine_into(&al[src..src + lanes], &bl[src..src + lanes], &mut ar[..lanes], &mut br[..lanes]);
    };
    if tasks * lanes < PAR_MIN_LANES || rayon::current_num_threads() == 1 {
        for k in 0..tasks {
            apply(first + k * step, a, b);
        }
        return;
    }
    // Each task reads row i-d and writes row i; rows are disjoint across
    // tasks at one level. Split the buffers into `step`-row blocks so every
    // block owns exactly one (source, target) pair.
    let block = step * lanes;
    let offset = (first + 1).saturating_sub(step) * lanes;
    let (_, a_tail) = a.split_at_mut(offset);
    let (_, b_tail) = b.split_at_mut(offset);
    let local = first - (first + 1).saturating_sub(step);
    a_tail
        .par_chunks_mut(block)
        .zip(b_tail.par_chunks_mut(block))
        .for_each(|(ab, bb)| {
            if (local + 1) * lanes <= ab.len() {
                apply(local, ab, bb);
            }
        });
}

/// Left-to-right evaluation of the same recurrence, in place.
pub fn sequential_recurrence<F: Real>(a: &[F], b: &mut [F], lanes: usize) {
    let len = if lanes == 0 { 0 } else { b.len() / lanes };
    for t in 1..len {
        let (prev, cur) = b.split_at_mut(t * lanes);
        let prev = &prev[(t - 1) * lanes..];
        let at = &a[t * lanes..(t + 1) * lanes];
        for l in 0..lanes {
            cur[l] = at[l] * prev[l] + cur[l];
        }
    }
}

/// Continuous-time inputs of a diagonal selective SSM over one sequence.
///
/// Layouts are row-major: `delta[len x channels]`, `a[channels x state]`
/// (entries of the negative diagonal `A`), `b`/`c` `[len x state]` shared
/// across channels. Discretization is zero-order hold on `A` with the
/// first-order input term: `a_bar = exp(delta * A)`, `b_bar = delta * B`.
#[derive(Clone, Debug)]
pub struct ScanInputs<F: Real> {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub delta: Vec<F>,
    pub a: Vec<F>,
    pub b: Vec<F>,
    pub c: Vec<F>,
    /// Optional per-channel skip term `D * u`.
    pub d_skip: Option<Vec<F>>,
}

impl<F: Real> ScanInputs<F> {
    pub fn validate(&self, u: &[F]) -> Result<()> {
        let (l, d, s) = (self.len, self.channels, self.state);
        let checks = [
            ("u", u.len(), l * d),
            ("delta", self.delta.len(), l * d),
            ("a", self.a.len(), d * s),
            ("b", self.b.len(), l * s),
            ("c", self.c.len(), l * s),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::invalid(format!("scan input {name}: length {got}, expected {want}")));
            }
        }
        if let Some(ds) = &self.d_skip {
            if ds.len() != d {
                return Err(Error::invalid("scan skip term length"));
            }
        }
        Ok(())
    }

    /// Time-invariant system: per-channel step `delta[d]`, shared `b[s]`, `c[s]`.
    pub fn lti(len: usize, delta: &[F], a: &[F], b: &[F], c: &[F]) -> Self {
        let channels = delta.len();
        let state = b.len();
        ScanInputs {
            len,
            channels,
            state,
            delta: delta.iter().copied().cycle().take(len * channels).collect(),
            a: a.to_vec(),
            b: b.iter().copied().cycle().take(len * state).collect(),
            c: c.iter().copied().cycle().take(len * state).collect(),
            d_skip: None,
        }
    }

    /// True when `delta`, `b` and `c` do not vary along the sequence.
    pub fn is_time_invariant(&self) -> bool {
        let same_rows = |v: &[F], w: usize| {
            w == 0 || v.chunks_exact(w).all(|row| row == &v[..w])
        };
        same_rows(&self.delta, self.channels)
            && same_rows(&self.b, self.state)
            && same_rows(&self.c, self.state)
    }

    /// Fills `a_bar` / `b_bar * u` for rows `t0 .. t0 + rows` (lane = d * S + s).
    fn discretize_rows(&self, u: &[F], t0: usize, rows: usize, a_out: &mut [F], b_out: &mut [F]) {
        let (d_n, s_n) = (self.channels, self.state);
        for r in 0..rows {
            let t = t0 + r;
            let bt = &self.b[t * s_n..(t + 1) * s_n];
            for d in 0..d_n {
                let dt = self.delta[t * d_n + d];
                let du = dt * u[t * d_n + d];
                let ad = &self.a[d * s_n..(d + 1) * s_n];
                let base = (r * d_n + d) * s_n;
                for s in 0..s_n {
                    a_out[base + s] = (dt * ad[s]).exp();
                    b_out[base + s] = du * bt[s];
                }
            }
        }
    }

    fn readout_row(&self, u: &[F], t: usize, h: &[F], y: &mut [F]) {
        let (d_n, s_n) = (self.channels, self.state);
        let ct = &self.c[t * s_n..(t + 1) * s_n];
        for d in 0..d_n {
            let hd = &h[d * s_n..(d + 1) * s_n];
            let mut acc = F::zero();
            for s in 0..s_n {
                acc += ct[s] * hd[s];
            }
            if let Some(ds) = &self.d_skip {
                acc += ds[d] * u[t * d_n + d];
            }
            y[d] = acc;
        }
    }
}

/// Per-step states `h_t` and decays `a_bar_t`, both `len x channels x state`,
/// kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ScanTrace<F> {
    pub states: Vec<F>,
    pub decays: Vec<F>,
}

impl<F> ScanTrace<F> {
    fn reset(&mut self, n: usize) {
        self.states.clear();
        self.decays.clear();
        self.states.reserve(n);
        self.decays.reserve(n);
    }
}

fn check_state<F: Real>(h: &[F], t: usize) -> Result<()> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "ssm state".into(),
            index: t,
        });
    }
    Ok(())
}

/// Exact left-to-right recurrence with `h_0 = 0`; `y_t = C_t h_t (+ D u_t)`.
///
/// When `trace` is given it receives every `h_t` and `a_bar_t`.
pub fn scan_sequential<F: Real>(
    u: &[F],
    p: &ScanInputs<F>,
    mut trace: Option<&mut ScanTrace<F>>,
) -> Result<Vec<F>> {
    p.validate(u)?;
    let (l_n, d_n, s_n) = (p.len, p.channels, p.state);
    let lanes = d_n * s_n;
    let mut h = vec![F::zero(); lanes];
    let mut y = vec![F::zero(); l_n * d_n];
    if let Some(tr) = trace.as_deref_mut() {
        tr.reset(l_n * lanes);
    }
    for t in 0..l_n {
        let bt = &p.b[t * s_n..(t + 1) * s_n];
        for d in 0..d_n {
            let dt = p.delta[t * d_n + d];
            let du = dt * u[t * d_n + d];
            let ad = &p.a[d * s_n..(d + 1) * s_n];
            let hd = &mut h[d * s_n..(d + 1) * s_n];
            for s in 0..s_n {
                let decay = (dt * ad[s]).exp();
                hd[s] = decay * hd[s] + du * bt[s];
                if let Some(tr) = trace.as_deref_mut() {
                    tr.decays.push(decay);
                }
            }
        }
        check_state(&h, t)?;
        p.readout_row(u, t, &h, &mut y[t * d_n..(t + 1) * d_n]);
        if let Some(tr) = trace.as_deref_mut() {
            tr.states.extend_from_slice(&h);
        }
    }
    Ok(y)
}

/// Same output as [`scan_sequential`], computed chunk by chunk with an
/// associative scan inside each chunk and the carried state folded into the
/// first row of the next chunk.
pub fn scan_parallel<F: Real>(
    u: &[F],
    p: &ScanInputs<F>,
    mut trace: Option<&mut ScanTrace<F>>,
) -> Result<Vec<F>> {
    p.validate(u)?;
    let (l_n, d_n, s_n) = (p.len, p.channels, p.state);
    let lanes = d_n * s_n;
    let mut y = vec![F::zero(); l_n * d_n];
    if let Some(tr) = trace.as_deref_mut() {
        tr.reset(l_n * lanes);
    }
    if lanes == 0 || l_n == 0 {
        return Ok(y);
    }
    let chunk = (CHUNK_ELEMS / lanes).clamp(1, l_n);
    let mut a_buf = vec![F::zero(); chunk * lanes];
    let mut b_buf = vec![F::zero(); chunk * lanes];
    let mut carry = vec![F::zero(); lanes];
    let mut t0 = 0;
    while t0 < l_n {
        let rows = chunk.min(l_n - t0);
        let (a, b) = (&mut a_buf[..rows * lanes], &mut b_buf[..rows * lanes]);
        p.discretize_rows(u, t0, rows, a, b);
        if let Some(tr) = trace.as_deref_mut() {
            tr.decays.extend_from_slice(a);
        }
        for l in 0..lanes {
            b[l] = a[l] * carry[l] + b[l];
        }
        associative_scan(a, b, lanes);
        for r in 0..rows {
            let h = &b[r * lanes..(r + 1) * lanes];
            p.readout_row(u, t0 + r, h, &mut y[(t0 + r) * d_n..(t0 + r + 1) * d_n]);
        }
        first_bad_row(b, lanes, t0)?;
        carry.copy_from_slice(&b[(rows - 1) * lanes..]);
        if let Some(tr) = trace.as_deref_mut() {
            tr.states.extend_from_slice(b);
        }
        t0 += rows;
    }
    Ok(y)
}

fn first_bad_row<F: Real>(b: &[F], lanes: usize, t0: usize) -> Result<()> {
    for (r, row) in b.chunks_exact(lanes).enumerate() {
        check_state(row, t0 + r)?;
    }
    Ok(())
}

/// Convolution kernel `K[k, d] = sum_s C_s a_bar^k b_bar` of a time-invariant
/// system, `n x channels`.
pub fn lti_kernel<F: Real>(p: &ScanInputs<F>, n: usize) -> Result<Vec<F>> {
    if !p.is_time_invariant() {
        return Err(Error::invalid("convolution kernel is undefined for a selective (time-varying) SSM"));
    }
    let (d_n, s_n) = (p.channels, p.state);
    let mut k = vec![F::zero(); n * d_n];
    for d in 0..d_n {
        let dt = p.delta[d];
        for s in 0..s_n {
            let a_bar = (dt * p.a[d * s_n + s]).exp();
            let mut coef = p.c[s] * dt * p.b[s];
            for row in 0..n {
                k[row * d_n + d] += coef;
                coef *= a_bar;
            }
        }
    }
    Ok(k)
}

/// Causal per-channel convolution `y_t = sum_{k <= t} K_k u_{t-k}`.
pub fn causal_convolve<F: Real>(kernel: &[F], u: &[F], channels: usize) -> Vec<F> {
    let len = u.len() / channels.max(1);
    let klen = kernel.len() / channels.max(1);
    let mut y = vec![F::zero(); u.len()];
    for t in 0..len {
        for k in 0..=t.min(klen.saturating_sub(1)) {
            let (kr, ur) = (&kernel[k * channels..], &u[(t - k) * channels..]);
            let yr = &mut y[t * channels..(t + 1) * channels];
            for d in 0..channels {
                yr[d] += kr[d] * ur[d];
            }
        }
    }
    y
}
