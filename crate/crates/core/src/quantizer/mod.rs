//! Finite scalar quantization.
//!
//! Each latent dimension is squashed into `[0, L_i - 1]` and rounded to an
//! integer; the tuple of integers is the code. Codes are numbered in mixed
//! radix, so ids and lattice points are in bijection.

mod files;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use files::{read_tokens, write_tokens, TokenFile, TokenFormat, TokenRecord};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Discrete token id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Levels per latent dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct FsqSpec {
    levels: Vec<u32>,
}

impl TryFrom<Vec<u32>> for FsqSpec {
    type Error = Error;

    fn try_from(levels: Vec<u32>) -> Result<Self> {
        FsqSpec::new(levels)
    }
}

impl From<FsqSpec> for Vec<u32> {
    fn from(s: FsqSpec) -> Self {
        s.levels
    }
}

impl Default for FsqSpec {
    fn default() -> Self {
        FsqSpec::uniform(4, 6).expect("default spec")
    }
}

impl FsqSpec {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("FSQ spec needs at least one dimension"));
        }
        if let Some(l) = levels.iter().find(|&&l| l < 2) {
            return Err(Error::invalid(format!("FSQ level {l} < 2")));
        }
        let size = levels.iter().try_fold(1u64, |acc, &l| acc.checked_mul(l as u64));
        if size.is_none_or(|s| s > u32::MAX as u64) {
            return Err(Error::invalid("FSQ codebook size overflows u32"));
        }
        Ok(FsqSpec { levels })
    }

    pub fn uniform(level: u32, dims: usize) -> Result<Self> {
        Self::new(vec![level; dims])
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn dims(&self) -> usize {
        self.levels.len()
    }

    pub fn codebook_size(&self) -> u32 {
        self.levels.iter().product()
    }

    /// Mixed-radix index `sum_i c_i * prod_{j<i} L_j`.
    pub fn code_to_id(&self, code: &[u32]) -> Result<TokenId> {
        if code.len() != self.dims() {
            return Err(Error::SpecMismatch {
                expected: self.levels.clone(),
                found: code.to_vec(),
            });
        }
        let mut id = 0u32;
        let mut radix = 1u32;
        for (i, (&c, &l)) in code.iter().zip(&self.levels).enumerate() {
            if c >= l {
                return Err(Error::invalid(format!("code coordinate {i} = {c} outside [0, {l})")));
            }
            id += c * radix;
            radix = radix.wrapping_mul(l);
        }
        Ok(TokenId(id))
    }

    pub fn id_to_code(&self, id: TokenId) -> Result<Vec<u32>> {
        if id.0 >= self.codebook_size() {
            return Err(Error::invalid(format!(
                "token id {id} outside codebook of size {}",
                self.codebook_size()
            )));
        }
        let mut rest = id.0;
        Ok(self
            .levels
            .iter()
            .map(|&l| {
                let c = rest % l;
                rest /= l;
                c
            })
            .collect())
    }

    fn check_width<F: Real>(&self, z: &Tensor<F>, op: &'static str) -> Result<(usize, usize)> {
        let (rows, d) = z.dims2(op)?;
        if d != self.dims() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: z.shape().to_vec(),
                rhs: vec![rows, self.dims()],
            });
        }
        Ok((rows, d))
    }
}

/// Squashes `z[seq x D]` into the hypercube: `((L_i - 1) / 2) (tanh z + 1)`.
pub fn bound<F: Real>(z: &Tensor<F>, spec: &FsqSpec) -> Result<Tensor<F>> {
    let (_, d) = spec.check_width(z, "fsq_bound")?;
    let half: Vec<F> = spec.levels.iter().map(|&l| F::of((l as f64 - 1.0) / 2.0)).collect();
    let data = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| half[i % d] * (v.tanh() + F::one()))
        .collect();
    Ok(Tensor::from_op("fsq_bound", data, z.shape().to_vec(), vec![z.clone()], move |g, p, _| {
        let gz = p[0]
            .data()
            .iter()
            .zip(g)
            .enumerate()
            .map(|(i, (v, g))| {
                let t = v.tanh();
                *g * half[i % d] * (F::one() - t * t)
            })
            .collect();
        vec![Some(gz)]
    }))
}

/// Rounds (half to even) with a straight-through gradient and returns the
/// per-row token ids.
pub fn quantize<F: Real>(z_bounded: &Tensor<F>, spec: &FsqSpec) -> Result<(Tensor<F>, TokenSequence)> {
    let (rows, d) = spec.check_width(z_bounded, "fsq_quantize")?;
    let mut data = Vec::with_capacity(rows * d);
    let mut ids = Vec::with_capacity(rows);
    let mut code = vec![0u32; d];
    for row in z_bounded.data().chunks_exact(d) {
        for (i, v) in row.iter().enumerate() {
            let max = (spec.levels[i] - 1) as f64;
            let r = v.f64().round_ties_even().clamp(0.0, max);
            code[i] = r as u32;
            data.push(F::of(r));
        }
        ids.push(spec.code_to_id(&code)?);
    }
    let out = Tensor::from_op("fsq_quantize", data, vec![rows, d], vec![z_bounded.clone()], |g, _, _| {
        vec![Some(g.to_vec())]
    });
    Ok((out, TokenSequence { ids, spec: spec.clone() }))
}

/// Lattice points of a token sequence as `[len x D]` values.
pub fn dequantize<F: Real>(tokens: &TokenSequence) -> Result<Tensor<F>> {
    let d = tokens.spec.dims();
    let mut data = Vec::with_capacity(tokens.ids.len() * d);
    for &id in &tokens.ids {
        data.extend(tokens.spec.id_to_code(id)?.into_iter().map(|c| F::of(c as f64)));
    }
    Tensor::new(data, &[tokens.ids.len(), d])
}

/// Token ids of one structure together with the spec that produced them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub spec: FsqSpec,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, spec: FsqSpec) -> Result<Self> {
        let size = spec.codebook_size();
        if let Some(id) = ids.iter().find(|id| id.0 >= size) {
            return Err(Error::invalid(format!("token id {id} outside codebook of size {size}")));
        }
        Ok(TokenSequence { ids, spec })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Fraction of the codebook hit by `ids`.
pub fn codebook_usage<'a>(ids: impl IntoIterator<Item = &'a TokenId>, codebook_size: u32) -> Result<f64> {
    let distinct: HashSet<&TokenId> = ids.into_iter().collect();
    if distinct.is_empty() {
        return Err(Error::Empty("token stream".into()));
    }
    Ok(distinct.len() as f64 / codebook_size as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_for_uniform_levels() {
        let sizes: Vec<u32> = (4..=8).map(|d| FsqSpec::uniform(4, d).unwrap().codebook_size()).collect();
        assert_eq!(sizes, [256, 1024, 4096, 16384, 65536]);
        assert_eq!(FsqSpec::default().codebook_size(), 4096);
    }

    #[test]
    fn invalid_specs() {
        assert!(FsqSpec::new(vec![]).is_err());
        assert!(FsqSpec::new(vec![4, 1]).is_err());
        assert!(FsqSpec::new(vec![1 << 16, 1 << 16, 2]).is_err());
    }

    #[test]
    fn bound_examples() {
        let spec = FsqSpec::uniform(4, 1).unwrap();
        let z = Tensor::<f64>::new(vec![0.0, 40.0, -40.0], &[3, 1]).unwrap();
        let b = bound(&z, &spec).unwrap();
        assert_eq!(b.data(), &[1.5, 3.0, 0.0]);
    }

    #[test]
    fn rounding_and_fixed_points() {
        let spec = FsqSpec::new(vec![4, 4]).unwrap();
        let z = Tensor::<f64>::new(vec![1.49, 1.51, 0.5, 2.5], &[2, 2]).unwrap();
        let (q, t) = quantize(&z, &spec).unwrap();
        assert_eq!(q.data(), &[1.0, 2.0, 0.0, 2.0]);
        assert_eq!(t.ids, vec![TokenId(1 + 2 * 4), TokenId(2 * 4)]);

        let spec6 = FsqSpec::default();
        let lattice = vec![2.0, 0.0, 3.0, 1.0, 1.0, 2.0];
        let (q, _) = quantize(&Tensor::<f64>::new(lattice.clone(), &[1, 6]).unwrap(), &spec6).unwrap();
        assert_eq!(q.data(), lattice.as_slice());
    }

    #[test]
    fn straight_through() {
        let spec = FsqSpec::uniform(4, 3).unwrap();
        let z = Tensor::<f64>::param(vec![0.2, 1.7, 2.9, 3.0, 0.0, 1.5], &[2, 3]).unwrap();
        let (q, _) = quantize(&z, &spec).unwrap();
        q.sum().backward().unwrap();
        assert_eq!(z.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn bound_gradient() {
        let spec = FsqSpec::new(vec![3, 5, 8]).unwrap();
        let r = crate::tensor::finite_difference_check(&[vec![0.3, -1.2, 2.0, -0.1, 0.8, 0.05]], 1e-5, |p| {
            let z = Tensor::param(p[0].clone(), &[2, 3])?;
            let b = bound(&z, &spec)?;
            Ok((b.mul(&b)?.sum(), vec![z]))
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn ids_and_codes() {
        let spec = FsqSpec::default();
        assert_eq!(spec.code_to_id(&[0; 6]).unwrap(), TokenId(0));
        assert!(spec.code_to_id(&[4, 0, 0, 0, 0, 0]).is_err());
        assert!(spec.code_to_id(&[0; 5]).is_err());
        assert!(spec.id_to_code(TokenId(4096)).is_err());
    }

    #[test]
    fn usage() {
        let one = vec![TokenId(7); 10];
        assert_eq!(codebook_usage(&one, 4096).unwrap(), 1.0 / 4096.0);
        let all: Vec<TokenId> = (0..256).map(TokenId).collect();
        assert_eq!(codebook_usage(&all, 256).unwrap(), 1.0);
        assert!(codebook_usage(&[], 16).is_err());
    }

    #[test]
    fn dequantize_inverts_quantize() {
        let spec = FsqSpec::new(vec![3, 4, 5]).unwrap();
        let z = Tensor::<f64>::new(vec![0.4, 2.6, 3.9, 1.8, 0.1, 0.0], &[2, 3]).unwrap();
        let (q, t) = quantize(&z, &spec).unwrap();
        assert_eq!(dequantize::<f64>(&t).unwrap().data(), q.data());
    }
}
