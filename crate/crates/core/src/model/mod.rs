//! The tokenizer network: coordinates -> encoder stack -> FSQ tokens ->
//! decoder stack -> coordinates.

mod checkpoint;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use params::{ParamEntry, ParamStore};

use crate::error::{Error, Result};
use crate::geometry::{self, center, kabsch, LossParts, LossWeights, Point, PointCloud, ResidueGroups};
use crate::quantizer::{self, FsqSpec, TokenSequence};
use crate::ssm::{self, ScanMode, SsmConfig, SsmParams};
use crate::tensor::{Padding, Real, Tensor};

const LN_EPS: f64 = 1e-5;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_model: usize,
    /// Levels per latent dimension.
    pub levels: FsqSpec,
    /// Atoms per token; 1 keeps one token per atom.
    pub compression_k: usize,
    pub d_state: usize,
    pub conv_width: usize,
    pub expand: usize,
    /// 0 selects `ceil(d_model / 16)`.
    pub dt_rank: usize,
    pub scan: ScanMode,
    /// Run every block forwards and backwards with shared weights.
    pub bidirectional: bool,
    /// Global length unit: inputs are divided by it, outputs multiplied.
    pub coord_scale: f64,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            n_encoder_layers: 4,
            n_decoder_layers: 6,
            d_model: 128,
            levels: FsqSpec::default(),
            compression_k: 1,
            d_state: 16,
            conv_width: 4,
            expand: 2,
            dt_rank: 0,
            scan: ScanMode::Parallel,
            bidirectional: true,
            coord_scale: 10.0,
            seed: 0,
        }
    }
}

impl TokenizerConfig {
    /// Small desk-scale architecture: 2 encoder and 4 decoder layers at width 64.
    pub fn desk() -> Self {
        TokenizerConfig {
            n_encoder_layers: 2,
            n_decoder_layers: 4,
            d_model: 64,
            ..Self::default()
        }
    }

    pub fn ssm(&self) -> SsmConfig {
        SsmConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.expand,
            conv_width: self.conv_width,
            dt_rank: self.dt_rank,
            scan: self.scan,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ssm().validate()?;
        if self.compression_k == 0 {
            return Err(Error::invalid("compression_k must be at least 1"));
        }
        if !(self.coord_scale.is_finite() && self.coord_scale > 0.0) {
            return Err(Error::invalid("coord_scale must be positive"));
        }
        Ok(())
    }

    /// Number of tokens for `n_atoms` atoms.
    pub fn token_count(&self, n_atoms: usize) -> usize {
        n_atoms.div_ceil(self.compression_k)
    }
}

fn uniform_values(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f32> {
    let dist = Uniform::new_inclusive(-bound, bound);
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

/// Parameter layout and initial values, in storage order.
pub fn init_params(cfg: &TokenizerConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (dm, d, k) = (cfg.d_model, cfg.levels.dims(), cfg.compression_k);
    let mut s = ParamStore::new();
    let linear = |s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize| -> Result<()> {
        s.push(format!("{name}.weight"), vec![fan_in, fan_out], uniform_values(rng, fan_in * fan_out, 1.0 / (fan_in as f64).sqrt()))?;
        s.push(format!("{name}.bias"), vec![fan_out], vec![0.0; fan_out])
    };
    let norm = |s: &mut ParamStore, name: &str| -> Result<()> {
        s.push(format!("{name}.gamma"), vec![dm], vec![1.0; dm])?;
        s.push(format!("{name}.beta"), vec![dm], vec![0.0; dm])
    };
    let ssm_cfg = cfg.ssm();
    let blocks = |s: &mut ParamStore, rng: &mut ChaCha8Rng, stack: &str, n: usize| -> Result<()> {
        for i in 0..n {
            norm(s, &format!("{stack}.{i}.norm"))?;
            for (name, shape, values) in ssm::init_values(&ssm_cfg, rng) {
                s.push(format!("{stack}.{i}.ssm.{name}"), shape, values.into_iter().map(|v| v as f32).collect())?;
            }
        }
        Ok(())
    };

    linear(&mut s, &mut rng, "input_proj", 3, dm)?;
    blocks(&mut s, &mut rng, "encoder", cfg.n_encoder_layers)?;
    norm(&mut s, "encoder.norm")?;
    if k > 1 {
        s.push("pool.kernel", vec![k, dm], vec![1.0 / k as f32; k * dm])?;
    }
    linear(&mut s, &mut rng, "quant_head", dm, d)?;
    linear(&mut s, &mut rng, "dequant_head", d, dm)?;
    if k > 1 {
        let w = 2 * k + 1;
        let mut kernel = vec![0.0; w * dm];
        kernel[k * dm..(k + 1) * dm].fill(1.0);
        s.push("unpool.kernel", vec![w, dm], kernel)?;
        s.push("unpool.bias", vec![dm], vec![0.0; dm])?;
    }
    blocks(&mut s, &mut rng, "decoder", cfg.n_decoder_layers)?;
    norm(&mut s, "decoder.norm")?;
    linear(&mut s, &mut rng, "output_proj", dm, 3)?;
    Ok(s)
}

/// Whether the bottleneck rounds its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuantMode {
    #[default]
    Quantize,
    /// Feed the bounded latents to the decoder unrounded. Makes the whole
    /// network smooth, which finite-difference checks need.
    Bypass,
}

struct Layer<F: Real> {
    gamma: Tensor<F>,
    beta: Tensor<F>,
    ssm: SsmParams<F>,
}

/// Parameters bound as tensors for one forward pass.
pub struct Network<F: Real> {
    config: TokenizerConfig,
    tensors: Vec<Tensor<F>>,
    input: (Tensor<F>, Tensor<F>),
    encoder: Vec<Layer<F>>,
    encoder_norm: (Tensor<F>, Tensor<F>),
    pool: Option<Tensor<F>>,
    quant_head: (Tensor<F>, Tensor<F>),
    dequant_head: (Tensor<F>, Tensor<F>),
    unpool: Option<(Tensor<F>, Tensor<F>)>,
    decoder: Vec<Layer<F>>,
    decoder_norm: (Tensor<F>, Tensor<F>),
    output: (Tensor<F>, Tensor<F>),
}

/// Result of a training-style forward pass.
pub struct Forward<F: Real> {
    pub loss: LossParts<F>,
    pub tokens: TokenSequence,
    pub recon: Tensor<F>,
}

impl<F: Real> Network<F> {
    /// Binds every entry of `store`, as trainable leaves or as constants.
    pub fn bind(config: &TokenizerConfig, store: &ParamStore, trainable: bool) -> Result<Self> {
        let tensors = store
            .entries()
            .iter()
            .map(|e| {
                let v = e.values.iter().map(|&x| F::of(x as f64)).collect();
                if trainable {
                    Tensor::param(v, &e.shape)
                } else {
                    Tensor::new(v, &e.shape)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(config, store, tensors)
    }

    /// Uses caller-built tensors, one per entry of `store` in store order.
    pub fn from_tensors(config: &TokenizerConfig, store: &ParamStore, tensors: Vec<Tensor<F>>) -> Result<Self> {
        config.validate()?;
        if tensors.len() != store.len() {
            return Err(Error::invalid("tensor count differs from parameter store"));
        }
        let get = |name: &str| -> Result<Tensor<F>> {
            let i = store
                .position(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if tensors[i].shape() != store.entries()[i].shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "bind",
                    lhs: tensors[i].shape().to_vec(),
                    rhs: store.entries()[i].shape.clone(),
                });
            }
            Ok(tensors[i].clone())
        };
        let pair = |a: &str, b: &str| -> Result<(Tensor<F>, Tensor<F>)> { Ok((get(a)?, get(b)?)) };
        let ssm_cfg = config.ssm();
        let layers = |stack: &str, n: usize| -> Result<Vec<Layer<F>>> {
            (0..n)
                .map(|i| {
                    let prefix = format!("{stack}.{i}");
                    Ok(Layer {
                        gamma: get(&format!("{prefix}.norm.gamma"))?,
                        beta: get(&format!("{prefix}.norm.beta"))?,
                        ssm: SsmParams::bind(ssm_cfg, |name, _| get(&format!("{prefix}.ssm.{name}")))?,
                    })
                })
                .collect()
        };
        let k = config.compression_k;
        Ok(Network {
            input: pair("input_proj.weight", "input_proj.bias")?,
            encoder: layers("encoder", config.n_encoder_layers)?,
            encoder_norm: pair("encoder.norm.gamma", "encoder.norm.beta")?,
            pool: if k > 1 { Some(get("pool.kernel")?) } else { None },
            quant_head: pair("quant_head.weight", "quant_head.bias")?,
            dequant_head: pair("dequant_head.weight", "dequant_head.bias")?,
            unpool: if k > 1 { Some(pair("unpool.kernel", "unpool.bias")?) } else { None },
            decoder: layers("decoder", config.n_decoder_layers)?,
            decoder_norm: pair("decoder.norm.gamma", "decoder.norm.beta")?,
            output: pair("output_proj.weight", "output_proj.bias")?,
            config: config.clone(),
            tensors,
        })
    }

    /// Leaf tensors in store order.
    pub fn leaves(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    fn run_stack(&self, mut h: Tensor<F>, layers: &[Layer<F>]) -> Result<Tensor<F>> {
        for layer in layers {
            let normed = h.layernorm(&layer.gamma, &layer.beta, LN_EPS)?;
            let mixed = if self.config.bidirectional {
                ssm::bidirectional_block(&normed, &layer.ssm)?
            } else {
                ssm::mamba_block(&normed, &layer.ssm)?
            };
            h = h.add(&mixed)?;
        }
        Ok(h)
    }

    /// Bounded latents `[ceil(N / k) x D]` for coordinates `x[N x 3]`, used as given.
    pub fn encode_tensor(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, c) = x.dims2("encode")?;
        if n == 0 {
            return Err(Error::Empty("encoder input".into()));
        }
        if c != 3 {
            return Err(Error::invalid(format!("encoder expects N x 3 coordinates, got {:?}", x.shape())));
        }
        let mut h = x
            .scale(1.0 / self.config.coord_scale)
            .matmul(&self.input.0)?
            .add_bias(&self.input.1)?;
        h = self.run_stack(h, &self.encoder)?;
        h = h.layernorm(&self.encoder_norm.0, &self.encoder_norm.1, LN_EPS)?;
        if let Some(kernel) = &self.pool {
            h = h.pool_strided(kernel)?;
        }
        let z = h.matmul(&self.quant_head.0)?.add_bias(&self.quant_head.1)?;
        quantizer::bound(&z, &self.config.levels)
    }

    /// Coordinates `[n_atoms x 3]` from lattice values `[ceil(n_atoms / k) x D]`.
    pub fn decode_tensor(&self, zq: &Tensor<F>, n_atoms: usize) -> Result<Tensor<F>> {
        let (n_tokens, _) = zq.dims2("decode")?;
        if n_tokens != self.config.token_count(n_atoms) || n_atoms == 0 {
            return Err(Error::invalid(format!(
                "{n_tokens} tokens cannot decode to {n_atoms} atoms at compression {}",
                self.config.compression_k
            )));
        }
        let mut h = zq.matmul(&self.dequant_head.0)?.add_bias(&self.dequant_head.1)?;
        if let Some((kernel, bias)) = &self.unpool {
            h = h.upsample_repeat(self.config.compression_k, n_atoms)?;
            h = same_conv(&h, kernel)?.add_bias(bias)?;
        }
        h = self.run_stack(h, &self.decoder)?;
        h = h.layernorm(&self.decoder_norm.0, &self.decoder_norm.1, LN_EPS)?;
        Ok(h.matmul(&self.output.0)?.add_bias(&self.output.1)?.scale(self.config.coord_scale))
    }

    /// Loss of reconstructing `coords` (already centered) through the bottleneck.
    pub fn forward(&self, coords: &[Point], groups: &ResidueGroups, weights: LossWeights, mode: QuantMode) -> Result<Forward<F>> {
        let x = points_tensor(coords)?;
        let z = self.encode_tensor(&x)?;
        let (zq, tokens) = quantizer::quantize(&z, &self.config.levels)?;
        let bottleneck = match mode {
            QuantMode::Quantize => zq,
            QuantMode::Bypass => z,
        };
        let recon = self.decode_tensor(&bottleneck, coords.len())?;
        let loss = geometry::structure_loss(coords, &recon, groups, weights)?;
        Ok(Forward { loss, tokens, recon })
    }

    /// Token ids for `coords` exactly as given (no recentering).
    pub fn tokenize_points(&self, coords: &[Point]) -> Result<TokenSequence> {
        let z = self.encode_tensor(&points_tensor(coords)?)?;
        Ok(quantizer::quantize(&z, &self.config.levels)?.1)
    }

    /// Centers the cloud, then tokenizes.
    pub fn tokenize(&self, pc: &PointCloud) -> Result<TokenSequence> {
        self.tokenize_points(&center(pc).coords)
    }

    pub fn decode(&self, tokens: &TokenSequence, n_atoms: usize) -> Result<Vec<Point>> {
        if tokens.spec != self.config.levels {
            return Err(Error::SpecMismatch {
                expected: self.config.levels.levels().to_vec(),
                found: tokens.spec.levels().to_vec(),
            });
        }
        let zq = quantizer::dequantize::<F>(tokens)?;
        let out = self.decode_tensor(&zq, n_atoms)?;
        Ok(tensor_points(&out))
    }

    /// Tokenize then decode; RMSE after superposing the reconstruction onto
    /// the centered input.
    pub fn reconstruct(&self, pc: &PointCloud) -> Result<Reconstruction> {
        let centered = center(pc);
        let tokens = self.tokenize_points(&centered.coords)?;
        let coords = self.decode(&tokens, pc.len())?;
        let alignment = kabsch(&centered.coords, &coords)?;
        let aligned = alignment.apply_all(&coords);
        Ok(Reconstruction {
            tokens,
            rmse: alignment.rmse,
            target: centered.coords,
            aligned,
        })
    }
}

/// Output of [`Network::reconstruct`].
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub tokens: TokenSequence,
    pub rmse: f64,
    /// Centered input coordinates.
    pub target: Vec<Point>,
    /// Reconstruction superposed onto `target`.
    pub aligned: Vec<Point>,
}

/// Same-padded depthwise conv that also accepts kernels wider than the
/// sequence, by appending zero rows and trimming the output.
fn same_conv<F: Real>(h: &Tensor<F>, kernel: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, _) = h.dims2("same_conv")?;
    let (w, _) = kernel.dims2("same_conv")?;
    if w <= n {
        return h.conv1d_depthwise(kernel, Padding::Same);
    }
    let mut pad = vec![F::zero(); w * n];
    for i in 0..n {
        pad[i * n + i] = F::one();
    }
    let padded = Tensor::new(pad, &[w, n])?.matmul(h)?;
    padded.conv1d_depthwise(kernel, Padding::Same)?.narrow_rows(0, n)
}

pub fn points_tensor<F: Real>(coords: &[Point]) -> Result<Tensor<F>> {
    Tensor::new(coords.iter().flatten().map(|&v| F::of(v)).collect(), &[coords.len(), 3])
}

pub fn tensor_points<F: Real>(t: &Tensor<F>) -> Vec<Point> {
    t.data().chunks_exact(3).map(|c| [c[0].f64(), c[1].f64(), c[2].f64()]).collect()
}

/// Configuration plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerModel {
    pub config: TokenizerConfig,
    pub params: ParamStore,
}

impl TokenizerModel {
    pub fn new(config: TokenizerConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(TokenizerModel { config, params })
    }

    /// Adopts existing parameters after checking their layout.
    pub fn from_params(config: TokenizerConfig, params: ParamStore) -> Result<Self> {
        let expected = init_params(&config)?;
        if !expected.same_layout(&params) {
            return Err(Error::Format("parameter layout does not match the model config".into()));
        }
        Ok(TokenizerModel { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Constant 32-bit network for inference.
    pub fn inference(&self) -> Result<Network<f32>> {
        Network::bind(&self.config, &self.params, false)
    }

    pub fn network<F: Real>(&self, trainable: bool) -> Result<Network<F>> {
        Network::bind(&self.config, &self.params, trainable)
    }

    pub fn tokenize(&self, pc: &PointCloud) -> Result<TokenSequence> {
        self.inference()?.tokenize(pc)
    }

    /// Reconstructed coordinates (centered frame).
    pub fn decode(&self, tokens: &TokenSequence, n_atoms: usize) -> Result<PointCloud> {
        PointCloud::from_coords(self.inference()?.decode(tokens, n_atoms)?)
    }

    /// 32-bit forward pass without gradient tracking.
    pub fn evaluate_loss(&self, pc: &PointCloud, weights: LossWeights) -> Result<(f64, f64, f64)> {
        let net = self.inference()?;
        let centered = center(pc);
        let f = net.forward(&centered.coords, &pc.residue_groups(), weights, QuantMode::Quantize)?;
        Ok((f.loss.total.item() as f64, f.loss.rmse.item() as f64, f.loss.interatomic.item() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use rand::Rng;

    fn tiny(k: usize) -> TokenizerConfig {
        TokenizerConfig {
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_model: 8,
            levels: FsqSpec::uniform(4, 3).unwrap(),
            compression_k: k,
            d_state: 2,
            conv_width: 3,
            expand: 1,
            dt_rank: 1,
            seed: 3,
            ..TokenizerConfig::default()
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_coords((0..n).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect()).unwrap()
    }

    #[test]
    fn default_size_near_target() {
        let m = TokenizerModel::new(TokenizerConfig::default()).unwrap();
        let n = m.param_count() as f64;
        assert!((n - 1.2e6).abs() / 1.2e6 <= 0.15, "{n}");
    }

    #[test]
    fn shapes_per_compression() {
        for k in [1, 2, 4] {
            let m = TokenizerModel::new(tiny(k)).unwrap();
            let net = m.inference().unwrap();
            for n in [1, 2, 5, 50] {
                let pc = cloud(n, n as u64);
                let t = net.tokenize(&pc).unwrap();
                assert_eq!(t.len(), n.div_ceil(k));
                let out = net.decode(&t, n).unwrap();
                assert_eq!(out.len(), n);
                assert!(out.iter().flatten().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn deterministic_tokens() {
        let m = TokenizerModel::new(tiny(1)).unwrap();
        let pc = cloud(30, 1);
        assert_eq!(m.tokenize(&pc).unwrap(), m.tokenize(&pc.clone()).unwrap());
    }

    #[test]
    fn spec_mismatch_refused() {
        let m = TokenizerModel::new(tiny(1)).unwrap();
        let t = TokenSequence::new(vec![quantizer::TokenId(0)], FsqSpec::uniform(4, 6).unwrap()).unwrap();
        assert!(matches!(m.decode(&t, 1), Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn same_conv_short_input_matches_direct_sum() {
        let h = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let kernel = Tensor::<f64>::new((0..10).map(|v| v as f64).collect(), &[5, 2]).unwrap();
        let out = same_conv(&h, &kernel).unwrap();
        // Window centered on t: taps j = 0..5 read x[t + j - 2].
        let mut want = vec![0.0; 4];
        for t in 0..2i64 {
            for j in 0..5i64 {
                let s = t + j - 2;
                if (0..2).contains(&s) {
                    for c in 0..2 {
                        want[(t * 2 + c) as usize] += kernel.data()[(j * 2 + c as i64) as usize] * h.data()[(s * 2 + c as i64) as usize];
                    }
                }
            }
        }
        assert_eq!(out.data(), want.as_slice());
    }

    #[test]
    fn gradient_reaches_input_projection() {
        let m = TokenizerModel::new(tiny(1)).unwrap();
        let net = m.network::<f32>(true).unwrap();
        let pc = center(&cloud(12, 2));
        let f = net.forward(&pc.coords, &pc.residue_groups(), LossWeights::default(), QuantMode::Quantize).unwrap();
        f.loss.total.backward().unwrap();
        let g = net.leaves()[m.params.position("input_proj.weight").unwrap()].grad().unwrap();
        assert!(g.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn full_forward_gradient_check() {
        let cfg = tiny(2);
        let m = TokenizerModel::new(cfg.clone()).unwrap();
        let pc = center(&cloud(9, 4));
        let groups = ResidueGroups::new(vec![0..4, 4..9]);
        let blocks: Vec<Vec<f64>> = m.params.entries().iter().map(|e| e.values.iter().map(|&v| v as f64).collect()).collect();
        let r = finite_difference_check(&blocks, 1e-5, |p| {
            let tensors = m.params.entries().iter().zip(p).map(|(e, v)| Tensor::param(v.clone(), &e.shape)).collect::<Result<Vec<_>>>()?;
            let net = Network::<f64>::from_tensors(&cfg, &m.params, tensors)?;
            let f = net.forward(&pc.coords, &groups, LossWeights::default(), QuantMode::Bypass)?;
            Ok((f.loss.total, net.leaves().to_vec()))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
