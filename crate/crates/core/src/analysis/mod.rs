//! Diagnostics on trained tokenizers: how far deleting one atom spreads in
//! token space, orientation sweeps, error against distance from the centre,
//! and training studies over codebook size, compression and architecture.

mod report;
mod studies;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use report::ColumnarReport;
pub use studies::{
    ablation_harness, ablation_ladder, ablation_report, codebook_scaling_study, compression_report, compression_study, run_study_point,
    AblationRow, AblationRung,
    CompressionRow, ScalingReport, StudyBudget, StudyOutcome,
};

use crate::data::Structure;
use crate::error::{Error, Result};
use crate::geometry::{center, kabsch, rotation_about, tm_score, Axis, TmMode};
use crate::model::TokenizerModel;
use crate::quantizer::TokenId;
use report::num;

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("summary of no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Summary {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }

    /// Half-width of the normal-approximation 95% interval of the mean.
    pub fn ci95(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let sample_std = self.std * (self.n as f64 / (self.n - 1) as f64).sqrt();
        1.96 * sample_std / (self.n as f64).sqrt()
    }
}

/// Token changes caused by deleting one atom.
#[derive(Clone, Debug, PartialEq)]
pub struct DeletionProbe {
    pub structure: usize,
    pub position: usize,
    /// Differences after skipping the deleted index in the original.
    pub aligned_changed: usize,
    /// Differences comparing the two sequences position by position.
    pub raw_changed: usize,
    /// Half of the span from the first to the last changed position.
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingReport {
    pub probes: Vec<DeletionProbe>,
    pub half_width: Summary,
    pub aligned_changed: Summary,
    pub raw_changed: Summary,
}

impl MixingReport {
    pub fn to_report(&self) -> Result<ColumnarReport> {
        let mut r = ColumnarReport::new(["structure", "position", "aligned_changed", "raw_changed", "half_width"])
            .meta("half_width_mean", num(self.half_width.mean))
            .meta("half_width_std", num(self.half_width.std));
        for p in &self.probes {
            r.push(vec![
                p.structure.to_string(),
                p.position.to_string(),
                p.aligned_changed.to_string(),
                p.raw_changed.to_string(),
                num(p.half_width),
            ])?;
        }
        Ok(r)
    }
}

/// Compares tokens of a cloud before and after removing atom `i`. The cloud
/// is centered once, and the shortened cloud keeps that frame.
pub fn deletion_probe(model: &TokenizerModel, s: &Structure, i: usize) -> Result<(usize, usize, f64)> {
    let net = model.inference()?;
    let base = center(&s.cloud);
    if i >= base.len() {
        return Err(Error::invalid(format!("atom {i} outside a cloud of {}", base.len())));
    }
    let before = net.tokenize_points(&base.coords)?.ids;
    let after = net.tokenize_points(&base.without_atom(i)?.coords)?.ids;
    Ok(compare_after_deletion(&before, &after, i))
}

fn compare_after_deletion(before: &[TokenId], after: &[TokenId], i: usize) -> (usize, usize, f64) {
    let kept = before.iter().enumerate().filter(|(j, _)| *j != i);
    let changed: Vec<usize> = kept.zip(after).filter(|((_, a), b)| a != b).map(|((j, _), _)| j).collect();
    let raw = before.iter().zip(after).filter(|(a, b)| a != b).count();
    let half = match (changed.first(), changed.last()) {
        (Some(lo), Some(hi)) => (hi - lo + 1) as f64 / 2.0,
        _ => 0.0,
    };
    (changed.len(), raw, half)
}

/// Deletes `n_deletions` atoms sampled at least `margin` positions away from
/// either end, one at a time, and summarizes the resulting token changes.
/// Requires one token per atom.
pub fn mixing_radius(model: &TokenizerModel, structures: &[Structure], n_deletions: usize, margin: usize, seed: u64) -> Result<MixingReport> {
    if model.config.compression_k != 1 {
        return Err(Error::invalid("mixing radius needs one token per atom (compression_k = 1)"));
    }
    let eligible: Vec<usize> = (0..structures.len())
        .filter(|&i| structures[i].cloud.len() >= 3 && structures[i].cloud.len() > 2 * margin)
        .collect();
    if eligible.is_empty() || n_deletions == 0 {
        return Err(Error::Empty("no structure is long enough for deletion probes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, usize)> = (0..n_deletions)
        .map(|_| {
            let s = eligible[rng.gen_range(0..eligible.len())];
            let n = structures[s].cloud.len();
            let lo = margin.min(n / 2);
            (s, rng.gen_range(lo..n - lo))
        })
        .collect();
    let probes: Vec<DeletionProbe> = picks
        .par_iter()
        .map(|&(s, position)| {
            let (aligned_changed, raw_changed, half_width) = deletion_probe(model, &structures[s], position)?;
            Ok(DeletionProbe {
                structure: s,
                position,
                aligned_changed,
                raw_changed,
                half_width,
            })
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&DeletionProbe) -> f64| probes.iter().map(f).collect::<Vec<_>>();
    Ok(MixingReport {
        half_width: Summary::of(&col(|p| p.half_width))?,
        aligned_changed: Summary::of(&col(|p| p.aligned_changed as f64))?,
        raw_changed: Summary::of(&col(|p| p.raw_changed as f64))?,
        probes,
    })
}

/// Least-squares polynomial coefficients (constant term first) and r².
#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    pub coefficients: Vec<f64>,
    pub r2: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

pub fn fit_polynomial(x: &[f64], y: &[f64], degree: usize) -> Result<PolyFit> {
    if x.len() != y.len() || x.len() <= degree {
        return Err(Error::invalid(format!("a degree-{degree} fit needs more than {degree} paired points")));
    }
    let a = DMatrix::from_fn(x.len(), degree + 1, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
    let fitted = &a * &coef;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(PolyFit {
        coefficients: coef.iter().copied().collect(),
        r2,
    })
}

/// `log(y) = alpha * log(x) + beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLaw {
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
}

pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLaw> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("power-law fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let f = fit_polynomial(&lx, &ly, 1)?;
    Ok(PowerLaw {
        alpha: f.coefficients[1],
        beta: f.coefficients[0],
        r2: f.r2,
    })
}

/// One orientation of a rotation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub angle: f64,
    pub rmse: f64,
    pub tokens: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub axis: Axis,
    pub records: Vec<SweepRecord>,
}

impl SweepReport {
    /// Angle, RMSE, and the count of tokens that differ from angle zero.
    pub fn to_report(&self) -> Result<ColumnarReport> {
        let mut r = ColumnarReport::new(["angle", "rmse", "changed_vs_first", "tokens"]).meta("axis", format!("{:?}", self.axis).to_lowercase());
        let first = self.records.first().map(|r| r.tokens.clone()).unwrap_or_default();
        for rec in &self.records {
            let changed = rec.tokens.iter().zip(&first).filter(|(a, b)| a != b).count();
            let ids: Vec<String> = rec.tokens.iter().map(|t| t.0.to_string()).collect();
            r.push(vec![num(rec.angle), num(rec.rmse), changed.to_string(), ids.join(",")])?;
        }
        Ok(r)
    }

    pub fn rmse_summary(&self) -> Result<Summary> {
        Summary::of(&self.records.iter().map(|r| r.rmse).collect::<Vec<_>>())
    }
}

/// Tokenizes and reconstructs the structure rotated to `n_angles` evenly
/// spaced angles about `axis`, starting at zero.
pub fn rotation_sweep(model: &TokenizerModel, s: &Structure, axis: Axis, n_angles: usize) -> Result<SweepReport> {
    sweep_angles(model, s, axis, &(0..n_angles).map(|i| std::f64::consts::TAU * i as f64 / n_angles as f64).collect::<Vec<_>>())
}

pub fn sweep_angles(model: &TokenizerModel, s: &Structure, axis: Axis, angles: &[f64]) -> Result<SweepReport> {
    if angles.is_empty() {
        return Err(Error::invalid("a sweep needs at least one angle"));
    }
    let base = center(&s.cloud);
    let records = angles
        .par_iter()
        .map(|&angle| {
            let pc = base.transformed(&rotation_about(axis, angle), [0.0; 3]);
            let r = model.inference()?.reconstruct(&pc)?;
            Ok(SweepRecord {
                angle,
                rmse: r.rmse,
                tokens: r.tokens.ids,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport { axis, records })
}

/// Per-atom reconstruction error against distance from the centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceProfile {
    pub distance: Vec<f64>,
    pub error: Vec<f64>,
}

impl DistanceProfile {
    pub fn to_report(&self) -> Result<ColumnarReport> {
        let mut r = ColumnarReport::new(["distance", "error"]);
        for (d, e) in self.distance.iter().zip(&self.error) {
            r.push(vec![num(*d), num(*e)])?;
        }
        Ok(r)
    }

    /// Mean error in `n_bins` equal-width distance bins: (bin centre, mean, count).
    pub fn binned(&self, n_bins: usize) -> Vec<(f64, f64, usize)> {
        let max = self.distance.iter().cloned().fold(0.0, f64::max);
        if n_bins == 0 || max <= 0.0 {
            return vec![];
        }
        let w = max / n_bins as f64;
        let mut sums = vec![(0.0, 0usize); n_bins];
        for (d, e) in self.distance.iter().zip(&self.error) {
            let b = ((d / w) as usize).min(n_bins - 1);
            sums[b].0 += e;
            sums[b].1 += 1;
        }
        sums.iter()
            .enumerate()
            .filter(|(_, s)| s.1 > 0)
            .map(|(i, s)| ((i as f64 + 0.5) * w, s.0 / s.1 as f64, s.1))
            .collect()
    }
}

/// Samples `n_points` atoms uniformly from the reconstructions of
/// `structures`; each keeps its structure-level superposition.
pub fn center_distance_profile(model: &TokenizerModel, structures: &[Structure], n_points: usize, seed: u64) -> Result<DistanceProfile> {
    if structures.is_empty() {
        return Err(Error::Empty("profile dataset".into()));
    }
    let per_structure: Vec<(Vec<f64>, Vec<f64>)> = structures
        .par_iter()
        .map(|s| {
            let r = model.inference()?.reconstruct(&s.cloud)?;
            let d = r.target.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).collect();
            let e = r
                .target
                .iter()
                .zip(&r.aligned)
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .collect();
            Ok((d, e))
        })
        .collect::<Result<_>>()?;
    let distance: Vec<f64> = per_structure.iter().flat_map(|p| p.0.iter().copied()).collect();
    let error: Vec<f64> = per_structure.iter().flat_map(|p| p.1.iter().copied()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, distance.len(), n_points.min(distance.len())).into_vec();
    Ok(DistanceProfile {
        distance: picks.iter().map(|&i| distance[i]).collect(),
        error: picks.iter().map(|&i| error[i]).collect(),
    })
}

/// Kabsch RMSE between two structures' coordinates; both are centered.
pub fn structure_rmse(reference: &Structure, model: &Structure) -> Result<f64> {
    Ok(kabsch(&center(&reference.cloud).coords, &center(&model.cloud).coords)?.rmse)
}

/// Reconstruction quality of one structure.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureMetrics {
    pub name: String,
    pub n_atoms: usize,
    pub rmse: f64,
    /// Backbone and side-chain subsets, on the all-atom superposition.
    pub rmse_backbone: Option<f64>,
    pub rmse_sidechain: Option<f64>,
    pub tm_score: Option<f64>,
    pub tokens: Vec<TokenId>,
}

fn subset_rmse(target: &[crate::geometry::Point], aligned: &[crate::geometry::Point], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut sq, mut n) = (0.0, 0usize);
    for (i, (a, b)) in target.iter().zip(aligned).enumerate() {
        if keep(i) {
            sq += (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
            n += 1;
        }
    }
    (n > 0).then(|| (sq / n as f64).sqrt())
}

/// Tokenize, decode and score each structure. TM-score uses `CA` anchors,
/// or `C3'` for RNA, and is left out with a warning when none exist.
pub fn evaluate_structures(model: &TokenizerModel, structures: &[Structure]) -> Result<Vec<StructureMetrics>> {
    structures
        .par_iter()
        .map(|s| {
            let r = model.inference()?.reconstruct(&s.cloud)?;
            let bb = &s.cloud.backbone;
            let mode = if s.kind == crate::data::StructureKind::Rna { TmMode::Rna } else { TmMode::Protein };
            let reference = s.cloud.with_coords(r.target.clone())?;
            let recon = s.cloud.with_coords(r.aligned.clone())?;
            let tm = match tm_score(&reference, &recon, mode) {
                Ok(t) => Some(t),
                Err(e) => {
                    log::warn!("{}: TM-score omitted ({e})", s.name);
                    None
                }
            };
            Ok(StructureMetrics {
                name: s.name.clone(),
                n_atoms: s.cloud.len(),
                rmse: r.rmse,
                rmse_backbone: subset_rmse(&r.target, &r.aligned, |i| bb[i]),
                rmse_sidechain: subset_rmse(&r.target, &r.aligned, |i| !bb[i]),
                tm_score: tm,
                tokens: r.tokens.ids,
            })
        })
        .collect()
}

/// Per-structure rows plus `mean`, `std` and `ci95` rows.
pub fn evaluation_report(metrics: &[StructureMetrics], codebook_size: u32) -> Result<ColumnarReport> {
    let all: Vec<TokenId> = metrics.iter().flat_map(|m| m.tokens.iter().copied()).collect();
    let usage = crate::quantizer::codebook_usage(&all, codebook_size)?;
    let mut r = ColumnarReport::new(["name", "n_atoms", "rmse", "rmse_bb", "rmse_sc", "tm_score"]).meta("codebook_usage", num(usage));
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for m in metrics {
        r.push(vec![m.name.clone(), m.n_atoms.to_string(), num(m.rmse), opt(m.rmse_backbone), opt(m.rmse_sidechain), opt(m.tm_score)])?;
    }
    let columns: [fn(&StructureMetrics) -> Option<f64>; 4] =
        [|m| Some(m.rmse), |m| m.rmse_backbone, |m| m.rmse_sidechain, |m| m.tm_score];
    let summaries: Vec<Option<Summary>> = columns
        .iter()
        .map(|f| {
            let v: Vec<f64> = metrics.iter().filter_map(f).collect();
            Summary::of(&v).ok()
        })
        .collect();
    for (label, pick) in [("mean", 0usize), ("std", 1), ("ci95", 2)] {
        let mut row = vec![label.to_string(), metrics.len().to_string()];
        for s in &summaries {
            row.push(opt(s.map(|s| [s.mean, s.std, s.ci95()][pick])));
        }
        r.push(row)?;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, synth_polymer, PolymerStyle, StructureKind};
    use crate::model::TokenizerConfig;
    use crate::quantizer::FsqSpec;

    fn tiny(layers: usize) -> TokenizerModel {
        TokenizerModel::new(TokenizerConfig {
            n_encoder_layers: layers,
            n_decoder_layers: 1,
            d_model: 16,
            levels: FsqSpec::uniform(5, 4).unwrap(),
            d_state: 4,
            ..TokenizerConfig::default()
        })
        .unwrap()
    }

    fn zero_mixing(mut m: TokenizerModel) -> TokenizerModel {
        for e in m.params.entries_mut() {
            if e.name.starts_with("encoder.") && e.name.contains(".ssm.") {
                e.values.fill(0.0);
            }
        }
        m
    }

    fn polymer(seed: u64, n: usize) -> Structure {
        Structure {
            name: "p".into(),
            kind: StructureKind::Synthetic,
            cloud: synth_polymer(&mut ChaCha8Rng::seed_from_u64(seed), n, 2, PolymerStyle::Coil).unwrap(),
        }
    }

    #[test]
    fn zero_ssm_weights_do_not_mix() {
        let m = zero_mixing(tiny(2));
        let data = vec![polymer(0, 30), polymer(1, 40)];
        let r = mixing_radius(&m, &data, 10, 5, 0).unwrap();
        assert_eq!(r.half_width.mean, 0.0);
        assert_eq!(r.aligned_changed.mean, 0.0);
    }

    #[test]
    fn last_atom_window_matches_direct_comparison() {
        let m = tiny(2);
        let s = polymer(2, 25);
        let n = s.cloud.len();
        let (changed, raw, half) = deletion_probe(&m, &s, n - 1).unwrap();
        let net = m.inference().unwrap();
        let base = center(&s.cloud);
        let before = net.tokenize_points(&base.coords).unwrap().ids;
        let after = net.tokenize_points(&base.coords[..n - 1]).unwrap().ids;
        let direct: Vec<usize> = (0..n - 1).filter(|&j| before[j] != after[j]).collect();
        assert_eq!(changed, direct.len());
        assert_eq!(raw, direct.len());
        let expected = direct.first().map_or(0.0, |lo| (direct.last().unwrap() - lo + 1) as f64 / 2.0);
        assert_eq!(half, expected);
        assert!(half <= (n as f64) / 2.0);
    }

    #[test]
    fn deletion_alignment_skips_index() {
        let ids = |v: &[u32]| v.iter().map(|&x| TokenId(x)).collect::<Vec<_>>();
        let (c, raw, h) = compare_after_deletion(&ids(&[1, 2, 3, 4, 5]), &ids(&[1, 2, 4, 9]), 2);
        assert_eq!((c, raw, h), (1, 2, 0.5));
        assert_eq!(compare_after_deletion(&ids(&[1, 2, 3]), &ids(&[1, 3]), 1), (0, 1, 0.0));
    }

    #[test]
    fn sweep_periodicity() {
        let m = tiny(1);
        let s = polymer(3, 20);
        let r = sweep_angles(&m, &s, Axis::Z, &[0.0, 1.0, 1.0 + std::f64::consts::TAU]).unwrap();
        assert_eq!(r.records[0].tokens, m.tokenize(&s.cloud).unwrap().ids);
        assert_eq!(r.records[1].tokens, r.records[2].tokens);
        assert_eq!(rotation_sweep(&m, &s, Axis::X, 64).unwrap().to_report().unwrap().rows.len(), 64);
    }

    #[test]
    fn distance_profile_columns() {
        let m = tiny(1);
        let data = synth_dataset(0, 3, 20..=40, None).unwrap();
        let p = center_distance_profile(&m, &data, 50, 1).unwrap();
        assert_eq!(p.distance.len(), 50);
        assert!(p.error.iter().all(|e| *e >= 0.0));
        let bins = p.binned(4);
        assert_eq!(bins.iter().map(|b| b.2).sum::<usize>(), 50);
    }

    #[test]
    fn evaluation_rows() {
        let m = tiny(1);
        let data = synth_dataset(1, 3, 20..=40, None).unwrap();
        let metrics = evaluate_structures(&m, &data).unwrap();
        assert!(metrics.iter().all(|x| x.rmse_backbone.is_some() && x.tm_score.is_some()));
        let r = evaluation_report(&metrics, 625).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.rows[3][0], "mean");
    }

    #[test]
    fn fits() {
        let f = fit_power_law(&[256.0, 4096.0], &[2.0, 1.0]).unwrap();
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!((f.alpha - (0.5f64).ln() / 16f64.ln()).abs() < 1e-12);
        let q = fit_polynomial(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 5.0, 10.0], 2).unwrap();
        assert!((q.eval(4.0) - 17.0).abs() < 1e-9);
        assert!(fit_polynomial(&[1.0], &[1.0], 1).is_err());
    }

    #[test]
    fn ci_shrinks_with_sample_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draw = |n: usize, rng: &mut ChaCha8Rng| Summary::of(&(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>()).unwrap().ci95();
        let (small, large) = (draw(4000, &mut rng), draw(16000, &mut rng));
        assert!((small / large - 2.0).abs() < 0.1, "{small} {large}");
    }
}
