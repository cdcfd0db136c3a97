//! Training studies: one model per setting, compared on held-out RMSE.

use rayon::prelude::*;

use super::report::{num, ColumnarReport};
use super::{fit_power_law, PowerLaw};
use crate::data::Structure;
use crate::error::{Error, Result};
use crate::geometry::LossWeights;
use crate::model::{TokenizerConfig, TokenizerModel};
use crate::quantizer::FsqSpec;
use crate::training::{evaluate_rmse, Trainer, TrainConfig};

/// Shared training data and schedule for every run of a study.
#[derive(Clone, Copy)]
pub struct StudyBudget<'a> {
    pub train: &'a TrainConfig,
    pub train_set: &'a [Structure],
    pub val_set: &'a [Structure],
}

/// Held-out RMSE of one run, or why it was excluded.
#[derive(Clone, Debug, PartialEq)]
pub enum StudyOutcome {
    Finished { rmse: f64, initial_rmse: f64 },
    Diverged(String),
}

impl StudyOutcome {
    pub fn rmse(&self) -> Option<f64> {
        match self {
            StudyOutcome::Finished { rmse, .. } => Some(*rmse),
            StudyOutcome::Diverged(_) => None,
        }
    }
}

/// Trains from scratch and evaluates on the validation set. Aborted runs
/// are reported instead of failing the study.
pub fn run_study_point(model: &TokenizerConfig, train: &TrainConfig, budget: StudyBudget<'_>) -> Result<StudyOutcome> {
    let m = TokenizerModel::new(model.clone())?;
    let initial_rmse = evaluate_rmse(&m, budget.val_set)?;
    let mut t = Trainer::new(m, train.clone(), budget.train_set.to_vec(), vec![])?;
    match t.run(None, None) {
        Ok(_) => Ok(StudyOutcome::Finished {
            rmse: evaluate_rmse(&t.model, budget.val_set)?,
            initial_rmse,
        }),
        Err(e @ Error::TrainingAborted { .. }) => {
            log::warn!("study run excluded: {e}");
            Ok(StudyOutcome::Diverged(e.to_string()))
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    /// (latent dims, codebook size, outcome)
    pub points: Vec<(usize, u32, StudyOutcome)>,
    /// Fit over the finished runs; `None` with fewer than two.
    pub fit: Option<PowerLaw>,
}

impl ScalingReport {
    pub fn to_report(&self) -> Result<ColumnarReport> {
        let mut r = ColumnarReport::new(["dims", "codebook_size", "rmse"]);
        if let Some(f) = &self.fit {
            r = r.meta("alpha", num(f.alpha)).meta("beta", num(f.beta)).meta("r2", num(f.r2));
        }
        for (d, size, o) in &self.points {
            r.push(vec![d.to_string(), size.to_string(), o.rmse().map(num).unwrap_or_default()])?;
        }
        Ok(r)
    }
}

/// One run per latent dimensionality with `level` values per dimension,
/// then a log-log fit of RMSE against codebook size.
pub fn codebook_scaling_study(base: &TokenizerConfig, level: u32, dims: &[usize], budget: StudyBudget<'_>) -> Result<ScalingReport> {
    let points = dims
        .par_iter()
        .map(|&d| {
            let cfg = TokenizerConfig {
                levels: FsqSpec::uniform(level, d)?,
                ..base.clone()
            };
            let size = cfg.levels.codebook_size();
            Ok((d, size, run_study_point(&cfg, budget.train, budget)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|(_, s, o)| o.rmse().map(|r| (*s as f64, r))).unzip();
    let fit = if x.len() >= 2 { Some(fit_power_law(&x, &y)?) } else { None };
    Ok(ScalingReport { points, fit })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionRow {
    pub k: usize,
    pub outcome: StudyOutcome,
    /// RMSE relative to the `k = 1` run (or the first run when absent).
    pub ratio: Option<f64>,
}

pub fn compression_study(base: &TokenizerConfig, ks: &[usize], budget: StudyBudget<'_>) -> Result<Vec<CompressionRow>> {
    let outcomes = ks
        .par_iter()
        .map(|&k| {
            let cfg = TokenizerConfig {
                compression_k: k,
                ..base.clone()
            };
            run_study_point(&cfg, budget.train, budget)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = ks
        .iter()
        .position(|&k| k == 1)
        .unwrap_or(0);
    let base_rmse = outcomes.get(reference).and_then(|o| o.rmse());
    Ok(ks
        .iter()
        .zip(outcomes)
        .map(|(&k, outcome)| CompressionRow {
            k,
            ratio: outcome.rmse().zip(base_rmse).map(|(r, b)| r / b),
            outcome,
        })
        .collect())
}

pub fn compression_report(rows: &[CompressionRow]) -> Result<ColumnarReport> {
    let mut r = ColumnarReport::new(["k", "rmse", "ratio"]);
    for row in rows {
        r.push(vec![row.k.to_string(), row.outcome.rmse().map(num).unwrap_or_default(), row.ratio.map(num).unwrap_or_default()])?;
    }
    Ok(r)
}

/// A cumulative modification of the architecture or training recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRung {
    pub name: &'static str,
    pub model: TokenizerConfig,
    pub train: TrainConfig,
}

/// small 2/4 unidirectional, then +rotation, +bidirectional, +deeper 4/6,
/// +interatomic loss; each rung keeps the previous modifications.
pub fn ablation_ladder(base: &TokenizerConfig, train: &TrainConfig) -> Vec<AblationRung> {
    let mut model = TokenizerConfig {
        n_encoder_layers: 2,
        n_decoder_layers: 4,
        bidirectional: false,
        ..base.clone()
    };
    let mut tc = TrainConfig {
        augment_rotations: false,
        loss: LossWeights::rmse_only(),
        ..train.clone()
    };
    let mut rungs = vec![AblationRung { name: "small", model: model.clone(), train: tc.clone() }];
    tc.augment_rotations = true;
    rungs.push(AblationRung { name: "+rotation", model: model.clone(), train: tc.clone() });
    model.bidirectional = true;
    rungs.push(AblationRung { name: "+bidirectional", model: model.clone(), train: tc.clone() });
    model.n_encoder_layers = 4;
    model.n_decoder_layers = 6;
    rungs.push(AblationRung { name: "+deeper", model: model.clone(), train: tc.clone() });
    tc.loss = LossWeights::default();
    rungs.push(AblationRung { name: "+interatomic", model, train: tc });
    rungs
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub seeds: Vec<u64>,
    pub outcomes: Vec<StudyOutcome>,
}

impl AblationRow {
    /// Mean over finished runs.
    pub fn mean_rmse(&self) -> Option<f64> {
        let v: Vec<f64> = self.outcomes.iter().filter_map(|o| o.rmse()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Trains each rung once per seed; the seed drives both initialization and
/// the training stream.
pub fn ablation_harness(rungs: &[AblationRung], seeds: &[u64], train_set: &[Structure], val_set: &[Structure]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    rungs
        .iter()
        .map(|rung| {
            let outcomes = seeds
                .par_iter()
                .map(|&seed| {
                    let model = TokenizerConfig { seed, ..rung.model.clone() };
                    let train = TrainConfig { seed, ..rung.train.clone() };
                    run_study_point(&model, &train, StudyBudget { train: &train, train_set, val_set })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow {
                name: rung.name,
                seeds: seeds.to_vec(),
                outcomes,
            })
        })
        .collect()
}

pub fn ablation_report(rows: &[AblationRow]) -> Result<ColumnarReport> {
    let mut r = ColumnarReport::new(["rung", "mean_rmse", "runs", "improvement_pct"]);
    let mut prev: Option<f64> = None;
    for row in rows {
        let mean = row.mean_rmse();
        let improvement = mean.zip(prev).map(|(m, p)| 100.0 * (m - p) / p);
        r.push(vec![
            row.name.into(),
            mean.map(num).unwrap_or_default(),
            row.outcomes.iter().filter(|o| o.rmse().is_some()).count().to_string(),
            improvement.map(num).unwrap_or_default(),
        ])?;
        prev = mean.or(prev);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn tiny() -> TokenizerConfig {
        TokenizerConfig {
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_model: 8,
            levels: FsqSpec::uniform(4, 3).unwrap(),
            d_state: 2,
            ..TokenizerConfig::default()
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            total_steps: 3,
            batch_size: 2,
            effective_batch: 2,
            validate_every: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ladder_shape() {
        let rungs = ablation_ladder(&tiny(), &quick());
        let names: Vec<&str> = rungs.iter().map(|r| r.name).collect();
        assert_eq!(names, ["small", "+rotation", "+bidirectional", "+deeper", "+interatomic"]);
        assert!(!rungs[1].model.bidirectional && rungs[2].model.bidirectional);
        assert_eq!((rungs[3].model.n_encoder_layers, rungs[3].model.n_decoder_layers), (4, 6));
        assert_eq!(rungs[3].train.loss, LossWeights::rmse_only());
        assert_eq!(rungs[4].train.loss, LossWeights::default());
    }

    #[test]
    fn studies_are_deterministic() {
        let data = synth_dataset(0, 4, 12..=20, None).unwrap();
        let budget = StudyBudget { train: &quick(), train_set: &data[..3], val_set: &data[3..] };
        let a = compression_study(&tiny(), &[1, 2], budget).unwrap();
        let b = compression_study(&tiny(), &[1, 2], budget).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].ratio, Some(1.0));
        let rungs = &ablation_ladder(&tiny(), &quick())[..1];
        let rows = ablation_harness(rungs, &[0, 1], &data[..3], &data[3..]).unwrap();
        assert_eq!(rows[0].outcomes.len(), 2);
        assert!(ablation_report(&rows).unwrap().rows.len() == 1);
        let s = codebook_scaling_study(&tiny(), 4, &[2, 3], budget).unwrap();
        assert!(s.fit.unwrap().r2 > 0.999);
    }
}
