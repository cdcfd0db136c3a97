use serde::{Deserialize, Serialize};

use super::{kabsch, Point, PointCloud};
use crate::error::{Error, Result};

/// Which backbone atom anchors the score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TmMode {
    /// Alpha carbons, `CA`.
    Protein,
    /// Ribose `C3'` (also written `C3*`).
    Rna,
}

impl TmMode {
    fn is_anchor(self, name: &str) -> bool {
        match self {
            TmMode::Protein => name == "CA",
            TmMode::Rna => name == "C3'" || name == "C3*",
        }
    }
}

/// Distance scale `d0(L)`.
///
/// Protein: `1.24 (L - 15)^(1/3) - 1.8`, floored at 0.5 (Zhang & Skolnick).
/// RNA: `0.6 sqrt(L - 0.5) - 2.5` for `L >= 30`, stepped below that
/// (Gong et al.): 0.7 for 24..=29, 0.6 for 20..=23, 0.5 for 16..=19,
/// 0.4 for 12..=15 and 0.3 under 12.
pub fn tm_d0(len: usize, mode: TmMode) -> f64 {
    let l = len as f64;
    match mode {
        TmMode::Protein => {
            if len <= 15 {
                0.5
            } else {
                (1.24 * (l - 15.0).cbrt() - 1.8).max(0.5)
            }
        }
        TmMode::Rna => match len {
            0..=11 => 0.3,
            12..=15 => 0.4,
            16..=19 => 0.5,
            20..=23 => 0.6,
            24..=29 => 0.7,
            _ => 0.6 * (l - 0.5).sqrt() - 2.5,
        },
    }
}

/// TM-score of `model` against `reference` over anchor atoms, after Kabsch
/// superposition of the anchors. Atoms correspond by position.
pub fn tm_score(reference: &PointCloud, model: &PointCloud, mode: TmMode) -> Result<f64> {
    if reference.len() != model.len() {
        return Err(Error::invalid("tm_score: atom counts differ"));
    }
    let names = reference
        .atom_names
        .as_ref()
        .ok_or_else(|| Error::invalid("tm_score needs atom names to find anchors"))?;
    let idx: Vec<usize> = names.iter().enumerate().filter(|(_, n)| mode.is_anchor(n)).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(Error::invalid(format!("no {mode:?} anchor atoms found")));
    }
    let pick = |pc: &PointCloud| -> Vec<Point> { idx.iter().map(|&i| pc.coords[i]).collect() };
    let (r, m) = (pick(reference), pick(model));
    Ok(tm_on_points(&r, &m, mode)?)
}

pub(crate) fn tm_on_points(reference: &[Point], model: &[Point], mode: TmMode) -> Result<f64> {
    let alignment = kabsch(reference, model)?;
    let moved = alignment.apply_all(model);
    let d0 = tm_d0(reference.len(), mode);
    let sum: f64 = reference
        .iter()
        .zip(&moved)
        .map(|(p, q)| {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            1.0 / (1.0 + d2 / (d0 * d0))
        })
        .sum();
    Ok(sum / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn named(coords: Vec<Point>, name: &str) -> PointCloud {
        let n = coords.len();
        let mut pc = PointCloud::from_coords(coords).unwrap();
        pc.atom_names = Some(vec![name.to_string(); n]);
        pc
    }

    #[test]
    fn d0_values() {
        assert!((tm_d0(100, TmMode::Protein) - (1.24 * 85f64.cbrt() - 1.8)).abs() < 1e-12);
        assert_eq!(tm_d0(10, TmMode::Protein), 0.5);
        assert_eq!(tm_d0(25, TmMode::Rna), 0.7);
        assert!((tm_d0(30, TmMode::Rna) - (0.6 * 29.5f64.sqrt() - 2.5)).abs() < 1e-12);
    }

    #[test]
    fn identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<Point> = (0..40).map(|_| [rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0)]).collect();
        let pc = named(c, "CA");
        assert!((tm_score(&pc, &pc, TmMode::Protein).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_clouds_score_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut gen = || -> Vec<Point> {
            (0..100).map(|_| [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)]).collect()
        };
        let (a, b) = (named(gen(), "CA"), named(gen(), "CA"));
        assert!(tm_score(&a, &b, TmMode::Protein).unwrap() < 0.3);
    }

    #[test]
    fn no_anchor_rejected() {
        let pc = named(vec![[0.0; 3], [1.0, 0.0, 0.0]], "CB");
        assert!(tm_score(&pc, &pc, TmMode::Protein).is_err());
        assert!(tm_score(&pc, &pc, TmMode::Rna).is_err());
    }

    #[test]
    fn single_displacement_contributes_half() {
        // Score the displaced anchor term directly on a fixed superposition:
        // 1 / (1 + (d0/d0)^2) = 1/2.
        let d0 = tm_d0(50, TmMode::Protein);
        let term = 1.0 / (1.0 + (d0 / d0).powi(2));
        assert_eq!(term, 0.5);
    }
}
