use serde::{Deserialize, Serialize};

use super::{kabsch, Point, ResidueGroups};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Root-mean-square point distance, no alignment.
pub fn rmse(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("rmse: {} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("rmse input".into()));
    }
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
        .sum();
    Ok((sq / a.len() as f64).sqrt())
}

fn check_recon<F: Real>(recon: &Tensor<F>, n: usize, op: &'static str) -> Result<()> {
    if recon.shape() != [n, 3] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: recon.shape().to_vec(),
            rhs: vec![n, 3],
        });
    }
    Ok(())
}

/// Differentiable RMSE of `recon[N x 3]` against fixed `target` points.
pub fn rmse_loss<F: Real>(target: &[Point], recon: &Tensor<F>) -> Result<Tensor<F>> {
    let n = target.len();
    check_recon(recon, n, "rmse_loss")?;
    if n == 0 {
        return Err(Error::Empty("rmse_loss input".into()));
    }
    let goal: Vec<F> = target.iter().flatten().map(|&v| F::of(v)).collect();
    let sq: F = recon.data().iter().zip(&goal).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    let value = (sq / F::of(n as f64)).sqrt();
    Ok(Tensor::from_op("rmse_loss", vec![value], vec![], vec![recon.clone()], move |g, p, out| {
        let s = out[0];
        if s == F::zero() {
            return vec![Some(vec![F::zero(); 3 * n])];
        }
        let coef = g[0] / (F::of(n as f64) * s);
        let gx = p[0].data().iter().zip(&goal).map(|(x, y)| coef * (*x - *y)).collect();
        vec![Some(gx)]
    }))
}

/// `sqrt(sum_r sum_{i != j in r} (|x_i - x_j| - |y_i - y_j|)^2)` over ordered
/// pairs inside each residue group; `y` is the reconstruction.
pub fn interatomic_distance_loss<F: Real>(
    target: &[Point],
    recon: &Tensor<F>,
    groups: &ResidueGroups,
) -> Result<Tensor<F>> {
    let n = target.len();
    check_recon(recon, n, "interatomic_distance_loss")?;
    if groups.atom_count() > n {
        return Err(Error::invalid("residue groups reference atoms beyond the cloud"));
    }
    let y = recon.data();
    let dist = |p: &[f64; 3], q: &[f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let rdist = |y: &[F], i: usize, j: usize| -> F {
        let mut s = F::zero();
        for k in 0..3 {
            let d = y[3 * i + k] - y[3 * j + k];
            s += d * d;
        }
        s.sqrt()
    };
    let ranges = groups.ranges().to_vec();
    let mut total = F::zero();
    for r in &ranges {
        for i in r.clone() {
            for j in r.clone() {
                if i != j {
                    let e = F::of(dist(&target[i], &target[j])) - rdist(y, i, j);
                    total += e * e;
                }
            }
        }
    }
    let target = target.to_vec();
    let value = total.sqrt();
    Ok(Tensor::from_op("interatomic_distance_loss", vec![value], vec![], vec![recon.clone()], move |g, p, out| {
        let s = out[0];
        let y = p[0].data();
        let mut gy = vec![F::zero(); 3 * n];
        if s == F::zero() {
            return vec![Some(gy)];
        }
        // d s / d y_i = (1 / 2s) * sum_{j} -4 e_ij (y_i - y_j) / |y_i - y_j|
        let coef = g[0] * F::of(-2.0) / s;
        for r in &ranges {
            for i in r.clone() {
                for j in r.clone() {
                    if i == j {
                        continue;
                    }
                    let d = rdist(y, i, j);
                    if d == F::zero() {
                        continue;
                    }
                    let e = F::of(dist(&target[i], &target[j])) - d;
                    for k in 0..3 {
                        gy[3 * i + k] += coef * e * (y[3 * i + k] - y[3 * j + k]) / d;
                    }
                }
            }
        }
        vec![Some(gy)]
    }))
}

/// Relative weights of the two loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rmse: f64,
    pub interatomic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rmse: 0.5,
            interatomic: 0.5,
        }
    }
}

impl LossWeights {
    pub fn rmse_only() -> Self {
        LossWeights {
            rmse: 1.0,
            interatomic: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossParts<F: Real> {
    pub total: Tensor<F>,
    pub rmse: Tensor<F>,
    pub interatomic: Tensor<F>,
}

/// Weighted structure loss of `recon` against `target`.
///
/// The RMSE term is taken after optimal superposition. The target is moved
/// onto the current reconstruction and the transform is held fixed for the
/// backward pass; because the transform is optimal, this agrees with the
/// derivative of the aligned RMSE itself.
pub fn structure_loss<F: Real>(
    target: &[Point],
    recon: &Tensor<F>,
    groups: &ResidueGroups,
    weights: LossWeights,
) -> Result<LossParts<F>> {
    let n = target.len();
    check_recon(recon, n, "structure_loss")?;
    let current: Vec<Point> = recon.data().chunks_exact(3).map(|c| [c[0].f64(), c[1].f64(), c[2].f64()]).collect();
    let alignment = kabsch(&current, target)?;
    let moved = alignment.apply_all(target);
    let rmse = rmse_loss(&moved, recon)?;
    let interatomic = if weights.interatomic != 0.0 {
        interatomic_distance_loss(target, recon, groups)?
    } else {
        Tensor::scalar(F::zero())
    };
    let total = rmse.scale(weights.rmse).add(&interatomic.scale(weights.interatomic))?;
    Ok(LossParts { total, rmse, interatomic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use crate::tensor::finite_difference_check;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(p: &[Point]) -> Vec<f64> {
        p.iter().flatten().copied().collect()
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect()
    }

    fn rigid(p: &[Point], seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_rotation(&mut rng);
        p.iter()
            .map(|q| {
                let v = r * Vector3::from(*q) + Vector3::new(1.0, -4.0, 2.5);
                [v.x, v.y, v.z]
            })
            .collect()
    }

    #[test]
    fn hand_cases() {
        let x = vec![[0.0; 3], [1.0, 0.0, 0.0]];
        let y = vec![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let t = Tensor::<f64>::new(flat(&y), &[2, 3]).unwrap();
        assert!((rmse_loss(&x, &t).unwrap().item() - 0.5f64.sqrt()).abs() < 1e-12);

        let x = vec![[0.0; 3], [1.5, 0.0, 0.0]];
        let y = Tensor::<f64>::new(vec![0.0, 0.0, 0.0, 0.0, 1.3, 0.0], &[2, 3]).unwrap();
        let l = interatomic_distance_loss(&x, &y, &ResidueGroups::single(2)).unwrap();
        assert!((l.item() - (2.0f64 * 0.04).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn offset_absorbed_by_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = cloud(&mut rng, 9);
        let y: Vec<Point> = x.iter().map(|p| [p[0] + 1.0, p[1], p[2]]).collect();
        let t = Tensor::<f64>::new(flat(&y), &[9, 3]).unwrap();
        let parts = structure_loss(&x, &t, &ResidueGroups::single(9), LossWeights::default()).unwrap();
        assert!(parts.rmse.item() < 1e-10);
        assert!(parts.total.item() < 1e-7);
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cloud(&mut rng, 6);
        let y = cloud(&mut rng, 6);
        let t = Tensor::<f64>::new(flat(&y), &[6, 3]).unwrap();
        let p = structure_loss(&x, &t, &ResidueGroups::new(vec![0..3, 3..6]), LossWeights::default()).unwrap();
        assert!((p.total.item() - 0.5 * (p.rmse.item() + p.interatomic.item())).abs() < 1e-12);
    }

    #[test]
    fn interatomic_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = cloud(&mut rng, 10);
        let y = cloud(&mut rng, 10);
        let groups = ResidueGroups::new(vec![0..4, 4..5, 5..10]);
        let t = Tensor::<f64>::new(flat(&y), &[10, 3]).unwrap();
        let got = interatomic_distance_loss(&x, &t, &groups).unwrap().item();
        let d = |a: &Point, b: &Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        let mut sum = 0.0;
        for g in groups.ranges() {
            for i in g.clone() {
                for j in g.clone() {
                    if i != j {
                        sum += (d(&x[i], &x[j]) - d(&y[i], &y[j])).powi(2);
                    }
                }
            }
        }
        assert!((got - sum.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn gradients_with_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = cloud(&mut rng, 8);
        let y = cloud(&mut rng, 8);
        let groups = ResidueGroups::new(vec![0..3, 3..8]);
        let r = finite_difference_check(&[flat(&y)], 1e-5, |p| {
            let t = Tensor::param(p[0].clone(), &[8, 3])?;
            let parts = structure_loss(&x, &t, &groups, LossWeights::default())?;
            Ok((parts.total, vec![t]))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    proptest! {
        #[test]
        fn rigid_invariance(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = cloud(&mut rng, 12);
            let y = cloud(&mut rng, 12);
            let groups = ResidueGroups::new(vec![0..5, 5..12]);
            let eval = |a: &[Point], b: &[Point]| {
                let t = Tensor::<f64>::new(flat(b), &[12, 3]).unwrap();
                structure_loss(a, &t, &groups, LossWeights::default()).unwrap()
            };
            let base = eval(&x, &y);
            let moved_y = eval(&x, &rigid(&y, seed + 1));
            let moved_x = eval(&rigid(&x, seed + 2), &y);
            for p in [moved_x, moved_y] {
                prop_assert!((p.rmse.item() - base.rmse.item()).abs() <= 1e-5);
                prop_assert!((p.interatomic.item() - base.interatomic.item()).abs() <= 1e-8);
            }
            let mirrored: Vec<Point> = y.iter().map(|p| [-p[0], p[1], p[2]]).collect();
            let t = Tensor::<f64>::new(flat(&mirrored), &[12, 3]).unwrap();
            let m = interatomic_distance_loss(&x, &t, &groups).unwrap().item();
            prop_assert!((m - base.interatomic.item()).abs() <= 1e-10);
        }
    }
}
