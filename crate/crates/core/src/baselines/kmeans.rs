//! k-means Voronoi codebook over structure coordinates.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Structure;
use crate::error::{Error, Result};
use crate::geometry::{center, kabsch, random_rotation, Point};
use crate::model::{Checkpoint, ParamEntry};

const ASSIGN_CHUNK: usize = 4096;

fn dist2(a: &Point, b: &Point) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

/// Centroids of a Voronoi tesselation; token ids index into them.
#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiCodebook {
    centroids: Vec<Point>,
}

impl VoronoiCodebook {
    pub fn new(centroids: Vec<Point>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::Empty("codebook".into()));
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "codebook centroid".into(),
                index: centroids.iter().position(|c| c.iter().any(|v| !v.is_finite())).unwrap_or(0),
            });
        }
        Ok(VoronoiCodebook { centroids })
    }

    pub fn centroids(&self) -> &[Point] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Index and squared distance of the nearest centroid; ties go to the
    /// lowest index.
    pub fn nearest(&self, p: &Point) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dist2(p, c);
            if d < best.1 {
                best = (i as u32, d);
            }
        }
        best
    }

    pub fn encode(&self, points: &[Point]) -> Vec<u32> {
        points.par_chunks(ASSIGN_CHUNK).flat_map_iter(|c| c.iter().map(|p| self.nearest(p).0)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<Point>> {
        ids.iter()
            .map(|&i| {
                self.centroids
                    .get(i as usize)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("codebook id {i} outside [0, {})", self.len())))
            })
            .collect()
    }

    /// Kabsch RMSE of encoding the centered structure and decoding it.
    pub fn structure_rmse(&self, coords: &[Point]) -> Result<f64> {
        let pc = crate::geometry::PointCloud::from_coords(coords.to_vec())?;
        let centered = center(&pc).coords;
        let decoded = self.decode(&self.encode(&centered))?;
        Ok(kabsch(&centered, &decoded)?.rmse)
    }

    /// Mean [`structure_rmse`](Self::structure_rmse) over a set.
    pub fn mean_structure_rmse(&self, structures: &[Structure]) -> Result<f64> {
        if structures.is_empty() {
            return Err(Error::Empty("evaluation set".into()));
        }
        let total: f64 = structures.iter().map(|s| self.structure_rmse(&s.cloud.coords)).sum::<Result<f64>>()?;
        Ok(total / structures.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: serde_json::json!({ "codebook": { "kind": "voronoi", "size": self.len() } }),
            tensors: vec![ParamEntry {
                name: "centroids".into(),
                shape: vec![self.len(), 3],
                values: self.centroids.iter().flatten().map(|&v| v as f32).collect(),
            }],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let t = ckpt
            .tensor("centroids")
            .filter(|t| t.shape.len() == 2 && t.shape[1] == 3)
            .ok_or_else(|| Error::Format("file has no K x 3 centroid tensor".into()))?;
        Self::new(t.values.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub codebook: VoronoiCodebook,
    /// Mean squared distance to the assigned centroid after each assignment.
    pub objective: Vec<f64>,
}

fn plus_plus_seeds(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())]);
    let mut d2: Vec<f64> = points.par_iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            points[pick]
        } else {
            points[rng.gen_range(0..points.len())]
        };
        centroids.push(next);
        d2.par_iter_mut().zip(points.par_iter()).for_each(|(d, p)| *d = d.min(dist2(p, &next)));
    }
    centroids
}

/// k-means++ seeding followed by up to `iters` Lloyd iterations.
///
/// Clusters left empty are moved onto the point currently farthest from
/// its centroid. Sums run in point order, so results do not depend on the
/// thread count.
pub fn kmeans_codebook(points: &[Point], k: usize, iters: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!("{} sample points cannot seed {k} clusters", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codebook = VoronoiCodebook::new(plus_plus_seeds(points, k, &mut rng))?;
    let mut objective = Vec::new();
    let mut previous: Option<Vec<u32>> = None;
    for _ in 0..=iters {
        let assigned: Vec<(u32, f64)> = points
            .par_chunks(ASSIGN_CHUNK)
            .flat_map_iter(|c| c.iter().map(|p| codebook.nearest(p)))
            .collect();
        objective.push(assigned.iter().map(|a| a.1).sum::<f64>() / points.len() as f64);
        let ids: Vec<u32> = assigned.iter().map(|a| a.0).collect();
        if previous.as_ref() == Some(&ids) || objective.len() > iters {
            break;
        }
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&ids) {
            for d in 0..3 {
                sums[c as usize][d] += p[d];
            }
            counts[c as usize] += 1;
        }
        let mut far: Vec<usize> = (0..points.len()).collect();
        far.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();
        let mut centroids = codebook.centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].map(|s| s / counts[c] as f64);
            } else if let Some(i) = far.next() {
                centroids[c] = points[i];
            }
        }
        codebook = VoronoiCodebook::new(centroids)?;
        previous = Some(ids);
    }
    Ok(KMeansFit { codebook, objective })
}

/// Centered, randomly rotated atom positions from `structures`, `rotations`
/// copies each, subsampled without replacement to at most `max_points`.
pub fn structure_point_sample(structures: &[Structure], rotations: usize, max_points: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for s in structures {
        let c = center(&s.cloud);
        for _ in 0..rotations.max(1) {
            let r = random_rotation(&mut rng);
            all.extend(c.transformed(&r, [0.0; 3]).coords);
        }
    }
    if all.len() <= max_points {
        return all;
    }
    let mut picked = index::sample(&mut rng, all.len(), max_points).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| [x, 0.0, 0.0]).collect()
    }

    #[test]
    fn three_cluster_toy() {
        let pts = line(&[0.0, 0.1, 5.0, 5.1, 10.0, 10.1]);
        // Exhaustive oracle: the best partition into three contiguous groups.
        let mut best = (f64::INFINITY, vec![]);
        for i in 1..pts.len() {
            for j in i + 1..pts.len() {
                let groups = [&pts[..i], &pts[i..j], &pts[j..]];
                let means: Vec<f64> = groups.iter().map(|g| g.iter().map(|p| p[0]).sum::<f64>() / g.len() as f64).collect();
                let cost: f64 = groups.iter().zip(&means).map(|(g, m)| g.iter().map(|p| (p[0] - m).powi(2)).sum::<f64>()).sum();
                if cost < best.0 {
                    best = (cost, means);
                }
            }
        }
        for seed in 0..5 {
            let fit = kmeans_codebook(&pts, 3, 50, seed).unwrap();
            let mut got: Vec<f64> = fit.codebook.centroids().iter().map(|c| c[0]).collect();
            got.sort_by(f64::total_cmp);
            for (g, e) in got.iter().zip(&best.1) {
                assert!((g - e).abs() < 1e-12, "{got:?} vs {:?}", best.1);
            }
        }
        assert!((best.1[1] - 5.05).abs() < 1e-12);
    }

    #[test]
    fn memorizes_when_k_equals_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point> = (0..40).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let fit = kmeans_codebook(&pts, 40, 10, 2).unwrap();
        assert_eq!(*fit.objective.last().unwrap(), 0.0);
        let back = fit.codebook.decode(&fit.codebook.encode(&pts)).unwrap();
        assert_eq!(back, pts);
    }

    #[test]
    fn objective_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..3000).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
        let fit = kmeans_codebook(&pts, 64, 30, 4).unwrap();
        assert!(fit.objective.len() > 2);
        for w in fit.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", fit.objective);
        }
    }

    #[test]
    fn ties_and_errors() {
        let cb = VoronoiCodebook::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(cb.nearest(&[0.0, 0.0, 0.0]).0, 0);
        assert!(cb.decode(&[2]).is_err());
        assert!(kmeans_codebook(&line(&[0.0, 1.0]), 3, 5, 0).is_err());
        assert!(VoronoiCodebook::new(vec![]).is_err());
    }

    #[test]
    fn empty_cluster_reseeded() {
        // Duplicates force several seeds onto one location.
        let mut pts = line(&[0.0; 20]);
        pts.extend(line(&[3.0, 7.0]));
        let fit = kmeans_codebook(&pts, 3, 10, 0).unwrap();
        assert_eq!(*fit.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cb = VoronoiCodebook::new(vec![[1.5, -2.25, 0.5], [0.0, 4.0, 8.0]]).unwrap();
        cb.save(&dir.path().join("cb.ckpt")).unwrap();
        assert_eq!(VoronoiCodebook::load(&dir.path().join("cb.ckpt")).unwrap(), cb);
    }
}
