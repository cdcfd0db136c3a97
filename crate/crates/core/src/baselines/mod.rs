//! Non-learned spatial codebooks: uniform voxel grids and k-means Voronoi
//! cells, plus the analytic voxel error model.

mod kmeans;

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

pub use kmeans::{kmeans_codebook, structure_point_sample, KMeansFit, VoronoiCodebook};

use crate::error::{Error, Result};
use crate::geometry::Point;

pub const VOXEL_MC_SAMPLES: usize = 10_000_000;
const VOXEL_MC_SEED: u64 = 0x766f78656c;

/// Monte-Carlo estimate of the mean distance from a uniform point in the
/// unit cube to its centre.
pub fn voxel_constant_mc(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = Uniform::new(-0.5f64, 0.5);
    let mut sum = 0.0;
    for _ in 0..samples {
        let (x, y, z) = (rng.sample(half), rng.sample(half), rng.sample(half));
        sum += (x * x + y * y + z * z).sqrt();
    }
    sum / samples as f64
}

/// The cached constant `c` in `rmsd_v = c * a`.
pub fn voxel_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| voxel_constant_mc(VOXEL_MC_SAMPLES, VOXEL_MC_SEED))
}

/// Expected error of snapping a uniform point to the centre of its voxel
/// of side `a`. Like the integral it comes from, this is a mean distance.
pub fn voxel_rmsd(a: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid("voxel size must be positive"));
    }
    Ok(voxel_constant() * a)
}

/// Voxels needed to tesselate a cube of side `extent` at mean error `rmsd`,
/// using the rounded constant 0.48.
pub fn voxel_count(extent: f64, rmsd: f64) -> Result<u64> {
    if !(extent > 0.0 && rmsd > 0.0) {
        return Err(Error::invalid("extent and target error must be positive"));
    }
    Ok((0.48 * extent / rmsd).powi(3).round() as u64)
}

/// Uniform grid over the cube `[-A/2, A/2]^3`, widened to a whole number
/// of voxels per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelGrid {
    side: f64,
    voxel: f64,
    per_axis: u32,
}

impl VoxelGrid {
    pub fn new(side: f64, voxel: f64) -> Result<Self> {
        if !(voxel > 0.0 && side >= voxel && side.is_finite()) {
            return Err(Error::invalid(format!("voxel grid needs 0 < a <= A, got a = {voxel}, A = {side}")));
        }
        let per_axis = (side / voxel).ceil();
        if per_axis.powi(3) > u32::MAX as f64 {
            return Err(Error::invalid("voxel ids would overflow 32 bits"));
        }
        Ok(VoxelGrid {
            side,
            voxel,
            per_axis: per_axis as u32,
        })
    }

    /// A grid of `per_axis^3` voxels covering `side`.
    pub fn with_count(side: f64, per_axis: u32) -> Result<Self> {
        if per_axis == 0 {
            return Err(Error::invalid("voxel grid needs at least one voxel per axis"));
        }
        Self::new(side, side / per_axis as f64)
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel
    }

    pub fn per_axis(&self) -> u32 {
        self.per_axis
    }

    pub fn count(&self) -> u64 {
        (self.per_axis as u64).pow(3)
    }

    fn origin(&self) -> f64 {
        -0.5 * self.per_axis as f64 * self.voxel
    }

    /// Mixed-radix voxel ids, `x` most significant. Points outside the
    /// grid are clamped to the boundary voxel.
    pub fn encode(&self, points: &[Point]) -> Vec<u32> {
        let n = self.per_axis;
        let mut clamped = 0usize;
        let ids = points
            .iter()
            .map(|p| {
                let mut id = 0u32;
                for &c in p {
                    let raw = ((c - self.origin()) / self.voxel).floor();
                    let i = raw.clamp(0.0, (n - 1) as f64);
                    if i != raw {
                        clamped += 1;
                    }
                    id = id * n + i as u32;
                }
                id
            })
            .collect();
        if clamped > 0 {
            log::warn!("{clamped} coordinates fell outside the voxel grid and were clamped");
        }
        ids
    }

    /// Voxel centres.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<Point>> {
        let n = self.per_axis;
        ids.iter()
            .map(|&id| {
                if id as u64 >= self.count() {
                    return Err(Error::invalid(format!("voxel id {id} outside [0, {})", self.count())));
                }
                let idx = [id / (n * n), (id / n) % n, id % n];
                Ok(idx.map(|i| self.origin() + (i as f64 + 0.5) * self.voxel))
            })
            .collect()
    }
}

/// Mean and root-mean-square per-point error of a reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecError {
    pub mean: f64,
    pub rms: f64,
}

pub fn codec_error(original: &[Point], decoded: &[Point]) -> Result<CodecError> {
    if original.len() != decoded.len() || original.is_empty() {
        return Err(Error::invalid("codec error needs equal, non-empty point sets"));
    }
    let (mut sum, mut sq) = (0.0, 0.0);
    for (a, b) in original.iter().zip(decoded) {
        let d2: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
        sum += d2.sqrt();
        sq += d2;
    }
    let n = original.len() as f64;
    Ok(CodecError {
        mean: sum / n,
        rms: (sq / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_near_closed_form() {
        let c = voxel_constant();
        assert!((c - 0.480296).abs() < 5e-4, "{c}");
        assert!((c - 0.48).abs() <= 0.005);
        let r1 = voxel_rmsd(1.0).unwrap();
        assert_eq!(voxel_rmsd(2.0).unwrap(), 2.0 * r1);
        assert!(voxel_rmsd(0.0).is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(voxel_count(100.0, 1.0).unwrap(), 110_592);
        assert_eq!(voxel_count(24.0, 0.2).unwrap(), 191_103);
        // Side m voxels of size a at the error 0.48 a.
        assert_eq!(voxel_count(7.0 * 2.5, 0.48 * 2.5).unwrap(), 343);
        assert!(voxel_count(-1.0, 1.0).is_err());
    }

    #[test]
    fn codec_centres_and_ranges() {
        let g = VoxelGrid::new(10.0, 1.0).unwrap();
        assert_eq!(g.count(), 1000);
        let centre = g.decode(&[537]).unwrap();
        assert_eq!(g.encode(&centre), vec![537]);
        assert_eq!(codec_error(&centre, &g.decode(&g.encode(&centre)).unwrap()).unwrap().mean, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<Point> = (0..1000).map(|_| [rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), 0.0]).collect();
        assert!(g.encode(&pts).iter().all(|&id| (id as u64) < g.count()));
        assert!(g.decode(&[1000]).is_err());
    }

    #[test]
    fn codec_error_matches_model() {
        let a = 0.75;
        let g = VoxelGrid::new(12.0, a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Uniform::new(-6.0, 6.0);
        let pts: Vec<Point> = (0..100_000).map(|_| [rng.sample(u), rng.sample(u), rng.sample(u)]).collect();
        let e = codec_error(&pts, &g.decode(&g.encode(&pts)).unwrap()).unwrap();
        let model = voxel_rmsd(a).unwrap();
        assert!((e.mean - model).abs() / model < 0.02, "{} vs {model}", e.mean);
        // The root-mean-square error of the same codec is a / 2.
        assert!((e.rms - 0.5 * a).abs() / (0.5 * a) < 0.02);
    }
}
