//! Point clouds, rigid alignment, structure losses and TM-score.

mod align;
mod loss;
mod tm;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use align::{kabsch, kabsch_align, random_rotation, rotation_about, Alignment, AlignmentResult, Axis};
pub use loss::{interatomic_distance_loss, rmse, rmse_loss, structure_loss, LossParts, LossWeights};
pub use tm::{tm_d0, tm_score, TmMode};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Atoms of one structure in file order, with per-atom annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub coords: Vec<Point>,
    pub residue_index: Vec<i32>,
    pub backbone: Vec<bool>,
    pub chain: Vec<u16>,
    /// Atom names such as `CA` or `C3'`, when known.
    pub atom_names: Option<Vec<String>>,
    pub elements: Option<Vec<String>>,
}

impl PointCloud {
    /// Bare coordinates: one residue, one chain, no backbone annotation.
    pub fn from_coords(coords: Vec<Point>) -> Result<Self> {
        let n = coords.len();
        let pc = PointCloud {
            coords,
            residue_index: vec![0; n],
            backbone: vec![false; n],
            chain: vec![0; n],
            atom_names: None,
            elements: None,
        };
        pc.validate()?;
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if n == 0 {
            return Err(Error::Empty("point cloud".into()));
        }
        if self.residue_index.len() != n || self.backbone.len() != n || self.chain.len() != n {
            return Err(Error::invalid("point cloud annotation lengths differ from atom count"));
        }
        for names in [&self.atom_names, &self.elements].into_iter().flatten() {
            if names.len() != n {
                return Err(Error::invalid("point cloud name list length differs from atom count"));
            }
        }
        if let Some(i) = self.coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                context: "point cloud coordinates".into(),
                index: i,
            });
        }
        for i in 1..n {
            if self.chain[i] == self.chain[i - 1] && self.residue_index[i] < self.residue_index[i - 1] {
                return Err(Error::invalid(format!("residue index decreases within a chain at atom {i}")));
            }
        }
        Ok(())
    }

    /// Same annotations with new coordinates.
    pub fn with_coords(&self, coords: Vec<Point>) -> Result<Self> {
        if coords.len() != self.len() {
            return Err(Error::invalid("coordinate count differs from point cloud"));
        }
        Ok(PointCloud {
            coords,
            ..self.clone()
        })
    }

    /// Atoms `0..n` except `index`.
    pub fn without_atom(&self, index: usize) -> Result<Self> {
        if index >= self.len() || self.len() == 1 {
            return Err(Error::invalid(format!("cannot delete atom {index} of {}", self.len())));
        }
        fn keep<T: Clone>(v: &[T], index: usize) -> Vec<T> {
            v.iter().enumerate().filter(|(i, _)| *i != index).map(|(_, x)| x.clone()).collect()
        }
        Ok(PointCloud {
            coords: keep(&self.coords, index),
            residue_index: keep(&self.residue_index, index),
            backbone: keep(&self.backbone, index),
            chain: keep(&self.chain, index),
            atom_names: self.atom_names.as_ref().map(|v| keep(v, index)),
            elements: self.elements.as_ref().map(|v| keep(v, index)),
        })
    }

    pub fn residue_groups(&self) -> ResidueGroups {
        ResidueGroups::from_labels(&self.chain, &self.residue_index)
    }

    /// Applies `R x + t` to every atom.
    pub fn transformed(&self, rotation: &nalgebra::Matrix3<f64>, translation: [f64; 3]) -> Self {
        let coords = self
            .coords
            .iter()
            .map(|p| {
                let v = rotation * nalgebra::Vector3::from(*p);
                [v.x + translation[0], v.y + translation[1], v.z + translation[2]]
            })
            .collect();
        PointCloud {
            coords,
            ..self.clone()
        }
    }
}

pub fn centroid(coords: &[Point]) -> Point {
    let mut c = [0.0; 3];
    for p in coords {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = coords.len().max(1) as f64;
    c.map(|v| v / n)
}

/// Translates the cloud so its centroid is the origin.
pub fn center(pc: &PointCloud) -> PointCloud {
    let c = centroid(&pc.coords);
    let coords = pc.coords.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
    PointCloud {
        coords,
        ..pc.clone()
    }
}

/// Partition of atom indices into contiguous residue runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResidueGroups(Vec<Range<usize>>);

impl ResidueGroups {
    /// Consecutive atoms sharing (chain, residue) form one group.
    pub fn from_labels(chain: &[u16], residue: &[i32]) -> Self {
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=chain.len() {
            if i == chain.len() || chain[i] != chain[i - 1] || residue[i] != residue[i - 1] {
                groups.push(start..i);
                start = i;
            }
        }
        ResidueGroups(groups)
    }

    /// The whole molecule as one group.
    pub fn single(n: usize) -> Self {
        ResidueGroups(if n == 0 { vec![] } else { vec![0..n] })
    }

    pub fn new(groups: Vec<Range<usize>>) -> Self {
        ResidueGroups(groups)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.0
    }

    pub fn atom_count(&self) -> usize {
        self.0.iter().map(|r| r.end).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centering() {
        let pc = PointCloud::from_coords(vec![[4.0, 5.0, 6.0], [6.0, 5.0, 4.0]]).unwrap();
        let c = center(&pc);
        assert_eq!(centroid(&c.coords), [0.0; 3]);
        assert_eq!(center(&c), c);
        let one = PointCloud::from_coords(vec![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(center(&one).coords, vec![[0.0; 3]]);
    }

    #[test]
    fn invariants_checked() {
        assert!(PointCloud::from_coords(vec![]).is_err());
        assert!(PointCloud::from_coords(vec![[f64::NAN, 0.0, 0.0]]).is_err());
        let mut pc = PointCloud::from_coords(vec![[0.0; 3]; 3]).unwrap();
        pc.residue_index = vec![0, 2, 1];
        assert!(pc.validate().is_err());
        pc.chain = vec![0, 0, 1];
        assert!(pc.validate().is_ok());
    }

    #[test]
    fn groups_from_labels() {
        let g = ResidueGroups::from_labels(&[0, 0, 0, 1, 1], &[1, 1, 2, 2, 2]);
        assert_eq!(g.ranges(), &[0..2, 2..3, 3..5]);
        assert_eq!(g.atom_count(), 5);
    }

    #[test]
    fn delete_atom() {
        let pc = PointCloud::from_coords(vec![[0.0; 3], [1.0; 3], [2.0; 3]]).unwrap();
        let d = pc.without_atom(1).unwrap();
        assert_eq!(d.coords, vec![[0.0; 3], [2.0; 3]]);
        assert!(pc.without_atom(3).is_err());
    }
}
