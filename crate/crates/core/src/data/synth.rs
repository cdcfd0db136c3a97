//! Synthetic polymers for desk-scale experiments.
//!
//! A backbone of one atom per residue (`CA`) is traced either as an ideal
//! helix or as a self-avoiding walk; each residue then grows a short side
//! chain (`CB`, `CG`, ...) pointing away from its neighbours.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, Point, PointCloud};

pub const HELIX_RISE: f64 = 1.5;
pub const HELIX_RADIUS: f64 = 2.3;
pub const HELIX_TWIST_DEG: f64 = 100.0;
pub const WALK_STEP: f64 = 3.8;
pub const MIN_BACKBONE_DISTANCE: f64 = 2.5;
pub const MAX_RETRIES: usize = 10_000;
const SIDE_NAMES: &[&str] = &["CB", "CG", "CD", "CE", "CZ", "CH"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolymerStyle {
    Helix,
    Coil,
    /// Alternating helical and coiled segments.
    Mixed,
}

impl std::str::FromStr for PolymerStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "helix" => Ok(PolymerStyle::Helix),
            "coil" => Ok(PolymerStyle::Coil),
            "mixed" => Ok(PolymerStyle::Mixed),
            _ => Err(Error::invalid(format!("unknown polymer style {s:?}"))),
        }
    }
}

fn p(v: Vector3<f64>) -> Point {
    [v.x, v.y, v.z]
}

fn helix_point(i: usize) -> Vector3<f64> {
    let theta = (HELIX_TWIST_DEG * i as f64).to_radians();
    Vector3::new(HELIX_RADIUS * theta.cos(), HELIX_RADIUS * theta.sin(), HELIX_RISE * i as f64)
}

fn clashes(candidate: &Vector3<f64>, placed: &[Vector3<f64>]) -> bool {
    placed.iter().any(|q| (candidate - q).norm() < MIN_BACKBONE_DISTANCE)
}

struct Budget(usize);

impl Budget {
    fn spend(&mut self) -> Result<()> {
        self.0 += 1;
        if self.0 > MAX_RETRIES {
            return Err(Error::invalid(format!("self-avoiding walk needed more than {MAX_RETRIES} retries")));
        }
        Ok(())
    }
}

fn walk_step<R: Rng + ?Sized>(rng: &mut R, backbone: &mut Vec<Vector3<f64>>, budget: &mut Budget) -> Result<()> {
    let last = *backbone.last().expect("walk needs a start");
    loop {
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let candidate = last + Vector3::from(dir) * WALK_STEP;
        if !clashes(&candidate, backbone) {
            backbone.push(candidate);
            return Ok(());
        }
        budget.spend()?;
    }
}

/// Appends an ideal helical segment of `len` residues continuing the chain.
fn helix_segment<R: Rng + ?Sized>(
    rng: &mut R,
    backbone: &mut Vec<Vector3<f64>>,
    len: usize,
    budget: &mut Budget,
) -> Result<()> {
    let local: Vec<Vector3<f64>> = (0..len).map(helix_point).collect();
    if backbone.is_empty() {
        backbone.extend(local);
        return Ok(());
    }
    let last = *backbone.last().expect("non-empty");
    loop {
        let r = random_rotation(rng);
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let start = last + Vector3::from(dir) * WALK_STEP;
        let seg: Vec<Vector3<f64>> = local.iter().map(|q| start + r * q).collect();
        if seg.iter().all(|q| !clashes(q, backbone)) {
            backbone.extend(seg);
            return Ok(());
        }
        budget.spend()?;
    }
}

/// Generates one polymer of `n_residues * atoms_per_residue` atoms.
pub fn synth_polymer<R: Rng + ?Sized>(
    rng: &mut R,
    n_residues: usize,
    atoms_per_residue: usize,
    style: PolymerStyle,
) -> Result<PointCloud> {
    if n_residues == 0 || atoms_per_residue == 0 {
        return Err(Error::invalid("polymer needs at least one residue and one atom per residue"));
    }
    if atoms_per_residue > 1 + SIDE_NAMES.len() {
        return Err(Error::invalid(format!("at most {} atoms per residue", 1 + SIDE_NAMES.len())));
    }
    let mut budget = Budget(0);
    let mut backbone: Vec<Vector3<f64>> = Vec::with_capacity(n_residues);
    match style {
        PolymerStyle::Helix => helix_segment(rng, &mut backbone, n_residues, &mut budget)?,
        PolymerStyle::Coil => {
            backbone.push(Vector3::zeros());
            while backbone.len() < n_residues {
                walk_step(rng, &mut backbone, &mut budget)?;
            }
        }
        PolymerStyle::Mixed => {
            let mut helical = rng.gen_bool(0.5);
            while backbone.len() < n_residues {
                let len = rng.gen_range(4..=14).min(n_residues - backbone.len());
                if helical {
                    helix_segment(rng, &mut backbone, len, &mut budget)?;
                } else {
                    if backbone.is_empty() {
                        backbone.push(Vector3::zeros());
                    }
                    for _ in 0..len {
                        if backbone.len() < n_residues {
                            walk_step(rng, &mut backbone, &mut budget)?;
                        }
                    }
                }
                helical = !helical;
            }
        }
    }

    let n = n_residues * atoms_per_residue;
    let mut pc = PointCloud {
        coords: Vec::with_capacity(n),
        residue_index: Vec::with_capacity(n),
        backbone: Vec::with_capacity(n),
        chain: vec![0; n],
        atom_names: Some(Vec::with_capacity(n)),
        elements: Some(vec!["C".to_string(); n]),
    };
    for (i, b) in backbone.iter().enumerate() {
        pc.coords.push(p(*b));
        pc.residue_index.push(i as i32);
        pc.backbone.push(true);
        pc.atom_names.as_mut().expect("names").push("CA".into());
        // Outward direction: away from the chain neighbours, with jitter.
        let prev = if i > 0 { backbone[i - 1] } else { *b };
        let next = if i + 1 < backbone.len() { backbone[i + 1] } else { *b };
        let mut out = 2.0 * b - prev - next;
        if out.norm() < 1e-6 {
            out = Vector3::from(UnitSphere.sample(rng));
        }
        let mut cursor = *b;
        let mut dir = out.normalize();
        for name in SIDE_NAMES.iter().take(atoms_per_residue - 1) {
            let jitter: [f64; 3] = UnitSphere.sample(rng);
            dir = (dir + 0.5 * Vector3::from(jitter)).normalize();
            cursor += dir * rng.gen_range(1.0..=1.8);
            pc.coords.push(p(cursor));
            pc.residue_index.push(i as i32);
            pc.backbone.push(false);
            pc.atom_names.as_mut().expect("names").push((*name).into());
        }
    }
    pc.validate()?;
    Ok(pc)
}

/// A polymer whose atom count lies close to `target_atoms`, with a random
/// side-chain length in `1..=3` atoms and a random style.
pub fn synth_sized<R: Rng + ?Sized>(rng: &mut R, target_atoms: usize, style: Option<PolymerStyle>) -> Result<PointCloud> {
    let apr = rng.gen_range(2..=4);
    let n_residues = (target_atoms / apr).max(1);
    let style = style.unwrap_or_else(|| match rng.gen_range(0..3) {
        0 => PolymerStyle::Helix,
        1 => PolymerStyle::Coil,
        _ => PolymerStyle::Mixed,
    });
    synth_polymer(rng, n_residues, apr, style)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn backbone(pc: &PointCloud) -> Vec<Point> {
        pc.coords.iter().zip(&pc.backbone).filter(|(_, b)| **b).map(|(c, _)| *c).collect()
    }

    fn dist(a: &Point, b: &Point) -> f64 {
        (Vector3::from(*a) - Vector3::from(*b)).norm()
    }

    #[test]
    fn helix_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pc = synth_polymer(&mut rng, 10, 4, PolymerStyle::Helix).unwrap();
        assert_eq!(pc.len(), 40);
        let bb = backbone(&pc);
        let d0 = dist(&bb[0], &bb[1]);
        for w in bb.windows(2) {
            assert!((dist(&w[0], &w[1]) - d0).abs() < 1e-9);
        }
        assert!((d0 - 3.83).abs() < 0.05);
    }

    #[test]
    fn walk_is_self_avoiding() {
        for style in [PolymerStyle::Coil, PolymerStyle::Mixed] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let pc = synth_polymer(&mut rng, 150, 3, style).unwrap();
            let bb = backbone(&pc);
            assert_eq!(bb.len(), 150);
            for i in 0..bb.len() {
                for j in i + 1..bb.len() {
                    assert!(dist(&bb[i], &bb[j]) >= MIN_BACKBONE_DISTANCE - 1e-9);
                }
            }
        }
    }

    #[test]
    fn side_atoms_near_their_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pc = synth_polymer(&mut rng, 20, 3, PolymerStyle::Coil).unwrap();
        for i in 0..pc.len() {
            if !pc.backbone[i] {
                let d = dist(&pc.coords[i], &pc.coords[i - 1]);
                assert!((1.0 - 1e-9..=1.8 + 1e-9).contains(&d));
                assert_eq!(pc.residue_index[i], pc.residue_index[i - 1]);
            }
        }
        assert_eq!(pc.atom_names.as_ref().unwrap()[..3], ["CA", "CB", "CG"]);
    }

    #[test]
    fn reproducible() {
        let a = synth_polymer(&mut ChaCha8Rng::seed_from_u64(3), 30, 2, PolymerStyle::Mixed).unwrap();
        let b = synth_polymer(&mut ChaCha8Rng::seed_from_u64(3), 30, 2, PolymerStyle::Mixed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(synth_polymer(&mut rng, 0, 2, PolymerStyle::Helix).is_err());
        assert!(synth_polymer(&mut rng, 3, 9, PolymerStyle::Helix).is_err());
    }
}
