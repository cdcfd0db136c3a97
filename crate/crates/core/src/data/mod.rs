//! Structure ingestion, dataset manifests and synthetic polymers.

mod pdb;
mod synth;
mod xyz;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pdb::{is_backbone, parse_pdb, write_pdb, PdbParse};
pub use synth::{synth_polymer, synth_sized, PolymerStyle, MAX_RETRIES, MIN_BACKBONE_DISTANCE};
pub use xyz::{parse_xyz, write_xyz};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Protein,
    Rna,
    Molecule,
    Complex,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub kind: StructureKind,
}

/// TOML schema:
///
/// ```toml
/// seed = 7
/// [[entries]]
/// path = "a.pdb"
/// split = "train"
/// kind = "protein"
/// ```
///
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

/// A loaded structure with the name used in token files and reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub name: String,
    pub kind: StructureKind,
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifests {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        let mut m = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::at_path(path, e))
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashMap::new();
        for e in &self.entries {
            if let Some(prev) = seen.insert(&e.path, e.split) {
                if prev != e.split {
                    return Err(Error::Config(format!("{} appears in more than one split", e.path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn with_split(&self, split: Split) -> Self {
        DatasetManifest {
            seed: self.seed,
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
        }
    }

    /// Loads every entry in manifest order. Files are parsed in parallel.
    pub fn load_structures(&self) -> Result<Vec<Structure>> {
        for e in &self.entries {
            if !e.path.exists() {
                return Err(Error::at_path(&e.path, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        self.entries.par_iter().map(|e| load_structure(&e.path, e.kind)).collect()
    }
}

/// Reads `.pdb`/`.ent` (first model) or `.xyz` files.
pub fn load_structure(path: &Path, kind: StructureKind) -> Result<Structure> {
    let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let cloud = match ext.as_str() {
        "xyz" => parse_xyz(&text)?,
        "pdb" | "ent" => parse_pdb(&text)?.models.swap_remove(0),
        _ => return Err(Error::Format(format!("{}: unsupported structure format", path.display()))),
    };
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("structure").to_string();
    Ok(Structure { name, kind, cloud })
}

fn rounded_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Shuffles all entries with `seed` and partitions them into
/// train/val/test by `fractions`, which must sum to one.
pub fn split(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<SplitManifests> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut entries = manifest.entries.clone();
    entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes = rounded_sizes(entries.len(), fractions);
    let mut rest = entries.into_iter();
    let mut take = |n: usize, split: Split| {
        let entries: Vec<ManifestEntry> = rest.by_ref().take(n).map(|e| ManifestEntry { split, ..e }).collect();
        if entries.is_empty() {
            log::warn!("{split:?} split is empty");
        }
        DatasetManifest { seed, entries }
    };
    Ok(SplitManifests {
        train: take(sizes[0], Split::Train),
        val: take(sizes[1], Split::Val),
        test: take(sizes[2], Split::Test),
    })
}

/// In-memory synthetic dataset. Structure `i` draws from its own ChaCha8
/// stream, so the set is independent of generation order and thread count.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    atoms: std::ops::RangeInclusive<usize>,
    style: Option<PolymerStyle>,
) -> Result<Vec<Structure>> {
    if atoms.is_empty() || *atoms.start() == 0 {
        return Err(Error::invalid("atom range must be non-empty and positive"));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let target = rng.gen_range(atoms.clone());
            let mut cloud = synth_sized(&mut rng, target, style)?;
            // Residue lengths do not always divide the target; trim or
            // regrow so the cloud stays inside the configured range.
            while cloud.len() < *atoms.start() {
                cloud = synth_sized(&mut rng, target + 4, style)?;
            }
            while cloud.len() > *atoms.end() {
                let last = cloud.len() - 1;
                cloud = cloud.without_atom(last)?;
            }
            Ok(Structure {
                name: format!("synth_{i:05}"),
                kind: StructureKind::Synthetic,
                cloud,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            seed: 0,
            entries: (0..n)
                .map(|i| ManifestEntry {
                    path: PathBuf::from(format!("s{i}.pdb")),
                    split: Split::Train,
                    kind: StructureKind::Synthetic,
                })
                .collect(),
        }
    }

    #[test]
    fn split_sizes() {
        let s = split(&manifest(10), [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.entries.len(), s.val.entries.len(), s.test.entries.len()), (8, 1, 1));
        assert!(s.val.entries.iter().all(|e| e.split == Split::Val));
        let mut all: Vec<_> = [&s.train, &s.val, &s.test].iter().flat_map(|m| m.entries.iter().map(|e| e.path.clone())).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
        assert!(split(&manifest(10), [0.8, 0.1, 0.2], 3).is_err());
    }

    #[test]
    fn split_seeding() {
        let m = manifest(10);
        assert_eq!(split(&m, [0.8, 0.1, 0.1], 9).unwrap(), split(&m, [0.8, 0.1, 0.1], 9).unwrap());
        let order = |seed| {
            split(&m, [1.0, 0.0, 0.0], seed).unwrap().train.entries.into_iter().map(|e| e.path).collect::<Vec<_>>()
        };
        let base = order(0);
        let collisions = (1..=100).filter(|&s| order(s) == base).count();
        assert!(collisions <= 1, "{collisions} seeds repeated the permutation");
    }

    #[test]
    fn manifest_toml() {
        let text = "seed = 4\n[[entries]]\npath = \"a.pdb\"\nsplit = \"val\"\nkind = \"rna\"\n";
        let m = DatasetManifest::from_toml(text).unwrap();
        assert_eq!(m.entries[0].kind, StructureKind::Rna);
        assert_eq!(DatasetManifest::from_toml(&m.to_toml().unwrap()).unwrap(), m);
        let dup = format!("{text}[[entries]]\npath = \"a.pdb\"\nsplit = \"test\"\nkind = \"rna\"\n");
        assert!(DatasetManifest::from_toml(&dup).is_err());
        assert!(DatasetManifest::from_toml("entries = 3").is_err());
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.xyz"), "2\n\nC 0 0 0\nO 1.2 0 0\n").unwrap();
        let s = synth_polymer(&mut ChaCha8Rng::seed_from_u64(0), 5, 2, PolymerStyle::Helix).unwrap();
        fs::write(dir.path().join("p.pdb"), write_pdb(&s)).unwrap();
        let text = "[[entries]]\npath = \"m.xyz\"\nsplit = \"train\"\nkind = \"molecule\"\n\
                    [[entries]]\npath = \"p.pdb\"\nsplit = \"test\"\nkind = \"synthetic\"\n";
        fs::write(dir.path().join("set.toml"), text).unwrap();
        let m = DatasetManifest::load(&dir.path().join("set.toml")).unwrap();
        let loaded = m.load_structures().unwrap();
        assert_eq!(loaded[0].cloud.len(), 2);
        assert_eq!(loaded[1].name, "p");
        assert_eq!(loaded[1].cloud.len(), 10);
        assert_eq!(m.with_split(Split::Test).entries.len(), 1);

        let missing = DatasetManifest::from_toml("[[entries]]\npath = \"/nope.pdb\"\nsplit = \"train\"\nkind = \"protein\"\n").unwrap();
        assert!(matches!(missing.load_structures(), Err(Error::Path { .. })));
    }

    #[test]
    fn synthetic_sizes_and_determinism() {
        let a = synth_dataset(5, 40, 100..=500, None).unwrap();
        assert!(a.iter().all(|s| (100..=500).contains(&s.cloud.len())));
        let b = synth_dataset(5, 40, 100..=500, None).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(6, 40, 100..=500, None).unwrap();
        assert_ne!(a[0].cloud, c[0].cloud);
    }
}
