//! Fixed-column PDB reading (ATOM/HETATM/MODEL/ENDMDL) and writing.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Parsed models plus the number of malformed coordinate records skipped.
#[derive(Clone, Debug)]
pub struct PdbParse {
    pub models: Vec<PointCloud>,
    pub skipped: usize,
}

const PROTEIN_BACKBONE: &[&str] = &["N", "CA", "C", "O", "OXT"];
const NUCLEIC_BACKBONE: &[&str] = &[
    "P", "OP1", "OP2", "OP3", "O1P", "O2P", "O5'", "C5'", "C4'", "O4'", "C3'", "O3'", "C2'", "O2'", "C1'",
];

pub fn is_backbone(name: &str) -> bool {
    PROTEIN_BACKBONE.contains(&name) || NUCLEIC_BACKBONE.contains(&name.replace('*', "'").as_str())
}

struct Atom {
    key: (char, i32, char, String, String),
    chain: char,
    res_seq: i32,
    icode: char,
    name: String,
    element: String,
    occupancy: f64,
    coord: [f64; 3],
}

fn column(line: &str, from: usize, to: usize) -> &str {
    let to = to.min(line.len());
    if from >= to {
        return "";
    }
    line.get(from..to).unwrap_or("").trim()
}

fn element_of(name: &str, explicit: &str) -> String {
    if !explicit.is_empty() {
        return explicit.to_ascii_uppercase();
    }
    name.chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

fn parse_atom(line: &str) -> Option<Atom> {
    if !line.is_char_boundary(line.len().min(54)) {
        return None;
    }
    let name = column(line, 12, 16).to_string();
    let res_name = column(line, 17, 20).to_string();
    let chain = line.get(21..22).and_then(|s| s.chars().next()).unwrap_or(' ');
    let res_seq = column(line, 22, 26).parse().ok()?;
    let icode = line.get(26..27).and_then(|s| s.chars().next()).unwrap_or(' ');
    let x: f64 = column(line, 30, 38).parse().ok()?;
    let y: f64 = column(line, 38, 46).parse().ok()?;
    let z: f64 = column(line, 46, 54).parse().ok()?;
    if name.is_empty() || ![x, y, z].iter().all(|v| v.is_finite()) {
        return None;
    }
    let occupancy = column(line, 54, 60).parse().unwrap_or(1.0);
    let element = element_of(&name, column(line, 76, 78));
    Some(Atom {
        key: (chain, res_seq, icode, res_name, name.clone()),
        chain,
        res_seq,
        icode,
        name,
        element,
        occupancy,
        coord: [x, y, z],
    })
}

fn finish_model(atoms: Vec<Atom>) -> Option<PointCloud> {
    // Alternate locations: keep the highest occupancy, first on ties, at the
    // position of the first occurrence.
    let mut slot: HashMap<(char, i32, char, String, String), usize> = HashMap::new();
    let mut kept: Vec<Atom> = Vec::new();
    for a in atoms {
        match slot.get(&a.key) {
            Some(&i) => {
                if a.occupancy > kept[i].occupancy {
                    kept[i] = a;
                }
            }
            None => {
                slot.insert(a.key.clone(), kept.len());
                kept.push(a);
            }
        }
    }
    if kept.is_empty() {
        return None;
    }
    let mut chain_ids: HashMap<char, u16> = HashMap::new();
    let mut residue_counter: HashMap<u16, (i32, (i32, char))> = HashMap::new();
    let mut pc = PointCloud {
        coords: Vec::with_capacity(kept.len()),
        residue_index: Vec::with_capacity(kept.len()),
        backbone: Vec::with_capacity(kept.len()),
        chain: Vec::with_capacity(kept.len()),
        atom_names: Some(Vec::with_capacity(kept.len())),
        elements: Some(Vec::with_capacity(kept.len())),
    };
    for a in kept {
        let next = chain_ids.len() as u16;
        let chain = *chain_ids.entry(a.chain).or_insert(next);
        let id = (a.res_seq, a.icode);
        let entry = residue_counter.entry(chain).or_insert((0, id));
        if entry.1 != id {
            *entry = (entry.0 + 1, id);
        }
        pc.coords.push(a.coord);
        pc.residue_index.push(entry.0);
        pc.backbone.push(is_backbone(&a.name));
        pc.chain.push(chain);
        pc.atom_names.as_mut().expect("names").push(a.name);
        pc.elements.as_mut().expect("elements").push(a.element);
    }
    Some(pc)
}

/// Heavy atoms of every model. Waters (`HOH`, `WAT`) and hydrogens
/// (`H`, `D`) are dropped; ligands are kept. Residues are renumbered per
/// chain in file order, so insertion codes become distinct residues.
pub fn parse_pdb(text: &str) -> Result<PdbParse> {
    let mut models = Vec::new();
    let mut current: Vec<Atom> = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        let record = line.get(..6).unwrap_or(line).trim_end();
        match record {
            "ATOM" | "HETATM" => {
                let Some(atom) = parse_atom(line) else {
                    skipped += 1;
                    continue;
                };
                let res_name = &atom.key.3;
                if res_name == "HOH" || res_name == "WAT" || atom.element == "H" || atom.element == "D" {
                    continue;
                }
                current.push(atom);
            }
            "ENDMDL" => {
                if let Some(pc) = finish_model(std::mem::take(&mut current)) {
                    models.push(pc);
                }
            }
            _ => {}
        }
    }
    if let Some(pc) = finish_model(current) {
        models.push(pc);
    }
    if models.is_empty() {
        return Err(Error::Empty("PDB text has no heavy-atom records".into()));
    }
    for m in &models {
        m.validate()?;
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed PDB coordinate records");
    }
    Ok(PdbParse { models, skipped })
}

/// Writes one model as ATOM records. Residue names are `UNK`.
pub fn write_pdb(pc: &PointCloud) -> String {
    let mut out = String::new();
    for (i, p) in pc.coords.iter().enumerate() {
        let name = pc.atom_names.as_ref().map(|n| n[i].as_str()).unwrap_or("X");
        let element = pc
            .elements
            .as_ref()
            .map(|e| e[i].clone())
            .unwrap_or_else(|| element_of(name, ""));
        // Four-character names start in column 13, shorter ones in 14.
        let padded = if name.len() >= 4 { format!("{name:<4}") } else { format!(" {name:<3}") };
        let chain = (b'A' + (pc.chain[i] % 26) as u8) as char;
        let _ = writeln!(
            out,
            "ATOM  {:>5} {padded} UNK {chain}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
            (i + 1) % 100_000,
            (pc.residue_index[i] + 1) % 10_000,
            p[0],
            p[1],
            p[2],
            1.0,
            0.0,
            element
        );
    }
    out.push_str("END\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "\
ATOM      1  N   GLY A   1      11.104   6.134  -6.504  1.00  0.00           N
ATOM      2  CA  GLY A   1      11.639   6.071  -5.147  1.00  0.00           C
ATOM      3  C   GLY A   1      12.797   7.095  -5.033  1.00  0.00           C
";

    #[test]
    fn minimal_fixture() {
        let p = parse_pdb(THREE).unwrap();
        assert_eq!(p.models.len(), 1);
        let m = &p.models[0];
        assert_eq!(m.coords, vec![[11.104, 6.134, -6.504], [11.639, 6.071, -5.147], [12.797, 7.095, -5.033]]);
        assert_eq!(m.backbone, vec![true; 3]);
        assert_eq!(m.atom_names.as_ref().unwrap()[1], "CA");
    }

    #[test]
    fn hydrogens_and_water_dropped() {
        let text = format!(
            "{THREE}ATOM      4  O   GLY A   1      13.200   7.300  -4.000  1.00  0.00           O
ATOM      5  CB  ALA A   2      10.000   5.000  -4.000  1.00  0.00           C
ATOM      6  H   ALA A   2      10.500   5.500  -4.500  1.00  0.00           H
ATOM      7  HA  ALA A   2      10.700   5.100  -4.200  1.00  0.00           H
HETATM    8  O   HOH A 101       1.000   1.000   1.000  1.00  0.00           O
"
        );
        let m = &parse_pdb(&text).unwrap().models[0];
        assert_eq!(m.len(), 5);
        assert_eq!(m.residue_index, vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn altloc_highest_occupancy() {
        let text = "\
ATOM      1  CA AGLY A   1       1.000   0.000   0.000  0.60  0.00           C
ATOM      2  CA BGLY A   1       2.000   0.000   0.000  0.40  0.00           C
ATOM      3  CB  GLY A   1       3.000   0.000   0.000  1.00  0.00           C
";
        let m = &parse_pdb(text).unwrap().models[0];
        assert_eq!(m.coords, vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let swapped = text.replace("0.60", "0.30");
        assert_eq!(parse_pdb(&swapped).unwrap().models[0].coords[0], [2.0, 0.0, 0.0]);
    }

    #[test]
    fn models_chains_and_bad_records() {
        let text = "\
MODEL        1
ATOM      1  CA  GLY A   1       1.000   0.000   0.000  1.00  0.00           C
ATOM      2  CA  GLY B   1       2.000   0.000   0.000  1.00  0.00           C
ATOM      3  CA  GLY B   1A      4.000   0.000   0.000  1.00  0.00           C
ENDMDL
MODEL        2
ATOM      1  CA  GLY A   1       1.500   0.000   0.000  1.00  0.00           C
ATOM      2  CA  GLY A   1       garbage
ENDMDL
";
        let p = parse_pdb(text).unwrap();
        assert_eq!(p.models.len(), 2);
        assert_eq!(p.skipped, 1);
        assert_eq!(p.models[0].chain, vec![0, 1, 1]);
        assert_eq!(p.models[0].residue_index, vec![0, 0, 1]);
        assert!(parse_pdb("HEADER nothing\n").is_err());
    }

    #[test]
    fn write_then_parse() {
        let m = parse_pdb(THREE).unwrap().models.remove(0);
        let back = parse_pdb(&write_pdb(&m)).unwrap().models.remove(0);
        assert_eq!(back.coords, m.coords);
        assert_eq!(back.atom_names, m.atom_names);
        assert_eq!(back.residue_index, m.residue_index);
    }
}
