use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Count-header XYZ; hydrogens are dropped and the molecule forms one group.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    let count: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "expected atom count".into(),
        })?;
    lines.next();
    let mut coords = Vec::new();
    let mut elements = Vec::new();
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if seen == count {
            return Err(Error::Parse {
                line: i + 3,
                message: format!("more atom lines than the declared {count}"),
            });
        }
        seen += 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Parse {
            line: i + 3,
            message: format!("expected `element x y z`, found {line:?}"),
        };
        if parts.len() < 4 {
            return Err(bad());
        }
        let xyz: Vec<f64> = parts[1..4].iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let element: String = parts[0].chars().take_while(|c| c.is_ascii_alphabetic()).collect();
        let upper = element.to_ascii_uppercase();
        if upper == "H" || upper == "D" {
            continue;
        }
        coords.push([xyz[0], xyz[1], xyz[2]]);
        elements.push(element);
    }
    if seen != count {
        return Err(Error::Parse {
            line: 0,
            message: format!("declared {count} atoms, found {seen}"),
        });
    }
    let mut pc = PointCloud::from_coords(coords)?;
    pc.atom_names = Some(elements.clone());
    pc.elements = Some(elements);
    Ok(pc)
}

pub fn write_xyz(pc: &PointCloud, comment: &str) -> String {
    let mut out = format!("{}\n{}\n", pc.len(), comment.replace('\n', " "));
    for (i, p) in pc.coords.iter().enumerate() {
        let el = pc.elements.as_ref().map(|e| e[i].as_str()).unwrap_or("X");
        let _ = writeln!(out, "{el} {:.6} {:.6} {:.6}", p[0], p[1], p[2]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn water_and_methane() {
        let water = "3\nwater\nO 0.0 0.0 0.117\nH 0.0 0.757 -0.467\nH 0.0 -0.757 -0.467\n";
        assert_eq!(parse_xyz(water).unwrap().len(), 1);
        let methane = "5\n\nC 0 0 0\nH 0.63 0.63 0.63\nH -0.63 -0.63 0.63\nH -0.63 0.63 -0.63\nH 0.63 -0.63 -0.63\n";
        let m = parse_xyz(methane).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.elements.unwrap(), vec!["C"]);
    }

    #[test]
    fn count_mismatch() {
        assert!(parse_xyz("2\n\nC 0 0 0\n").is_err());
        assert!(parse_xyz("1\n\nC 0 0 0\nN 1 1 1\n").is_err());
        assert!(parse_xyz("1\n\nC 0 zero 0\n").is_err());
    }

    #[test]
    fn round_trip() {
        let pc = parse_xyz("2\nx\nC 1.25 -2.5 3.125\nN 0.5 0.25 -0.75\n").unwrap();
        let back = parse_xyz(&write_xyz(&pc, "again")).unwrap();
        assert_eq!(back.coords, pc.coords);
    }
}
