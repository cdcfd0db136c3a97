//! Token files: a compact little-endian binary layout and a whitespace text
//! layout carrying the same content.
//!
//! Binary: `b"STKN"`, `u16` version, `u16` dims, `dims x u16` levels, `u32`
//! record count; per record `u16` name length, UTF-8 name, `u32` atom count,
//! `u32` token count, `u16` ids.
//!
//! Text: a `structok-tokens 1` line, a `levels ...` line, then one record per
//! line as `name n_atoms id id ...`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{FsqSpec, TokenId};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STKN";
const VERSION: u16 = 1;
const TEXT_HEADER: &str = "structok-tokens 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenFormat {
    Binary,
    Text,
}

impl TokenFormat {
    /// `.txt` selects text; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") => TokenFormat::Text,
            _ => TokenFormat::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenRecord {
    pub name: String,
    pub n_atoms: usize,
    pub tokens: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenFile {
    pub spec: FsqSpec,
    pub records: Vec<TokenRecord>,
}

impl TokenFile {
    fn validate(&self) -> Result<()> {
        if self.spec.codebook_size() > 1 << 16 {
            return Err(Error::Format("token files store u16 ids; codebook exceeds 65536".into()));
        }
        if self.spec.levels().iter().any(|&l| l > u16::MAX as u32) {
            return Err(Error::Format("level exceeds u16".into()));
        }
        let size = self.spec.codebook_size();
        for r in &self.records {
            if let Some(id) = r.tokens.iter().find(|t| t.0 >= size) {
                return Err(Error::Format(format!("record {}: id {id} outside codebook", r.name)));
            }
            if r.name.len() > u16::MAX as usize || r.name.chars().any(char::is_whitespace) || r.name.is_empty() {
                return Err(Error::Format(format!("record name {:?} must be non-empty with no whitespace", r.name)));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.spec.dims() as u16).to_le_bytes());
        for &l in self.spec.levels() {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.n_atoms as u32).to_le_bytes());
            out.extend_from_slice(&(r.tokens.len() as u32).to_le_bytes());
            for t in &r.tokens {
                out.extend_from_slice(&(t.0 as u16).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        take(&mut cur, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a token file (bad magic)".into()));
        }
        let version = u16_le(&mut cur)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported token file version {version}")));
        }
        let dims = u16_le(&mut cur)? as usize;
        let levels = (0..dims).map(|_| u16_le(&mut cur).map(u32::from)).collect::<Result<Vec<_>>>()?;
        let spec = FsqSpec::new(levels)?;
        let n = u32_le(&mut cur)? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = u16_le(&mut cur)? as usize;
            let mut name = vec![0u8; name_len];
            take(&mut cur, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let n_atoms = u32_le(&mut cur)? as usize;
            let n_tokens = u32_le(&mut cur)? as usize;
            if cur.len() < 2 * n_tokens {
                return Err(Error::Format("truncated token record".into()));
            }
            let tokens = (0..n_tokens).map(|_| u16_le(&mut cur).map(|v| TokenId(v as u32))).collect::<Result<_>>()?;
            records.push(TokenRecord { name, n_atoms, tokens });
        }
        if !cur.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after token records", cur.len())));
        }
        let file = TokenFile { spec, records };
        file.validate()?;
        Ok(file)
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        writeln!(w, "{TEXT_HEADER}")?;
        let levels: Vec<String> = self.spec.levels().iter().map(u32::to_string).collect();
        writeln!(w, "levels {}", levels.join(" "))?;
        for r in &self.records {
            write!(w, "{} {}", r.name, r.n_atoms)?;
            for t in &r.tokens {
                write!(w, " {t}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(Error::Parse {
                    line: 0,
                    message: format!("missing {what}"),
                }),
            }
        };
        let (_, header) = next_line("header")?;
        if header.trim() != TEXT_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected {TEXT_HEADER:?}"),
            });
        }
        let (ln, levels_line) = next_line("levels line")?;
        let mut parts = levels_line.split_whitespace();
        if parts.next() != Some("levels") {
            return Err(Error::Parse {
                line: ln,
                message: "expected `levels ...`".into(),
            });
        }
        let levels = parts.map(|p| parse_num::<u32>(p, ln)).collect::<Result<Vec<_>>>()?;
        let spec = FsqSpec::new(levels)?;
        let mut records = Vec::new();
        while let Ok((ln, line)) = next_line("") {
            let mut parts = line.split_whitespace();
            let Some(name) = parts.next() else { continue };
            let n_atoms = parse_num::<usize>(parts.next().unwrap_or(""), ln)?;
            let tokens = parts.map(|p| parse_num::<u32>(p, ln).map(TokenId)).collect::<Result<_>>()?;
            records.push(TokenRecord {
                name: name.to_string(),
                n_atoms,
                tokens,
            });
        }
        let file = TokenFile { spec, records };
        file.validate()?;
        Ok(file)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("expected a non-negative integer, found {s:?}"),
    })
}

fn take(cur: &mut &[u8], out: &mut [u8]) -> Result<()> {
    if cur.len() < out.len() {
        return Err(Error::Format("truncated token file".into()));
    }
    let (head, tail) = cur.split_at(out.len());
    out.copy_from_slice(head);
    *cur = tail;
    Ok(())
}

fn u16_le(cur: &mut &[u8]) -> Result<u16> {
    let mut b = [0u8; 2];
    take(cur, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn u32_le(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    take(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tokens(path: &Path, file: &TokenFile, format: TokenFormat) -> Result<()> {
    let bytes = match format {
        TokenFormat::Binary => file.to_bytes()?,
        TokenFormat::Text => {
            let mut buf = Vec::new();
            file.write_text(&mut buf)?;
            buf
        }
    };
    fs::write(path, bytes).map_err(|e| Error::at_path(path, e))
}

/// Reads either layout, detected from the leading bytes.
pub fn read_tokens(path: &Path) -> Result<TokenFile> {
    let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
    if bytes.starts_with(MAGIC) {
        TokenFile::from_bytes(&bytes)
    } else {
        TokenFile::read_text(bytes.as_slice())
    }
}
