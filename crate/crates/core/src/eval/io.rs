//! Match lists and on-disk pair directories.
//!
//! A match file is text: a `# sobelkey matches v1 <n_a> <n_b>` header, then one
//! `i j similarity` line per match.
//!
//! A pair directory holds `<name>_a.<ext>`, `<name>_b.<ext>` and
//! `<name>_H.txt` (three rows of three numbers, A to B) per pair, where `ext`
//! is `pgm`, `ppm` or `png`. Pairs are read in name order; an identity
//! homography marks the pair as illumination-only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{EvalPair, Match, PairKind};
use crate::error::{Error, Result};
use crate::image::io::{read_gray, write_pgm};
use crate::image::Homography;

const MATCH_HEADER: &str = "# sobelkey matches v1";

/// Matches between `n_a` descriptors of A and `n_b` of B.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchList {
    pub n_a: usize,
    pub n_b: usize,
    pub matches: Vec<Match>,
}

impl MatchList {
    pub fn to_text(&self) -> String {
        let mut s = format!("{MATCH_HEADER} {} {}\n", self.n_a, self.n_b);
        for m in &self.matches {
            let _ = writeln!(s, "{} {} {:.6}", m.i, m.j, m.sim);
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::format(origin, format!("line {line}: {detail}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let rest = header
            .strip_prefix(MATCH_HEADER)
            .ok_or_else(|| bad(1, format!("expected `{MATCH_HEADER} N_A N_B` header")))?;
        let dims: Vec<usize> = rest
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(1, format!("bad count `{t}`"))))
            .collect::<Result<_>>()?;
        let [n_a, n_b] = dims[..] else {
            return Err(bad(1, "header must carry both descriptor counts".into()));
        };
        let mut matches = Vec::new();
        for (k, line) in lines.enumerate() {
            let n = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let [i, j, sim] = f[..] else {
                return Err(bad(n, format!("expected 3 fields, found {}", f.len())));
            };
            let i: usize = i.parse().map_err(|_| bad(n, format!("bad index `{i}`")))?;
            let j: usize = j.parse().map_err(|_| bad(n, format!("bad index `{j}`")))?;
            let sim: f64 = sim.parse().map_err(|_| bad(n, format!("bad similarity `{sim}`")))?;
            if i >= n_a || j >= n_b {
                return Err(bad(n, format!("index pair ({i}, {j}) outside {n_a} x {n_b}")));
            }
            matches.push(Match { i, j, sim });
        }
        Ok(MatchList { n_a, n_b, matches })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

pub fn homography_to_text(h: &Homography) -> String {
    let mut s = String::new();
    for row in h.rows() {
        let _ = writeln!(s, "{:e} {:e} {:e}", row[0], row[1], row[2]);
    }
    s
}

pub fn parse_homography(text: &str, origin: &Path) -> Result<Homography> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(origin, format!("bad number `{t}`"))))
        .collect::<Result<_>>()?;
    if vals.len() != 9 {
        return Err(Error::format(origin, format!("expected 9 numbers, found {}", vals.len())));
    }
    let mut rows = [[0.0; 3]; 3];
    for (k, v) in vals.into_iter().enumerate() {
        rows[k / 3][k % 3] = v;
    }
    Homography::from_rows(rows)
}

#[derive(Default)]
struct PairFiles {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    h: Option<PathBuf>,
}

/// Reads every pair of a pair directory.
pub fn load_pair_dir(dir: impl AsRef<Path>) -> Result<Vec<EvalPair>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: BTreeMap<String, PairFiles> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix("_H.txt") {
            found.entry(stem.to_owned()).or_default().h = Some(path);
            continue;
        }
        let Some((base, ext)) = name.rsplit_once('.') else {
            continue;
        };
        if !matches!(ext.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "png") {
            continue;
        }
        if let Some(stem) = base.strip_suffix("_a") {
            found.entry(stem.to_owned()).or_default().a = Some(path);
        } else if let Some(stem) = base.strip_suffix("_b") {
            found.entry(stem.to_owned()).or_default().b = Some(path);
        }
    }
    let mut pairs = Vec::with_capacity(found.len());
    for (stem, files) in found {
        let missing = |what: &str| Error::format(dir, format!("pair `{stem}` has no {what}"));
        let a = read_gray(files.a.ok_or_else(|| missing("image A"))?)?;
        let b = read_gray(files.b.ok_or_else(|| missing("image B"))?)?;
        let h_path = files.h.ok_or_else(|| missing("homography"))?;
        let text = std::fs::read_to_string(&h_path).map_err(|e| Error::io(&h_path, e))?;
        let h = parse_homography(&text, &h_path)?;
        let kind = if h.max_abs_diff(&Homography::identity()) == 0.0 {
            PairKind::Illumination
        } else {
            PairKind::Viewpoint
        };
        pairs.push(EvalPair::new(a, b, h, kind).map_err(|e| Error::format(dir.join(&stem), e.to_string()))?);
    }
    if pairs.is_empty() {
        return Err(Error::format(dir, "no image pairs found"));
    }
    Ok(pairs)
}

/// Writes pairs as `0000_a.pgm`, `0000_b.pgm`, `0000_H.txt`, ...
pub fn write_pair_dir(dir: impl AsRef<Path>, pairs: &[EvalPair]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, p) in pairs.iter().enumerate() {
        write_pgm(dir.join(format!("{k:04}_a.pgm")), &p.a)?;
        write_pgm(dir.join(format!("{k:04}_b.pgm")), &p.b)?;
        let h_path = dir.join(format!("{k:04}_H.txt"));
        std::fs::write(&h_path, homography_to_text(&p.homography)).map_err(|e| Error::io(&h_path, e))?;
    }
    Ok(())
}
