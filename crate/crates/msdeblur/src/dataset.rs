//! Dataset directories: `blur/`, `sharp/` and a `manifest.txt` with one
//! line per pair: `blur-path sharp-path start len gamma`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msdeblur_core::blur::{BlurPair, Provenance};

use crate::imageio::{read_image, write_png};

pub const MANIFEST: &str = "manifest.txt";
const HEADER: &str = "# blur sharp start len gamma";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub blur: String,
    pub sharp: String,
    pub provenance: Provenance,
}

impl ManifestEntry {
    fn line(&self) -> String {
        let p = &self.provenance;
        format!("{} {} {} {} {}", self.blur, self.sharp, p.start, p.len, p.gamma)
    }

    fn parse(line: &str, number: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            bail!("manifest line {number}: expected 5 fields, found {}", fields.len());
        }
        let ctx = || format!("manifest line {number}");
        Ok(ManifestEntry {
            blur: fields[0].to_string(),
            sharp: fields[1].to_string(),
            provenance: Provenance {
                start: fields[2].parse().with_context(ctx)?,
                len: fields[3].parse().with_context(ctx)?,
                gamma: fields[4].parse().with_context(ctx)?,
            },
        })
    }
}

/// Writes all pairs as PNGs and the manifest.
pub fn write_dataset(dir: &Path, pairs: &[BlurPair]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir.join("blur"))?;
    fs::create_dir_all(dir.join("sharp"))?;
    let mut entries = Vec::with_capacity(pairs.len());
    let mut text = String::from(HEADER);
    text.push('\n');
    for (i, pair) in pairs.iter().enumerate() {
        let entry = ManifestEntry {
            blur: format!("blur/{i:05}.png"),
            sharp: format!("sharp/{i:05}.png"),
            provenance: pair.provenance,
        };
        write_png(&dir.join(&entry.blur), &pair.blurry)?;
        write_png(&dir.join(&entry.sharp), &pair.sharp)?;
        text.push_str(&entry.line());
        text.push('\n');
        entries.push(entry);
    }
    fs::write(dir.join(MANIFEST), text)?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| ManifestEntry::parse(l, i + 1))
        .collect()
}

pub fn entry_paths(dir: &Path, entry: &ManifestEntry) -> (PathBuf, PathBuf) {
    (dir.join(&entry.blur), dir.join(&entry.sharp))
}

pub fn load_pair(dir: &Path, entry: &ManifestEntry) -> Result<BlurPair> {
    let (b, s) = entry_paths(dir, entry);
    let blurry = read_image(&b)?;
    let sharp = read_image(&s)?;
    if blurry.shape() != sharp.shape() {
        bail!("{} is {} but {} is {}", entry.blur, blurry.shape(), entry.sharp, sharp.shape());
    }
    Ok(BlurPair {
        blurry,
        sharp,
        provenance: entry.provenance,
    })
}

/// Loads every pair, failing on the first unreadable one.
pub fn load_dataset(dir: &Path) -> Result<Vec<BlurPair>> {
    let entries = read_manifest(dir)?;
    if entries.is_empty() {
        bail!("{} lists no pairs", dir.join(MANIFEST).display());
    }
    entries.iter().map(|e| load_pair(dir, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use msdeblur_core::{Shape, Tensor};

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = |v: f64| Tensor::full(Shape::new(1, 3, 4, 6), v);
        let pairs: Vec<BlurPair> = (0..3)
            .map(|i| BlurPair {
                blurry: img(i as f64 / 255.0),
                sharp: img((i + 10) as f64 / 255.0),
                provenance: Provenance {
                    start: 2 * i,
                    len: 7,
                    gamma: 2.2,
                },
            })
            .collect();
        let written = write_dataset(dir.path(), &pairs).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), written);
        assert_eq!(load_dataset(dir.path()).unwrap(), pairs);
    }

    #[test]
    fn malformed_lines_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "a b 1 2\n").unwrap();
        let err = read_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
