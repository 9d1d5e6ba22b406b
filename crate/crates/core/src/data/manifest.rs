//! Directory datasets: one raster per sample plus a plain-text manifest with
//! one `path<TAB>modality<TAB>label` line per sample. Paths are relative to
//! the manifest's directory; a label of `-1` means unlabeled.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{modality, read_raster, SpectralImage};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub modality: String,
    pub label: Option<u32>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let [p, m, l] = fields.as_slice() else {
                return Err(Error::Malformed(format!("{}:{}: expected 3 tab-separated fields", path.display(), n + 1)));
            };
            let label = match l.trim() {
                "" | "-1" => None,
                s => Some(s.parse::<u32>().map_err(|_| {
                    Error::Malformed(format!("{}:{}: bad label {s:?}", path.display(), n + 1))
                })?),
            };
            Ok(ManifestEntry { path: p.to_string(), modality: m.to_string(), label })
        })
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        let label = e.label.map_or(-1, |l| l as i64);
        writeln!(text, "{}\t{}\t{}", e.path, e.modality, label).expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct Sample {
    /// Manifest path of the sample, used in diagnostics.
    pub id: String,
    pub image: SpectralImage,
}

/// Samples held in memory.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    /// Loads every raster listed in a manifest. Modality names must be
    /// built-in and channel counts must match them.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let root: PathBuf = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut samples = Vec::new();
        for entry in read_manifest(manifest)? {
            let spec = modality(&entry.modality)?;
            let image = read_raster(root.join(&entry.path), &entry.modality)?;
            if image.channels() != spec.channels {
                return Err(Error::Malformed(format!(
                    "{}: {} channels, modality {} has {}",
                    entry.path,
                    image.channels(),
                    spec.name,
                    spec.channels
                )));
            }
            if image.label != entry.label {
                return Err(Error::Malformed(format!(
                    "{}: manifest label {:?} disagrees with file label {:?}",
                    entry.path, entry.label, image.label
                )));
            }
            samples.push(Sample { id: entry.path, image });
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &SpectralImage> {
        self.samples.iter().map(|s| &s.image)
    }

    /// Labels of every sample, failing on the first unlabeled one.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| s.image.label.map(|l| l as usize).ok_or_else(|| Error::MissingLabel(s.id.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_sample, write_raster};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn load_and_reject_unknown_modality() {
        let dir = tempfile::tempdir().unwrap();
        let spec = modality("gaofen").unwrap();
        let img = synth_sample(&spec, 16, 16, 1, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        write_raster(dir.path().join("a.dofa"), &img).unwrap();
        let entries = vec![ManifestEntry { path: "a.dofa".into(), modality: "gaofen".into(), label: Some(1) }];
        write_manifest(dir.path().join("m.tsv"), &entries).unwrap();
        assert_eq!(read_manifest(dir.path().join("m.tsv")).unwrap(), entries);
        let ds = Dataset::load(dir.path().join("m.tsv")).unwrap();
        assert_eq!(ds.samples[0].image, img);
        assert_eq!(ds.labels().unwrap(), vec![1]);

        let bad = vec![ManifestEntry { path: "a.dofa".into(), modality: "landsat".into(), label: Some(1) }];
        write_manifest(dir.path().join("bad.tsv"), &bad).unwrap();
        assert!(matches!(Dataset::load(dir.path().join("bad.tsv")), Err(Error::UnknownModality(_))));
    }

    #[test]
    fn malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "a.dofa\tnaip\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Malformed(_))));
        std::fs::write(&p, "a.dofa\tnaip\tx\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Malformed(_))));
    }
}
