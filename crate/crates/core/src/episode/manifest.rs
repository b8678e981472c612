//! Dataset manifest: one `split scene path` line per episode, paths relative
//! to the manifest's directory.
//!
//! ```text
//! # panelbench manifest v1
//! train desk episodes/ep_00000.pnlb
//! val desk episodes/ep_00001.pnlb
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{read_episode, EpisodeRecord};
use crate::error::{Error, Result};
use crate::sim::SceneId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub scene: SceneId,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

const HEADER: &str = "# panelbench manifest v1";

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), entries: Vec::new() }
    }

    pub fn push(&mut self, split: Split, scene: SceneId, path: impl Into<PathBuf>) {
        self.entries.push(ManifestEntry { split, scene, path: path.into() });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts_per_scene(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.scene.name()).or_insert(0) += 1;
        }
        m
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", e.split.name(), e.scene.name(), e.path.display()));
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut m = Self::new(root);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = || format!("manifest line {}", i + 1);
            let mut parts = line.splitn(3, ' ');
            let (Some(split), Some(scene), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config { location: loc(), reason: "expected `split scene path`".into() });
            };
            let split = match split {
                "train" => Split::Train,
                "val" => Split::Val,
                other => return Err(Error::Config { location: loc(), reason: format!("unknown split {other:?}") }),
            };
            let scene = SceneId::parse(scene).map_err(|e| Error::Config { location: loc(), reason: e.to_string() })?;
            m.push(split, scene, path);
        }
        let mut seen = std::collections::HashSet::new();
        for e in &m.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Config { location: "manifest".into(), reason: format!("{} listed twice", e.path.display()) });
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Load a manifest file, or the `manifest.txt` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join("manifest.txt") } else { path.to_path_buf() };
        if !file.exists() {
            return Err(Error::DatasetNotFound(file));
        }
        let text = std::fs::read_to_string(&file)?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &root)
    }

    /// Every listed file exists.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(Error::DatasetNotFound(p));
            }
        }
        Ok(())
    }

    pub fn read_split(&self, split: Split) -> Result<Vec<EpisodeRecord>> {
        self.split(split).map(|e| read_episode(&self.resolve(e))).collect()
    }

    pub fn read_all(&self) -> Result<Vec<(Split, EpisodeRecord)>> {
        self.entries.iter().map(|e| Ok((e.split, read_episode(&self.resolve(e))?))).collect()
    }
}

/// Draw `n` entries uniformly without replacement, keeping their split
/// labels and manifest order. Each `n` is an independent draw: subsets for
/// different `n` under one seed are not nested.
pub fn subset(manifest: &DatasetManifest, n: usize, seed: u64) -> Result<DatasetManifest> {
    if n > manifest.len() {
        return Err(Error::invalid("subset size", format!("{n} exceeds {} episodes", manifest.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, manifest.len(), n).into_vec();
    idx.sort_unstable();
    Ok(DatasetManifest { root: manifest.root.clone(), entries: idx.into_iter().map(|i| manifest.entries[i].clone()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make(n: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new("/data");
        for i in 0..n {
            let split = if i % 5 == 4 { Split::Val } else { Split::Train };
            m.push(split, if i % 3 == 0 { SceneId::Ground } else { SceneId::Desk }, format!("episodes/ep_{i:05}.pnlb"));
        }
        m
    }

    #[test]
    fn text_round_trip_and_counts() {
        let m = make(12);
        let back = DatasetManifest::parse(&m.to_text(), Path::new("/data")).unwrap();
        assert_eq!(back, m);
        let c = m.counts_per_scene();
        assert_eq!(c["ground"] + c["desk"], 12);
        assert_eq!(m.split(Split::Val).count(), 2);
        assert!(DatasetManifest::parse("test desk a\n", Path::new("/")).is_err());
        assert!(DatasetManifest::parse("train desk a\nval desk a\n", Path::new("/")).is_err());
    }

    #[test]
    fn subset_edge_cases_and_determinism() {
        let m = make(30);
        assert_eq!(subset(&m, 30, 9).unwrap(), m);
        assert!(subset(&m, 0, 9).unwrap().is_empty());
        assert_eq!(subset(&m, 10, 3).unwrap(), subset(&m, 10, 3).unwrap());
        assert_ne!(subset(&m, 10, 3).unwrap(), subset(&m, 10, 4).unwrap());
        assert!(subset(&m, 31, 0).is_err());
    }

    #[test]
    fn missing_manifest_is_dataset_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::DatasetNotFound(_))));
        let m = make(2);
        let mut local = m.clone();
        local.root = dir.path().to_path_buf();
        assert!(matches!(local.validate(), Err(Error::DatasetNotFound(_))));
    }
}
