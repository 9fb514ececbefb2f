//! Dataset loading, split assignment, and the split manifest.
//!
//! The split discipline is the load-bearing invariant: images attacked during
//! evaluation are disjoint from the images used to train the substitute and
//! the adversary generator.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::io::load_image;
use crate::image::tensor::ImageTensor;
use crate::image::warp::resize_bilinear;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SplitKind {
    Unassigned,
    TrainSubstitute,
    TrainTcagan,
    AttackEval,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitKind::Unassigned => "unassigned",
            SplitKind::TrainSubstitute => "train_substitute",
            SplitKind::TrainTcagan => "train_tcagan",
            SplitKind::AttackEval => "attack_eval",
        };
        f.write_str(s)
    }
}

impl SplitKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unassigned" => Ok(SplitKind::Unassigned),
            "train_substitute" => Ok(SplitKind::TrainSubstitute),
            "train_tcagan" => Ok(SplitKind::TrainTcagan),
            "attack_eval" => Ok(SplitKind::AttackEval),
            other => Err(Error::Dataset(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub identity: String,
    pub filename: String,
    pub image: ImageTensor,
    pub split: SplitKind,
}

/// Fractions of each identity's images that go to the three splits.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SplitFractions {
    pub train_substitute: f64,
    pub train_tcagan: f64,
    pub attack_eval: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train_substitute: 0.35,
            train_tcagan: 0.35,
            attack_eval: 0.30,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train_substitute, self.train_tcagan, self.attack_eval];
        if parts.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig("split fractions must be >= 0".into()));
        }
        let total: f64 = parts.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "overlapping splits requested: fractions sum to {total:.3} > 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FaceDataset {
    pub identities: Vec<String>,
    pub items: Vec<DatasetItem>,
    pub load_warnings: Vec<String>,
}

impl FaceDataset {
    /// Load an identity-per-subdirectory corpus. Every image is decoded,
    /// resized to `target_size` (height, width), and normalized to `[0, 1]`.
    /// Items are ordered by (identity, filename) so loading is deterministic.
    pub fn load_corpus(dir: &Path, target_size: (usize, usize)) -> Result<Self> {
        let mut identities: Vec<String> = Vec::new();
        let mut entries = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect::<Vec<_>>();
        entries.sort();
        let mut items = Vec::new();
        let mut warnings = Vec::new();
        for identity in entries {
            let sub = dir.join(&identity);
            let mut files = std::fs::read_dir(&sub)
                .map_err(|e| Error::io(&sub, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect::<Vec<_>>();
            files.sort();
            let mut loaded = 0usize;
            for file in files {
                let path = sub.join(&file);
                match load_image(&path) {
                    Ok(img) => {
                        let resized = if (img.height(), img.width()) == target_size {
                            img
                        } else {
                            ImageTensor::new(resize_bilinear(
                                img.data(),
                                target_size.0,
                                target_size.1,
                            ))?
                        };
                        items.push(DatasetItem {
                            identity: identity.clone(),
                            filename: file,
                            image: resized,
                            split: SplitKind::Unassigned,
                        });
                        loaded += 1;
                    }
                    Err(e) => {
                        let msg = format!("skipping unreadable file {}: {e}", path.display());
                        eprintln!("warning: {msg}");
                        warnings.push(msg);
                    }
                }
            }
            if loaded == 0 {
                return Err(Error::Dataset(format!(
                    "empty identity '{identity}': no decodable images"
                )));
            }
            identities.push(identity);
        }
        if identities.is_empty() {
            return Err(Error::Dataset("no identities found".into()));
        }
        Ok(Self {
            identities,
            items,
            load_warnings: warnings,
        })
    }

    /// Build a dataset directly from in-memory images.
    pub fn from_images(groups: Vec<(String, Vec<ImageTensor>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Dataset("no identities found".into()));
        }
        let mut identities = Vec::new();
        let mut items = Vec::new();
        for (identity, images) in groups {
            if images.is_empty() {
                return Err(Error::Dataset(format!("empty identity '{identity}'")));
            }
            for (k, image) in images.into_iter().enumerate() {
                items.push(DatasetItem {
                    identity: identity.clone(),
                    filename: format!("{identity}_{k:04}.png"),
                    image,
                    split: SplitKind::Unassigned,
                });
            }
            identities.push(identity);
        }
        Ok(Self {
            identities,
            items,
            load_warnings: Vec::new(),
        })
    }

    /// Assign splits per identity via a seeded shuffle. The three splits are
    /// disjoint by construction; fractions must not overlap.
    pub fn assign_splits(&mut self, fractions: &SplitFractions, seed: u64) -> Result<()> {
        fractions.validate()?;
        for identity in self.identities.clone() {
            let mut idx: Vec<usize> = self
                .items
                .iter()
                .enumerate()
                .filter(|(_, it)| it.identity == identity)
                .map(|(i, _)| i)
                .collect();
            let mut rng = substream(seed, "split", crate::rng::fnv1a(identity.as_bytes()));
            idx.shuffle(&mut rng);
            let n = idx.len();
            let n_sub = (n as f64 * fractions.train_substitute).round() as usize;
            let n_gan = (n as f64 * fractions.train_tcagan).round() as usize;
            let n_eval = (n as f64 * fractions.attack_eval).round() as usize;
            for (pos, &i) in idx.iter().enumerate() {
                self.items[i].split = if pos < n_sub {
                    SplitKind::TrainSubstitute
                } else if pos < n_sub + n_gan {
                    SplitKind::TrainTcagan
                } else if pos < n_sub + n_gan + n_eval.min(n - n_sub - n_gan) {
                    SplitKind::AttackEval
                } else {
                    SplitKind::Unassigned
                };
            }
        }
        self.check_disjoint()
    }

    /// Verify that no (identity, filename) pair appears in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen: BTreeMap<(String, String), SplitKind> = BTreeMap::new();
        for it in &self.items {
            let key = (it.identity.clone(), it.filename.clone());
            if let Some(prev) = seen.insert(key.clone(), it.split) {
                if prev != it.split {
                    return Err(Error::Dataset(format!(
                        "image {}/{} assigned to two splits",
                        key.0, key.1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split_items(&self, split: SplitKind) -> Vec<&DatasetItem> {
        self.items.iter().filter(|it| it.split == split).collect()
    }

    pub fn split_size(&self, split: SplitKind) -> usize {
        self.items.iter().filter(|it| it.split == split).count()
    }

    /// Write the manifest: one `identity<TAB>filename<TAB>split` line per
    /// image, sorted, with a header.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut lines: Vec<String> = self
            .items
            .iter()
            .map(|it| format!("{}\t{}\t{}", it.identity, it.filename, it.split))
            .collect();
        lines.sort();
        let mut out = String::from("identity\tfilename\tsplit\n");
        out.push_str(&lines.join("\n"));
        out.push('\n');
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Apply a manifest's split assignments to this dataset. Every manifest
    /// row must match a loaded image, and vice versa.
    pub fn apply_manifest(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut assignments: BTreeMap<(String, String), SplitKind> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 && line.starts_with("identity\t") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::Dataset(format!(
                    "manifest line {} malformed: '{line}'",
                    lineno + 1
                )));
            }
            assignments.insert(
                (parts[0].to_string(), parts[1].to_string()),
                SplitKind::parse(parts[2])?,
            );
        }
        let mut missing = Vec::new();
        for it in &mut self.items {
            match assignments.remove(&(it.identity.clone(), it.filename.clone())) {
                Some(split) => it.split = split,
                None => missing.push(format!("{}/{}", it.identity, it.filename)),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Dataset(format!(
                "images absent from manifest: {}",
                missing.join(", ")
            )));
        }
        if !assignments.is_empty() {
            let extra: Vec<String> = assignments.keys().map(|(a, b)| format!("{a}/{b}")).collect();
            return Err(Error::Dataset(format!(
                "manifest rows with no matching image: {}",
                extra.join(", ")
            )));
        }
        self.check_disjoint()
    }
}
