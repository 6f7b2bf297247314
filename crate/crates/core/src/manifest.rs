//! Dataset manifests: one JSON object per line describing a video sample.
//!
//! An optional first line `{"split_ratio": [3, 1, 1]}` declares the split
//! ratio; when present the split counts are checked against it. Blank lines
//! are ignored.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traits::TraitVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub frames_path: PathBuf,
    pub audio_path: PathBuf,
    #[serde(default)]
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<TraitVector>,
    pub split: Split,
    pub duration_s: f64,
    pub fps: f64,
}

impl VideoRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        if self.labels.is_none() && self.split != Split::Test {
            return Err(format!("labels missing on a {} record", self.split));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<VideoRecord>,
    pub split_ratio: [u32; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    split_ratio: [u32; 3],
}

pub const DEFAULT_SPLIT_RATIO: [u32; 3] = [3, 1, 1];

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            records: Vec::new(),
            split_ratio: DEFAULT_SPLIT_RATIO,
        }
    }
}

impl DatasetManifest {
    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.records {
            counts[r.split as usize] += 1;
        }
        counts
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Checks split counts against the declared ratio, allowing ±1 per split.
    pub fn check_split_ratio(&self) -> Result<()> {
        let target = proportional_sizes(self.records.len(), self.split_ratio);
        let counts = self.split_counts();
        for (i, split) in Split::ALL.iter().enumerate() {
            if counts[i].abs_diff(target[i]) > 1 {
                return Err(Error::Integrity(format!(
                    "{split} split has {} records, ratio {:?} implies {}",
                    counts[i], self.split_ratio, target[i]
                )));
            }
        }
        Ok(())
    }

    /// Resolves a manifest-relative media path against the manifest's directory.
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_manifest(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serialize_manifest(self)).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::default();
    let mut has_header = false;
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if manifest.records.is_empty() && !has_header && line.contains("\"split_ratio\"") {
            let header: Header = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if header.split_ratio.iter().any(|&r| r == 0) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "split_ratio components must be positive".into(),
                });
            }
            manifest.split_ratio = header.split_ratio;
            has_header = true;
            continue;
        }
        let record: VideoRecord = serde_json::from_str(line).map_err(|e| {
            let msg = e.to_string();
            // Out-of-range labels surface from TraitVector's validation.
            if msg.contains("outside [0, 1]") {
                Error::Validation(format!("line {line_no}: {msg}"))
            } else {
                Error::Parse {
                    line: line_no,
                    message: msg,
                }
            }
        })?;
        record.validate().map_err(|m| Error::Validation(format!("line {line_no}: {m}")))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Integrity(format!(
                "duplicate id `{}` at line {line_no}",
                record.id
            )));
        }
        manifest.records.push(record);
    }
    if has_header {
        manifest.check_split_ratio()?;
    }
    Ok(manifest)
}

pub fn serialize_manifest(manifest: &DatasetManifest) -> String {
    let mut out = serde_json::to_string(&Header {
        split_ratio: manifest.split_ratio,
    })
    .expect("header serializes");
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Largest-remainder apportionment of `n` items over `ratio`; ties go to the earlier split.
pub fn proportional_sizes(n: usize, ratio: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratio.iter().map(|&r| u64::from(r)).sum();
    if total == 0 {
        return [0; 3];
    }
    let mut sizes = [0usize; 3];
    let mut remainders = [0u64; 3];
    for i in 0..3 {
        let num = n as u64 * u64::from(ratio[i]);
        sizes[i] = (num / total) as usize;
        remainders[i] = num % total;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Seeded random partition of `records` into train/validation/test by `ratio`.
///
/// Records keep their input order; only the `split` field is reassigned.
pub fn split_dataset(
    mut records: Vec<VideoRecord>,
    ratio: [u32; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    if ratio.iter().any(|&r| r == 0) {
        return Err(Error::Validation(format!(
            "split ratio components must be positive, got {ratio:?}"
        )));
    }
    let ratio_sum: usize = ratio.iter().map(|&r| r as usize).sum();
    if records.len() < ratio_sum {
        return Err(Error::Dataset(format!(
            "{} records cannot be split with ratio {ratio:?}",
            records.len()
        )));
    }
    let sizes = proportional_sizes(records.len(), ratio);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (rank, &idx) in order.iter().enumerate() {
        records[idx].split = if rank < sizes[0] {
            Split::Train
        } else if rank < sizes[0] + sizes[1] {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(DatasetManifest {
        records,
        split_ratio: ratio,
    })
}
