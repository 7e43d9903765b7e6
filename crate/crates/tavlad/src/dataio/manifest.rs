//! Dataset manifests: a shared text header file plus line-oriented record
//! files, one record per line as `<relative-path> <label>`.
//!
//! The header (`dataset.header`) lives next to the manifest files and carries
//! what every split has in common: class count, channels, grid, frame-sample
//! count, and the attention-weights path. All paths are relative to the
//! directory containing the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attention::AttentionWeights;
use crate::error::{Error, Result};

use super::formats::{read_attention_weights, read_features, FeatureVolume};

/// Name of the shared header file expected next to each manifest.
pub const HEADER_FILE_NAME: &str = "dataset.header";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub num_classes: usize,
    pub channels: usize,
    pub grid: (usize, usize),
    pub t_sample: usize,
    pub attention_weights: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: usize,
}

/// One split of a dataset: the shared header, this split's records, and the
/// directory they are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    header: DatasetHeader,
    records: Vec<ManifestRecord>,
}

impl DatasetHeader {
    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "TAVH 1");
        let _ = writeln!(s, "num_classes {}", self.num_classes);
        let _ = writeln!(s, "channels {}", self.channels);
        let _ = writeln!(s, "grid {} {}", self.grid.0, self.grid.1);
        let _ = writeln!(s, "t_sample {}", self.t_sample);
        let _ = writeln!(s, "attention_weights {}", self.attention_weights.display());
        s
    }
}

pub fn write_header(path: &Path, header: &DatasetHeader) -> Result<()> {
    fs::write(path, header.render()).map_err(|e| Error::io(path, e))
}

fn header_fail(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::format(path, offset, msg.into())
}

pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut num_classes = None;
    let mut channels = None;
    let mut grid = None;
    let mut t_sample = None;
    let mut attention_weights = None;
    let mut offset = 0u64;
    let mut first = true;
    for line in text.lines() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        if first {
            first = false;
            if line.trim() != "TAVH 1" {
                return Err(header_fail(
                    path,
                    line_offset,
                    format!("bad header magic line '{line}', expected 'TAVH 1'"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        let parse_usize = |v: Option<&str>| -> Result<usize> {
            v.and_then(|s| s.parse().ok()).ok_or_else(|| {
                header_fail(path, line_offset, format!("bad value for '{key}' in '{line}'"))
            })
        };
        match key {
            "num_classes" => num_classes = Some(parse_usize(parts.next())?),
            "channels" => channels = Some(parse_usize(parts.next())?),
            "grid" => {
                let r = parse_usize(parts.next())?;
                let c = parse_usize(parts.next())?;
                grid = Some((r, c));
            }
            "t_sample" => t_sample = Some(parse_usize(parts.next())?),
            "attention_weights" => {
                attention_weights = Some(PathBuf::from(parts.next().ok_or_else(|| {
                    header_fail(path, line_offset, "missing attention_weights path")
                })?))
            }
            other => {
                return Err(header_fail(
                    path,
                    line_offset,
                    format!("unknown header key '{other}'"),
                ))
            }
        }
    }
    let missing = |what: &str| header_fail(path, offset, format!("missing header key '{what}'"));
    let header = DatasetHeader {
        num_classes: num_classes.ok_or_else(|| missing("num_classes"))?,
        channels: channels.ok_or_else(|| missing("channels"))?,
        grid: grid.ok_or_else(|| missing("grid"))?,
        t_sample: t_sample.ok_or_else(|| missing("t_sample"))?,
        attention_weights: attention_weights.ok_or_else(|| missing("attention_weights"))?,
    };
    if header.num_classes == 0
        || header.channels == 0
        || header.grid.0 == 0
        || header.grid.1 == 0
        || header.t_sample == 0
    {
        return Err(header_fail(path, 0, "header has a zero field"));
    }
    Ok(header)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        let p = r.path.to_string_lossy();
        if p.contains(char::is_whitespace) {
            return Err(Error::contract(format!(
                "manifest paths may not contain whitespace: '{p}'"
            )));
        }
        let _ = writeln!(s, "{p} {}", r.label);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (p, l) = (parts.next(), parts.next());
        let record = match (p, l, parts.next()) {
            (Some(p), Some(l), None) => {
                let label = l.parse().map_err(|_| {
                    header_fail(path, line_offset, format!("bad label '{l}' in '{line}'"))
                })?;
                ManifestRecord {
                    path: PathBuf::from(p),
                    label,
                }
            }
            _ => {
                return Err(header_fail(
                    path,
                    line_offset,
                    format!("expected '<path> <label>', got '{line}'"),
                ))
            }
        };
        records.push(record);
    }
    Ok(records)
}

impl Dataset {
    /// Loads one manifest plus the sibling `dataset.header`, validating that
    /// every label is in range and every referenced file exists.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let header = read_header(&root.join(HEADER_FILE_NAME))?;
        let records = read_manifest(manifest_path)?;
        if records.is_empty() {
            return Err(Error::contract(format!(
                "manifest {} has no records",
                manifest_path.display()
            )));
        }
        for r in &records {
            if r.label >= header.num_classes {
                return Err(Error::contract(format!(
                    "label {} out of {} classes for {}",
                    r.label,
                    header.num_classes,
                    r.path.display()
                )));
            }
            let full = root.join(&r.path);
            if !full.is_file() {
                return Err(Error::contract(format!(
                    "referenced feature file missing: {}",
                    full.display()
                )));
            }
        }
        let aw = root.join(&header.attention_weights);
        if !aw.is_file() {
            return Err(Error::contract(format!(
                "attention weights file missing: {}",
                aw.display()
            )));
        }
        Ok(Dataset {
            root,
            header,
            records,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn label(&self, index: usize) -> usize {
        self.records[index].label
    }

    /// Reads record `index`'s full feature volume and checks it against the
    /// header's grid and channel count.
    pub fn load_video(&self, index: usize) -> Result<FeatureVolume> {
        let r = &self.records[index];
        let vol = read_features(&self.root.join(&r.path))?;
        if vol.grid() != self.header.grid || vol.channels() != self.header.channels {
            return Err(Error::contract(format!(
                "{}: volume is {:?} grid × {} channels, header says {:?} × {}",
                r.path.display(),
                vol.grid(),
                vol.channels(),
                self.header.grid,
                self.header.channels
            )));
        }
        Ok(vol)
    }

    pub fn load_attention_weights(&self) -> Result<AttentionWeights> {
        let aw = read_attention_weights(&self.root.join(&self.header.attention_weights))?;
        if aw.channels() != self.header.channels {
            return Err(Error::contract(format!(
                "attention weights have {} channels, header says {}",
                aw.channels(),
                self.header.channels
            )));
        }
        Ok(aw)
    }
}
