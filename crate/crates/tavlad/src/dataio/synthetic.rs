//! Synthetic desk-scale dataset generator.
//!
//! Each class is an ordered sequence of unit-norm prototype vectors over
//! temporal segments. Signal cells carry the segment's prototype plus noise
//! and move on a seeded random walk; background cells are pure noise. With
//! the order-reversed-pair flag, odd class 2p+1 videos are exact temporal
//! mirrors of their even class 2p partners, so the two classes share every
//! frame multiset and only order-sensitive aggregation can tell them apart.
//! The attention-weights file holds scaled prototypes, standing in for a
//! pretrained classifier whose rows align with the objects.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, Rng, Tensor, NORM_EPS};

use super::formats::{write_attention_weights, write_features, FeatureVolume};
use super::manifest::{write_header, write_manifest, DatasetHeader, ManifestRecord};
use super::manifest::HEADER_FILE_NAME;

/// Row scale for the generated attention-weights file: a signal cell's
/// sigmoid(6·cosine) lands near 1 while pure-noise cells stay near 0.5.
const ATTENTION_SCALE: f64 = 6.0;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub t_total: usize,
    /// Frames per video the header tells consumers to sample.
    pub t_sample: usize,
    pub grid: (usize, usize),
    pub channels: usize,
    pub num_prototypes: usize,
    /// Temporal segments per video; each shows one prototype.
    pub segments: usize,
    pub sigma: f64,
    pub signal_cells: usize,
    /// Odd classes become exact temporal mirrors of their even partners.
    pub order_reversed_pairs: bool,
    /// Clamp features at zero, mimicking post-activation CNN output.
    pub clamp_nonnegative: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            videos_per_class: 40,
            t_total: 12,
            t_sample: 8,
            grid: (4, 4),
            channels: 16,
            num_prototypes: 6,
            segments: 3,
            sigma: 0.1,
            signal_cells: 2,
            order_reversed_pairs: true,
            clamp_nonnegative: true,
            seed: 7,
        }
    }
}

/// Paths of everything `gen_synthetic` wrote, plus the prototypes it used.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub root: PathBuf,
    pub header_path: PathBuf,
    pub attention_path: PathBuf,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub prototypes: Tensor,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        let n = self.grid.0 * self.grid.1;
        if self.num_classes == 0
            || self.videos_per_class == 0
            || self.t_total == 0
            || self.t_sample == 0
            || self.channels == 0
            || self.segments == 0
            || n == 0
        {
            return err("all size fields must be positive".into());
        }
        if self.signal_cells == 0 || self.signal_cells > n {
            return err(format!(
                "signal_cells {} infeasible on a grid of {n} cells",
                self.signal_cells
            ));
        }
        if self.segments > self.t_total {
            return err(format!(
                "{} segments do not fit into {} frames",
                self.segments, self.t_total
            ));
        }
        if self.order_reversed_pairs && self.num_classes % 2 != 0 {
            return err(format!(
                "order-reversed pairs need an even class count, got {}",
                self.num_classes
            ));
        }
        let needed = self.segments * self.base_classes();
        if self.num_prototypes < needed {
            return err(format!(
                "{} prototypes cannot cover {} classes × {} segments = {needed}",
                self.num_prototypes,
                self.base_classes(),
                self.segments
            ));
        }
        if self.sigma < 0.0 {
            return err(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if self.split_sizes().iter().any(|&s| s == 0) {
            return err(format!(
                "{} videos per class cannot fill train/val/test splits",
                self.videos_per_class
            ));
        }
        Ok(())
    }

    /// Classes generated from scratch (mirror classes derive from these).
    fn base_classes(&self) -> usize {
        if self.order_reversed_pairs {
            self.num_classes / 2
        } else {
            self.num_classes
        }
    }

    /// Prototype index shown by base class `c` during segment `s`.
    fn prototype_of(&self, base_class: usize, segment: usize) -> usize {
        base_class * self.segments + segment
    }

    fn segment_of(&self, t: usize) -> usize {
        t * self.segments / self.t_total
    }

    /// (train, val, test) video counts per class.
    fn split_sizes(&self) -> [usize; 3] {
        let v = self.videos_per_class;
        let train = v.div_ceil(2);
        let val = (v - train).div_ceil(2);
        [train, val, v - train - val]
    }
}

fn unit_prototypes(spec: &SyntheticSpec, rng: &mut Rng) -> Tensor {
    let p = spec.channels;
    let mut data = Vec::with_capacity(spec.num_prototypes * p);
    for _ in 0..spec.num_prototypes {
        loop {
            let mut row = rng.normal_vec(p);
            if spec.clamp_nonnegative {
                for v in &mut row {
                    *v = v.abs();
                }
            }
            let (unit, degenerate) = l2_normalize(&row, NORM_EPS);
            if !degenerate {
                data.extend_from_slice(&unit);
                break;
            }
        }
    }
    Tensor::new(vec![spec.num_prototypes, p], data)
}

/// Walker positions for the next frame: each walker tries a uniform move in
/// {stay, up, down, left, right}, stays put at grid borders, and on collision
/// with an already-placed walker linear-probes to the next free cell.
fn step_walkers(positions: &[usize], grid: (usize, usize), rng: &mut Rng) -> Vec<usize> {
    let (rows, cols) = grid;
    let n = rows * cols;
    let mut next: Vec<usize> = Vec::with_capacity(positions.len());
    for &pos in positions {
        let (r, c) = (pos / cols, pos % cols);
        let (mut nr, mut nc) = (r as isize, c as isize);
        match rng.below(5) {
            0 => {}
            1 => nr -= 1,
            2 => nr += 1,
            3 => nc -= 1,
            _ => nc += 1,
        }
        if nr < 0 || nr >= rows as isize || nc < 0 || nc >= cols as isize {
            nr = r as isize;
            nc = c as isize;
        }
        let mut cand = nr as usize * cols + nc as usize;
        while next.contains(&cand) {
            cand = (cand + 1) % n;
        }
        next.push(cand);
    }
    next
}

fn initial_walkers(count: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut positions: Vec<usize> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut cand = rng.below(n);
        while positions.contains(&cand) {
            cand = (cand + 1) % n;
        }
        positions.push(cand);
    }
    positions
}

/// One generated base video: feature frames plus per-frame signal cells.
struct BaseVideo {
    volume: FeatureVolume,
    mask: Vec<Vec<usize>>,
}

fn gen_base_video(
    spec: &SyntheticSpec,
    prototypes: &Tensor,
    base_class: usize,
    video: usize,
    root_rng: &Rng,
) -> BaseVideo {
    let mut rng = root_rng.split(&format!("video.{base_class}.{video}"));
    let n = spec.grid.0 * spec.grid.1;
    let p = spec.channels;
    let mut positions = initial_walkers(spec.signal_cells, n, &mut rng);
    let mut frames = Vec::with_capacity(spec.t_total);
    let mut mask = Vec::with_capacity(spec.t_total);
    for t in 0..spec.t_total {
        let proto = prototypes.row(spec.prototype_of(base_class, spec.segment_of(t)));
        let mut data: Vec<f64> = (0..n * p).map(|_| spec.sigma * rng.normal()).collect();
        for &cell in &positions {
            for j in 0..p {
                data[cell * p + j] = proto[j] + spec.sigma * rng.normal();
            }
        }
        if spec.clamp_nonnegative {
            for v in &mut data {
                *v = v.max(0.0);
            }
        }
        frames.push(Tensor::new(vec![n, p], data));
        mask.push(positions.clone());
        positions = step_walkers(&positions, spec.grid, &mut rng);
    }
    BaseVideo {
        volume: FeatureVolume::new(spec.grid, frames).expect("generated volume is well-formed"),
        mask,
    }
}

fn write_mask(path: &Path, mask: &[Vec<usize>]) -> Result<()> {
    let mut s = String::new();
    for cells in mask {
        let line: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses a mask file: one line per frame, space-separated signal cell
/// indices.
pub fn read_mask(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mask = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let cells: std::result::Result<Vec<usize>, _> =
            line.split_whitespace().map(str::parse).collect();
        mask.push(cells.map_err(|_| {
            Error::format(path, ln as u64, format!("bad mask line '{line}'"))
        })?);
    }
    Ok(mask)
}

fn video_stem(class: usize, video: usize) -> String {
    format!("c{class}_v{video:02}")
}

/// Generates the full dataset tree under `out_dir`: `dataset.header`,
/// `attention.tavw`, `features/*.tavf`, `masks/*.mask`, and the three split
/// manifests. Everything is a pure function of the spec, so two runs produce
/// byte-identical trees.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<GeneratedDataset> {
    spec.validate()?;
    let features_dir = out_dir.join("features");
    let masks_dir = out_dir.join("masks");
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;

    let root_rng = Rng::new(spec.seed);
    let mut proto_rng = root_rng.split("prototypes");
    let prototypes = unit_prototypes(spec, &mut proto_rng);

    // Base videos are independent given their split streams; generate them in
    // parallel, then write sequentially in a fixed order.
    let jobs: Vec<(usize, usize)> = (0..spec.base_classes())
        .flat_map(|c| (0..spec.videos_per_class).map(move |v| (c, v)))
        .collect();
    let base_videos: Vec<BaseVideo> = jobs
        .par_iter()
        .map(|&(c, v)| gen_base_video(spec, &prototypes, c, v, &root_rng))
        .collect();

    for (&(base_class, video), base) in jobs.iter().zip(base_videos.iter()) {
        let class = if spec.order_reversed_pairs {
            2 * base_class
        } else {
            base_class
        };
        let stem = video_stem(class, video);
        write_features(&features_dir.join(format!("{stem}.tavf")), &base.volume)?;
        write_mask(&masks_dir.join(format!("{stem}.mask")), &base.mask)?;
        if spec.order_reversed_pairs {
            let stem = video_stem(class + 1, video);
            let mirrored: Vec<Vec<usize>> = base.mask.iter().rev().cloned().collect();
            write_features(&features_dir.join(format!("{stem}.tavf")), &base.volume.reversed())?;
            write_mask(&masks_dir.join(format!("{stem}.mask")), &mirrored)?;
        }
    }

    let attention_path = out_dir.join("attention.tavw");
    let scaled = Tensor::new(
        prototypes.dims().to_vec(),
        prototypes.iter().map(|v| v * ATTENTION_SCALE).collect(),
    );
    write_attention_weights(&attention_path, &AttentionWeights::new(scaled, None)?)?;

    let header_path = out_dir.join(HEADER_FILE_NAME);
    write_header(
        &header_path,
        &DatasetHeader {
            num_classes: spec.num_classes,
            channels: spec.channels,
            grid: spec.grid,
            t_sample: spec.t_sample,
            attention_weights: PathBuf::from("attention.tavw"),
        },
    )?;

    // Splits keep mirrored partners together because partners share the same
    // video index within their classes.
    let [n_train, n_val, _] = spec.split_sizes();
    let mut splits: [Vec<ManifestRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for class in 0..spec.num_classes {
        for video in 0..spec.videos_per_class {
            let bucket = if video < n_train {
                0
            } else if video < n_train + n_val {
                1
            } else {
                2
            };
            splits[bucket].push(ManifestRecord {
                path: PathBuf::from(format!("features/{}.tavf", video_stem(class, video))),
                label: class,
            });
        }
    }
    let train_manifest = out_dir.join("train.manifest");
    let val_manifest = out_dir.join("val.manifest");
    let test_manifest = out_dir.join("test.manifest");
    write_manifest(&train_manifest, &splits[0])?;
    write_manifest(&val_manifest, &splits[1])?;
    write_manifest(&test_manifest, &splits[2])?;

    Ok(GeneratedDataset {
        root: out_dir.to_path_buf(),
        header_path,
        attention_path,
        train_manifest,
        val_manifest,
        test_manifest,
        prototypes,
    })
}
