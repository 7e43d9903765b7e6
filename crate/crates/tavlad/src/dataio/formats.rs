//! Binary readers and writers: TAVF feature volumes, TAVW attention weights,
//! TAVC checkpoints, PGM attention images.
//!
//! Serialization is canonical: write → read → write reproduces the original
//! file byte for byte. Readers reject bad magic, bad version, truncation and
//! trailing garbage with the byte offset of the problem.

use std::fs;
use std::path::{Path, PathBuf};

use crate::attention::{AttentionMap, AttentionWeights};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-video features: T frames, each an N×P matrix over N = rows·cols
/// spatial cells.
#[derive(Debug, Clone)]
pub struct FeatureVolume {
    grid: (usize, usize),
    frames: Vec<Tensor>,
}

impl FeatureVolume {
    pub fn new(grid: (usize, usize), frames: Vec<Tensor>) -> Result<Self> {
        let (rows, cols) = grid;
        if rows == 0 || cols == 0 {
            return Err(Error::contract(format!("empty grid {rows}×{cols}")));
        }
        if frames.is_empty() {
            return Err(Error::contract("feature volume with zero frames"));
        }
        let n = rows * cols;
        let p = frames[0].dims().get(1).copied().unwrap_or(0);
        if p == 0 {
            return Err(Error::contract("feature volume with zero channels"));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.dims() != [n, p] {
                return Err(Error::contract(format!(
                    "frame {t} has dims {:?}, expected [{n}, {p}]",
                    f.dims()
                )));
            }
            if let Some(i) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::contract(format!(
                    "frame {t} has non-finite value at flat index {i}"
                )));
            }
        }
        Ok(FeatureVolume { grid, frames })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    /// Number of frames T.
    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    /// Spatial cells per frame N.
    pub fn cells(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Channels P.
    pub fn channels(&self) -> usize {
        self.frames[0].cols()
    }

    pub fn frame(&self, t: usize) -> &Tensor {
        &self.frames[t]
    }

    pub fn frame_slice(&self) -> &[Tensor] {
        &self.frames
    }

    /// New volume containing the frames at `indices`, in that order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::contract("select_frames with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.frames.len()) {
            return Err(Error::contract(format!(
                "frame index {bad} out of {}",
                self.frames.len()
            )));
        }
        Ok(FeatureVolume {
            grid: self.grid,
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
        })
    }

    /// The same frames in reversed temporal order.
    pub fn reversed(&self) -> Self {
        FeatureVolume {
            grid: self.grid,
            frames: self.frames.iter().rev().cloned().collect(),
        }
    }
}

/// Checkpoint trailer: how the stored tensors are meant to be run.
/// `aggregator` is 0 for the recurrent aggregator, 1 for the sum baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointFlags {
    pub aggregator: u8,
    pub attention_enabled: bool,
    pub dropout_rate: f64,
    pub stage: u32,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn fail(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::format(self.path, at as u64, msg.into())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail(
                self.pos,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(self.fail(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expect)
                ),
            ));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(8 * n, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn version(&mut self, expect: u32) -> Result<()> {
        let at = self.pos;
        let v = self.u32("version")?;
        if v != expect {
            return Err(self.fail(at, format!("unsupported version {v}, expected {expect}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(
                self.pos,
                format!("unexpected trailing data: {} bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn usize_as_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::contract(format!("{what} {v} exceeds u32 range")))
}

/// TAVF: magic, version 1, T, rows, cols, P (u32 LE each), then T·N·P f32 LE
/// values in [t][cell][channel] order.
pub fn write_features(path: &Path, vol: &FeatureVolume) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"TAVF");
    push_u32(&mut out, 1);
    push_u32(&mut out, usize_as_u32(vol.frames(), "frame count")?);
    push_u32(&mut out, usize_as_u32(vol.grid().0, "grid rows")?);
    push_u32(&mut out, usize_as_u32(vol.grid().1, "grid cols")?);
    push_u32(&mut out, usize_as_u32(vol.channels(), "channels")?);
    for t in 0..vol.frames() {
        for v in vol.frame(t).iter() {
            push_f32(&mut out, *v);
        }
    }
    write_file(path, &out)
}

pub fn read_features(path: &Path) -> Result<FeatureVolume> {
    let buf = read_file(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(b"TAVF")?;
    r.version(1)?;
    let t = r.u32("frame count")? as usize;
    let rows = r.u32("grid rows")? as usize;
    let cols = r.u32("grid cols")? as usize;
    let p = r.u32("channels")? as usize;
    let at = r.pos;
    if t == 0 || rows == 0 || cols == 0 || p == 0 {
        return Err(r.fail(at, format!("degenerate dims T={t} grid={rows}×{cols} P={p}")));
    }
    let n = rows * cols;
    let mut frames = Vec::with_capacity(t);
    for ti in 0..t {
        let data = r.f32s(n * p, &format!("frame {ti} payload"))?;
        let at = r.pos;
        frames.push(
            Tensor::from_external(vec![n, p], data)
                .map_err(|e| r.fail(at, format!("frame {ti}: {e}")))?,
        );
    }
    r.finish()?;
    FeatureVolume::new((rows, cols), frames)
}

/// TAVW: magic, version 1, C, P (u32 LE), bias-present flag byte, C·P f32
/// weights row-major, then C f32 bias values when the flag is 1.
pub fn write_attention_weights(path: &Path, aw: &AttentionWeights) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"TAVW");
    push_u32(&mut out, 1);
    push_u32(&mut out, usize_as_u32(aw.num_classes(), "class count")?);
    push_u32(&mut out, usize_as_u32(aw.channels(), "channels")?);
    out.push(aw.bias.is_some() as u8);
    for v in aw.weights.iter() {
        push_f32(&mut out, *v);
    }
    if let Some(b) = &aw.bias {
        for v in b {
            push_f32(&mut out, *v);
        }
    }
    write_file(path, &out)
}

pub fn read_attention_weights(path: &Path) -> Result<AttentionWeights> {
    let buf = read_file(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(b"TAVW")?;
    r.version(1)?;
    let c = r.u32("class count")? as usize;
    let p = r.u32("channels")? as usize;
    let flag_at = r.pos;
    let flag = r.u8("bias flag")?;
    if flag > 1 {
        return Err(r.fail(flag_at, format!("bias flag must be 0 or 1, got {flag}")));
    }
    let at = r.pos;
    if c == 0 || p == 0 {
        return Err(r.fail(at, format!("degenerate dims C={c} P={p}")));
    }
    let weights = r.f32s(c * p, "weights payload")?;
    let bias = if flag == 1 {
        Some(r.f32s(c, "bias payload")?)
    } else {
        None
    };
    r.finish()?;
    let at = r.pos;
    AttentionWeights::new(Tensor::new(vec![c, p], weights), bias)
        .map_err(|e| r.fail(at, e.to_string()))
}

/// TAVC: magic, version 1, tensor count, then per tensor {name length u32,
/// name bytes, ndim u32, dims u32 each, f64 LE payload}, then a flags section
/// {aggregator u8, attention_enabled u8, dropout_rate f64 LE, stage u32 LE}.
pub fn write_checkpoint(
    path: &Path,
    tensors: &[(String, Tensor)],
    flags: CheckpointFlags,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"TAVC");
    push_u32(&mut out, 1);
    push_u32(&mut out, usize_as_u32(tensors.len(), "tensor count")?);
    for (name, t) in tensors {
        push_u32(&mut out, usize_as_u32(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, usize_as_u32(t.dims().len(), "ndim")?);
        for &d in t.dims() {
            push_u32(&mut out, usize_as_u32(d, "dim")?);
        }
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.push(flags.aggregator);
    out.push(flags.attention_enabled as u8);
    out.extend_from_slice(&flags.dropout_rate.to_le_bytes());
    push_u32(&mut out, flags.stage);
    write_file(path, &out)
}

pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, CheckpointFlags)> {
    let buf = read_file(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(b"TAVC")?;
    r.version(1)?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| r.fail(at, format!("tensor {i} name is not UTF-8")))?;
        let ndim = r.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dim")? as usize);
        }
        let len: usize = dims.iter().product();
        let data = r.f64s(len, &format!("tensor '{name}' payload"))?;
        let at = r.pos;
        tensors.push((
            name.clone(),
            Tensor::from_external(dims, data)
                .map_err(|e| r.fail(at, format!("tensor '{name}': {e}")))?,
        ));
    }
    let agg_at = r.pos;
    let aggregator = r.u8("aggregator flag")?;
    if aggregator > 1 {
        return Err(r.fail(agg_at, format!("aggregator flag must be 0 or 1, got {aggregator}")));
    }
    let attn_at = r.pos;
    let attn = r.u8("attention flag")?;
    if attn > 1 {
        return Err(r.fail(attn_at, format!("attention flag must be 0 or 1, got {attn}")));
    }
    let dropout_rate = r.f64s(1, "dropout rate")?[0];
    let stage = r.u32("stage")?;
    r.finish()?;
    Ok((
        tensors,
        CheckpointFlags {
            aggregator,
            attention_enabled: attn == 1,
            dropout_rate,
            stage,
        },
    ))
}

/// Writes one binary PGM (P5, maxval 255) per frame into `out_dir`, named
/// frame_<t>.pgm; pixel = round(m·255), half away from zero. Returns the
/// paths written, in frame order.
pub fn export_attention_pgm(
    attn: &AttentionMap,
    grid: (usize, usize),
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (rows, cols) = grid;
    if rows * cols != attn.cells() {
        return Err(Error::contract(format!(
            "grid {rows}×{cols} does not cover {} cells",
            attn.cells()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(attn.frames());
    for t in 0..attn.frames() {
        let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
        out.extend(attn.frame(t).iter().map(|&m| (m * 255.0).round() as u8));
        let path = out_dir.join(format!("frame_{t}.pgm"));
        write_file(&path, &out)?;
        paths.push(path);
    }
    Ok(paths)
}
