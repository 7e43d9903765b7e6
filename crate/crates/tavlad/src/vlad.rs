//! Soft-assignment VLAD encoding of a frame's cell features against a
//! codebook, with an optional per-cell attention weight folded into the
//! membership, plus the summed-over-time baseline video descriptor and a
//! brute-force oracle used by the tests.

use crate::attention::AttentionMap;
use crate::codebook::Codebook;
use crate::dataio::FeatureVolume;
use crate::error::{Error, Result};
use crate::numerics::{softmax, Tensor};

/// Per-cell cluster membership. Row i sums to the cell's attention weight
/// m_i (1 when no attention is supplied).
#[derive(Debug, Clone)]
pub struct Membership {
    pub values: Tensor,
}

/// K×P matrix of spatially summed weighted residuals for one frame.
#[derive(Debug, Clone)]
pub struct FrameDescriptor {
    pub values: Tensor,
    pub frame_index: usize,
}

/// Element-wise sum of a video's frame descriptors. The baseline aggregator
/// that skips the recurrent stage.
#[derive(Debug, Clone)]
pub struct SumVideoDescriptor {
    pub values: Tensor,
}

fn check_attn(attn: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(m) = attn {
        if m.len() != n {
            return Err(Error::contract(format!(
                "attention length {} does not match cell count {}",
                m.len(),
                n
            )));
        }
        for (i, &v) in m.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::contract(format!(
                    "attention[{i}] = {v} is outside (0, 1)"
                )));
            }
        }
    }
    Ok(())
}

fn check_frame(frame: &Tensor, cb: &Codebook) -> Result<()> {
    if frame.dims().len() != 2 || frame.cols() != cb.p() {
        return Err(Error::contract(format!(
            "frame dims {:?} incompatible with codebook P = {}",
            frame.dims(),
            cb.p()
        )));
    }
    Ok(())
}

/// a[i][k] = m_i · softmax_k(W_k·x_i + B_k), with m_i = 1 when `attn` is
/// absent.
pub fn membership(frame: &Tensor, attn: Option<&[f64]>, cb: &Codebook) -> Result<Membership> {
    check_frame(frame, cb)?;
    let (n, k) = (frame.rows(), cb.k());
    check_attn(attn, n)?;
    let mut values = Vec::with_capacity(n * k);
    let mut scores = vec![0.0; k];
    for i in 0..n {
        let x = frame.row(i);
        for (kk, s) in scores.iter_mut().enumerate() {
            *s = cb
                .assign_weights
                .row(kk)
                .iter()
                .zip(x.iter())
                .map(|(w, xi)| w * xi)
                .sum::<f64>()
                + cb.assign_bias[kk];
        }
        let soft = softmax(&scores)?;
        let m = attn.map_or(1.0, |a| a[i]);
        values.extend(soft.iter().map(|&s| m * s));
    }
    Ok(Membership {
        values: Tensor::new(vec![n, k], values),
    })
}

/// values[k][j] = Σ_i a[i][k]·(frame[i][j] − centers[k][j]).
pub fn encode_frame(
    frame: &Tensor,
    attn: Option<&[f64]>,
    cb: &Codebook,
    frame_index: usize,
) -> Result<FrameDescriptor> {
    let a = membership(frame, attn, cb)?;
    let (n, k, p) = (frame.rows(), cb.k(), cb.p());
    // V = aᵀ·F − diag(colsum(a))·C, accumulated in index order.
    let mut values = vec![0.0; k * p];
    for i in 0..n {
        let x = frame.row(i);
        let ai = a.values.row(i);
        for kk in 0..k {
            let w = ai[kk];
            let row = &mut values[kk * p..(kk + 1) * p];
            for j in 0..p {
                row[j] += w * (x[j] - cb.centers.at(kk, j));
            }
        }
    }
    Ok(FrameDescriptor {
        values: Tensor::new(vec![k, p], values),
        frame_index,
    })
}

/// Element-wise sum of per-frame descriptors over the whole video.
pub fn encode_video_sum(
    video: &FeatureVolume,
    attn: Option<&AttentionMap>,
    cb: &Codebook,
) -> Result<SumVideoDescriptor> {
    if video.frames() == 0 {
        return Err(Error::contract("cannot encode an empty video"));
    }
    if let Some(map) = attn {
        if map.frames() != video.frames() || map.cells() != video.cells() {
            return Err(Error::contract(format!(
                "attention map {}×{} does not match video {}×{}",
                map.frames(),
                map.cells(),
                video.frames(),
                video.cells()
            )));
        }
    }
    let (k, p) = (cb.k(), cb.p());
    let mut total = vec![0.0; k * p];
    for t in 0..video.frames() {
        let row = attn.map(|m| m.frame(t));
        let fd = encode_frame(video.frame(t), row, cb, t)?;
        for (acc, v) in total.iter_mut().zip(fd.values.iter()) {
            *acc += v;
        }
    }
    Ok(SumVideoDescriptor {
        values: Tensor::new(vec![k, p], total),
    })
}

/// Assignment mode for the brute-force oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Soft,
    Hard,
}

/// Naive triple-loop reference encoder. Soft mode recomputes the softmax
/// inline from exponentials; hard mode gives the nearest center (by
/// Euclidean distance, ties to the lowest index) the full weight m_i.
/// Test-support code: slow and simple on purpose.
pub fn vlad_oracle(
    frame: &Tensor,
    attn: Option<&[f64]>,
    cb: &Codebook,
    mode: OracleMode,
    frame_index: usize,
) -> Result<FrameDescriptor> {
    check_frame(frame, cb)?;
    let (n, k, p) = (frame.rows(), cb.k(), cb.p());
    check_attn(attn, n)?;
    let mut values = vec![0.0; k * p];
    for i in 0..n {
        let x = frame.row(i);
        let m = attn.map_or(1.0, |a| a[i]);
        let weights: Vec<f64> = match mode {
            OracleMode::Soft => {
                let mut scores = Vec::with_capacity(k);
                for kk in 0..k {
                    let mut s = cb.assign_bias[kk];
                    for j in 0..p {
                        s += cb.assign_weights.at(kk, j) * x[j];
                    }
                    scores.push(s);
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.iter().map(|e| m * e / z).collect()
            }
            OracleMode::Hard => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for kk in 0..k {
                    let mut d = 0.0;
                    for j in 0..p {
                        let r = x[j] - cb.centers.at(kk, j);
                        d += r * r;
                    }
                    if d < best_d {
                        best_d = d;
                        best = kk;
                    }
                }
                (0..k).map(|kk| if kk == best { m } else { 0.0 }).collect()
            }
        };
        for kk in 0..k {
            for j in 0..p {
                values[kk * p + j] += weights[kk] * (x[j] - cb.centers.at(kk, j));
            }
        }
    }
    Ok(FrameDescriptor {
        values: Tensor::new(vec![k, p], values),
        frame_index,
    })
}
