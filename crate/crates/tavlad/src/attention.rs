//! Top-down attention from class activation maps.
//!
//! For each frame independently, a classifier weight matrix picks the winning
//! class on mean-pooled features, the winning row is projected back onto the
//! spatial cells (the class activation map), and a sigmoid turns the map into
//! per-cell attention in (0,1). The class choice is a detached constant:
//! gradients reach the weights only through the selected row's map.

use crate::dataio::FeatureVolume;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tensor};

/// Classifier weights driving attention: row c scores class c. The bias, when
/// present, participates in winning-class selection only, never in the map.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub weights: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl AttentionWeights {
    pub fn new(weights: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        if weights.dims().len() != 2 || weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::contract(format!(
                "attention weights must be a non-empty C×P matrix, got dims {:?}",
                weights.dims()
            )));
        }
        if let Some(i) = weights.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "attention weights contain non-finite value at flat index {i}"
            )));
        }
        if let Some(b) = &bias {
            if b.len() != weights.rows() {
                return Err(Error::contract(format!(
                    "attention bias length {} does not match {} classes",
                    b.len(),
                    weights.rows()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract("attention bias contains non-finite value"));
            }
        }
        Ok(AttentionWeights { weights, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn channels(&self) -> usize {
        self.weights.cols()
    }
}

/// Pre-sigmoid class activation map of one frame for one class.
#[derive(Debug, Clone)]
pub struct CamMap {
    pub values: Vec<f64>,
    pub class_index: usize,
}

/// Per-frame, per-cell attention, entries strictly inside (0,1).
#[derive(Debug, Clone)]
pub struct AttentionMap {
    values: Tensor,
}

impl AttentionMap {
    /// Wraps a T×N matrix of attention values, validating the open interval.
    pub fn new(values: Tensor) -> Result<Self> {
        if values.dims().len() != 2 {
            return Err(Error::contract(format!(
                "attention map must be T×N, got dims {:?}",
                values.dims()
            )));
        }
        if let Some(i) = values.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::contract(format!(
                "attention value {} at flat index {i} outside (0,1)",
                values.data()[i]
            )));
        }
        Ok(AttentionMap { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn cells(&self) -> usize {
        self.values.cols()
    }

    /// Attention row for frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }
}

fn check_frame_dims(frame: &Tensor, aw: &AttentionWeights) -> Result<()> {
    if frame.dims().len() != 2 {
        return Err(Error::contract(format!(
            "frame must be N×P, got dims {:?}",
            frame.dims()
        )));
    }
    if frame.cols() != aw.channels() {
        return Err(Error::contract(format!(
            "frame has {} channels but attention weights expect {}",
            frame.cols(),
            aw.channels()
        )));
    }
    Ok(())
}

/// Mean-pools the frame over cells, scores every class (bias included when
/// present), and returns the argmax. Ties break to the lowest class index.
/// The returned index is a plain integer: by design no gradient flows through
/// this choice.
pub fn winning_class(frame: &Tensor, aw: &AttentionWeights) -> Result<usize> {
    check_frame_dims(frame, aw)?;
    let (n, p) = (frame.rows(), frame.cols());
    let mut pooled = vec![0.0; p];
    for i in 0..n {
        for (j, v) in frame.row(i).iter().enumerate() {
            pooled[j] += v;
        }
    }
    for v in &mut pooled {
        *v /= n as f64;
    }
    let mut best = 0usize;
    let mut best_logit = f64::NEG_INFINITY;
    for c in 0..aw.num_classes() {
        let mut logit: f64 = aw
            .weights
            .row(c)
            .iter()
            .zip(pooled.iter())
            .map(|(w, x)| w * x)
            .sum();
        if let Some(b) = &aw.bias {
            logit += b[c];
        }
        if logit > best_logit {
            best_logit = logit;
            best = c;
        }
    }
    Ok(best)
}

/// Class activation map: values[i] = Σ_l w[c][l]·frame[i][l]. The bias never
/// enters the map.
pub fn cam(frame: &Tensor, aw: &AttentionWeights, c: usize) -> Result<CamMap> {
    check_frame_dims(frame, aw)?;
    if c >= aw.num_classes() {
        return Err(Error::contract(format!(
            "class index {c} out of {} classes",
            aw.num_classes()
        )));
    }
    let w = aw.weights.row(c);
    let values = (0..frame.rows())
        .map(|i| frame.row(i).iter().zip(w.iter()).map(|(x, w)| x * w).sum())
        .collect();
    Ok(CamMap {
        values,
        class_index: c,
    })
}

/// Nudges a sigmoid output that saturated to exactly 0 or 1 onto the nearest
/// representable value inside (0,1); non-saturated values pass unchanged.
pub(crate) fn clamp_open_unit(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Per-frame attention: m[t][i] = sigmoid(cam of frame t's winning class).
/// Frames are independent, so permuting frames permutes the rows identically.
pub fn attention_map(video: &FeatureVolume, aw: &AttentionWeights) -> Result<AttentionMap> {
    if video.frames() == 0 {
        return Err(Error::contract("attention map of empty video"));
    }
    let (t_len, n) = (video.frames(), video.cells());
    let mut values = Vec::with_capacity(t_len * n);
    for t in 0..t_len {
        let frame = video.frame(t);
        let c = winning_class(frame, aw)?;
        let map = cam(frame, aw, c)?;
        values.extend(map.values.iter().map(|&v| clamp_open_unit(sigmoid(v))));
    }
    AttentionMap::new(Tensor::new(vec![t_len, n], values))
}
