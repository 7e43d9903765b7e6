//! Full pipeline assembly: attention map, per-frame encoding, temporal
//! aggregation, normalization, dropout, and the affine classifier. Holds
//! the named parameter registry, the training-stage trainability sets,
//! checkpoint persistence, and the reverse-mode pass used by the trainer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::attention::{attention_map, winning_class, AttentionMap, AttentionWeights};
use crate::codebook::Codebook;
use crate::dataio::{read_checkpoint, write_checkpoint, CheckpointFlags, FeatureVolume};
use crate::error::{Error, Result};
use crate::numerics::{
    grad_check, log_sum_exp, BufId, GradCheckReport, GradientTape, ParamSpec, Rng, Tensor,
    NORM_EPS,
};
use crate::temporal::{aggregate, finalize_descriptor, GruParams, VideoDescriptor};
use crate::vlad::encode_frame;

/// Temporal pooling choice. `Sum` is the order-invariant baseline; `Gru`
/// is the recurrent aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Gru,
    Sum,
}

impl Aggregator {
    pub fn as_flag(self) -> u8 {
        match self {
            Aggregator::Gru => 0,
            Aggregator::Sum => 1,
        }
    }

    pub fn from_flag(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Aggregator::Gru),
            1 => Ok(Aggregator::Sum),
            other => Err(Error::contract(format!("unknown aggregator flag {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    /// Pre-dropout descriptor (unit norm unless degenerate).
    pub descriptor: VideoDescriptor,
    pub attention: Option<AttentionMap>,
}

/// Gradients keyed by canonical tensor name. Only tensors that take part
/// in the differentiable forward pass appear (the attention bias and the
/// codebook alpha never do).
#[derive(Debug, Clone, Default)]
pub struct Gradients(pub BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(|v| &v[..])
    }

    /// Element-wise accumulation; the key sets must agree.
    pub fn accumulate(&mut self, other: &Gradients) {
        assert_eq!(
            self.0.len(),
            other.0.len(),
            "gradient key sets differ in size"
        );
        for (name, acc) in self.0.iter_mut() {
            let src = other.0.get(name).expect("gradient key sets differ");
            assert_eq!(acc.len(), src.len(), "gradient length mismatch for {name}");
            for (a, b) in acc.iter_mut().zip(src.iter()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.0.values_mut() {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub attention: AttentionWeights,
    pub codebook: Codebook,
    pub gru: GruParams,
    pub fc_weights: Tensor,
    pub fc_bias: Vec<f64>,
    pub aggregator: Aggregator,
    pub attention_enabled: bool,
    pub dropout_rate: f64,
    pub stage: u32,
}

impl ModelParams {
    /// Fresh model: GRU and classifier drawn from the rng, codebook and
    /// attention supplied. The classifier matrix is uniform(−1/√D, 1/√D)
    /// with zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        num_classes: usize,
        attention: AttentionWeights,
        codebook: Codebook,
        hidden: usize,
        aggregator: Aggregator,
        attention_enabled: bool,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::contract("need at least one class"));
        }
        let gru = GruParams::init(hidden, codebook.p(), rng)?;
        let d = match aggregator {
            Aggregator::Gru => codebook.k() * hidden,
            Aggregator::Sum => codebook.k() * codebook.p(),
        };
        let bound = 1.0 / (d as f64).sqrt();
        let fc_weights = Tensor::new(
            vec![num_classes, d],
            rng.uniform_vec(num_classes * d, -bound, bound),
        );
        let params = ModelParams {
            attention,
            codebook,
            gru,
            fc_weights,
            fc_bias: vec![0.0; num_classes],
            aggregator,
            attention_enabled,
            dropout_rate,
            stage: 1,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::contract(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.attention.channels() != self.codebook.p() {
            return Err(Error::contract(format!(
                "attention channels {} != codebook P {}",
                self.attention.channels(),
                self.codebook.p()
            )));
        }
        if self.gru.input() != self.codebook.p() {
            return Err(Error::contract(format!(
                "GRU input {} != codebook P {}",
                self.gru.input(),
                self.codebook.p()
            )));
        }
        let d = self.descriptor_len();
        if self.fc_weights.dims().len() != 2 || self.fc_weights.cols() != d {
            return Err(Error::contract(format!(
                "classifier dims {:?} incompatible with descriptor length {d}",
                self.fc_weights.dims()
            )));
        }
        if self.fc_bias.len() != self.fc_weights.rows() {
            return Err(Error::contract(format!(
                "classifier bias length {} != class count {}",
                self.fc_bias.len(),
                self.fc_weights.rows()
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.fc_weights.rows()
    }

    pub fn descriptor_len(&self) -> usize {
        match self.aggregator {
            Aggregator::Gru => self.codebook.k() * self.gru.hidden(),
            Aggregator::Sum => self.codebook.k() * self.codebook.p(),
        }
    }

    fn check_video(&self, video: &FeatureVolume) -> Result<()> {
        if video.channels() != self.codebook.p() {
            return Err(Error::contract(format!(
                "encoder stage: video channels {} != codebook P {}",
                video.channels(),
                self.codebook.p()
            )));
        }
        if video.frames() == 0 {
            return Err(Error::contract("encoder stage: empty video"));
        }
        Ok(())
    }

    /// Names of every persisted tensor, in checkpoint order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["attention.weights".to_string()];
        if self.attention.bias.is_some() {
            names.push("attention.bias".to_string());
        }
        names.extend(
            [
                "codebook.centers",
                "codebook.assign_weights",
                "codebook.assign_bias",
                "codebook.alpha",
                "gru.wz",
                "gru.wr",
                "gru.wh",
                "gru.uz",
                "gru.ur",
                "gru.uh",
                "gru.bz",
                "gru.br",
                "gru.bh",
                "fc.weights",
                "fc.bias",
            ]
            .map(String::from),
        );
        names
    }

    /// Copy of a named tensor; vectors come back as 1-D tensors.
    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let vec1 = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec());
        Some(match name {
            "attention.weights" => self.attention.weights.clone(),
            "attention.bias" => vec1(self.attention.bias.as_deref()?),
            "codebook.centers" => self.codebook.centers.clone(),
            "codebook.assign_weights" => self.codebook.assign_weights.clone(),
            "codebook.assign_bias" => vec1(&self.codebook.assign_bias),
            "codebook.alpha" => Tensor::scalar(self.codebook.alpha),
            "gru.wz" => self.gru.wz.clone(),
            "gru.wr" => self.gru.wr.clone(),
            "gru.wh" => self.gru.wh.clone(),
            "gru.uz" => self.gru.uz.clone(),
            "gru.ur" => self.gru.ur.clone(),
            "gru.uh" => self.gru.uh.clone(),
            "gru.bz" => vec1(&self.gru.bz),
            "gru.br" => vec1(&self.gru.br),
            "gru.bh" => vec1(&self.gru.bh),
            "fc.weights" => self.fc_weights.clone(),
            "fc.bias" => vec1(&self.fc_bias),
            _ => return None,
        })
    }

    /// Replaces a named tensor's values; the shape is fixed by the model.
    pub fn set_tensor(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let current = self
            .tensor(name)
            .ok_or_else(|| Error::contract(format!("unknown tensor {name}")))?;
        if current.len() != values.len() {
            return Err(Error::contract(format!(
                "tensor {name} has {} elements, got {}",
                current.len(),
                values.len()
            )));
        }
        let t = Tensor::new(current.dims().to_vec(), values.to_vec());
        match name {
            "attention.weights" => {
                self.attention = AttentionWeights::new(t, self.attention.bias.clone())?;
            }
            "attention.bias" => {
                self.attention =
                    AttentionWeights::new(self.attention.weights.clone(), Some(values.to_vec()))?;
            }
            "codebook.centers" => self.codebook.centers = t,
            "codebook.assign_weights" => self.codebook.assign_weights = t,
            "codebook.assign_bias" => self.codebook.assign_bias = values.to_vec(),
            "codebook.alpha" => self.codebook.alpha = values[0],
            "gru.wz" => self.gru.wz = t,
            "gru.wr" => self.gru.wr = t,
            "gru.wh" => self.gru.wh = t,
            "gru.uz" => self.gru.uz = t,
            "gru.ur" => self.gru.ur = t,
            "gru.uh" => self.gru.uh = t,
            "gru.bz" => self.gru.bz = values.to_vec(),
            "gru.br" => self.gru.br = values.to_vec(),
            "gru.bh" => self.gru.bh = values.to_vec(),
            "fc.weights" => self.fc_weights = t,
            "fc.bias" => self.fc_bias = values.to_vec(),
            _ => unreachable!("tensor() accepted the name"),
        }
        Ok(())
    }

    /// Tensors updated while training the given stage. Stage 1 trains the
    /// aggregator and classifier; stage 2 adds the attention weights and
    /// the (decoupled) codebook parameters. `freeze_attention` pins the
    /// attention weights in stage 2.
    pub fn trainable_names(stage: u32, freeze_attention: bool) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = [
            "gru.wz", "gru.wr", "gru.wh", "gru.uz", "gru.ur", "gru.uh", "gru.bz", "gru.br",
            "gru.bh", "fc.weights", "fc.bias",
        ]
        .map(String::from)
        .into();
        if stage >= 2 {
            set.insert("codebook.centers".to_string());
            set.insert("codebook.assign_weights".to_string());
            set.insert("codebook.assign_bias".to_string());
            if !freeze_attention {
                set.insert("attention.weights".to_string());
            }
        }
        set
    }

    /// Inverted-dropout mask: each element 0 with probability `rate`, else
    /// 1/(1−rate).
    pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
        let keep = 1.0 / (1.0 - rate);
        (0..len)
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect()
    }

    /// Runs the pure pipeline. Train mode applies inverted dropout to the
    /// classifier input and needs an rng when dropout_rate > 0; the
    /// returned descriptor is always the clean pre-dropout one.
    pub fn forward(
        &self,
        video: &FeatureVolume,
        mode: Mode,
        mut rng: Option<&mut Rng>,
    ) -> Result<ForwardOutput> {
        self.validate()?;
        self.check_video(video)?;
        let map = if self.attention_enabled {
            Some(attention_map(video, &self.attention)?)
        } else {
            None
        };
        let mut fds = Vec::with_capacity(video.frames());
        for t in 0..video.frames() {
            let attn = map.as_ref().map(|m| m.frame(t));
            fds.push(encode_frame(video.frame(t), attn, &self.codebook, t)?);
        }
        let state = match self.aggregator {
            Aggregator::Gru => aggregate(&fds, &self.gru)?,
            Aggregator::Sum => {
                let (k, p) = (self.codebook.k(), self.codebook.p());
                let mut total = vec![0.0; k * p];
                for fd in &fds {
                    for (acc, v) in total.iter_mut().zip(fd.values.iter()) {
                        *acc += v;
                    }
                }
                Tensor::new(vec![k, p], total)
            }
        };
        let descriptor = finalize_descriptor(&state);

        let mut classifier_in = descriptor.values.clone();
        if mode == Mode::Train && self.dropout_rate > 0.0 {
            let rng = rng.as_deref_mut().ok_or_else(|| {
                Error::contract("train-mode forward with dropout needs an rng")
            })?;
            let mask = Self::dropout_mask(classifier_in.len(), self.dropout_rate, rng);
            for (v, m) in classifier_in.iter_mut().zip(mask.iter()) {
                *v *= m;
            }
        }
        let logits = self.classify(&classifier_in);
        Ok(ForwardOutput {
            logits,
            descriptor,
            attention: map,
        })
    }

    fn classify(&self, d: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| {
                self.fc_weights
                    .row(c)
                    .iter()
                    .zip(d.iter())
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.fc_bias[c]
            })
            .collect()
    }

    /// Loss and gradients for one sample via the recorded tape. The
    /// dropout mask, when given, must have descriptor length; the caller
    /// owns mask randomness so parallel workers stay reproducible.
    pub fn forward_backward(
        &self,
        video: &FeatureVolume,
        label: usize,
        dropout_mask: Option<&[f64]>,
    ) -> Result<(f64, Gradients)> {
        self.validate()?;
        self.check_video(video)?;
        if label >= self.num_classes() {
            return Err(Error::contract(format!(
                "label {label} out of range for {} classes",
                self.num_classes()
            )));
        }
        if let Some(m) = dropout_mask {
            if m.len() != self.descriptor_len() {
                return Err(Error::contract(format!(
                    "dropout mask length {} != descriptor length {}",
                    m.len(),
                    self.descriptor_len()
                )));
            }
        }

        let mut tape = GradientTape::new();
        let vec1 = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec());
        let w_att = if self.attention_enabled {
            Some(tape.input(&self.attention.weights))
        } else {
            None
        };
        let centers = tape.input(&self.codebook.centers);
        let aw = tape.input(&self.codebook.assign_weights);
        let ab = tape.input(&vec1(&self.codebook.assign_bias));
        let gwz = tape.input(&self.gru.wz);
        let gwr = tape.input(&self.gru.wr);
        let gwh = tape.input(&self.gru.wh);
        let guz = tape.input(&self.gru.uz);
        let gur = tape.input(&self.gru.ur);
        let guh = tape.input(&self.gru.uh);
        let gbz = tape.input(&vec1(&self.gru.bz));
        let gbr = tape.input(&vec1(&self.gru.br));
        let gbh = tape.input(&vec1(&self.gru.bh));
        let fcw = tape.input(&self.fc_weights);
        let fcb = tape.input(&vec1(&self.fc_bias));

        // Per-frame encoding. The winning class is chosen outside the tape
        // (a detached argmax; the bias counts for selection only).
        let mut encoded: Vec<BufId> = Vec::with_capacity(video.frames());
        for t in 0..video.frames() {
            let f = tape.input(video.frame(t));
            let weight = match w_att {
                Some(w) => {
                    let c = winning_class(video.frame(t), &self.attention)?;
                    let row = tape.row_gather(w, c);
                    let cam = tape.matvec(f, row);
                    Some(tape.sigmoid(cam))
                }
                None => None,
            };
            let raw = tape.matmul_tb(f, aw);
            let scores = tape.add_row_broadcast(raw, ab);
            let soft = tape.softmax_rows(scores);
            let a = match weight {
                Some(m) => tape.scale_rows(soft, m),
                None => soft,
            };
            let weighted = tape.matmul_ta(a, f);
            let mass = tape.col_sum(a);
            let shift = tape.scale_rows(centers, mass);
            encoded.push(tape.sub(weighted, shift));
        }

        let state = match self.aggregator {
            Aggregator::Gru => {
                let (k, h) = (self.codebook.k(), self.gru.hidden());
                let mut hs = tape.input(&Tensor::zeros(vec![k, h]));
                for &v in &encoded {
                    let xz = tape.matmul_tb(v, gwz);
                    let hz = tape.matmul_tb(hs, guz);
                    let sz = tape.add(xz, hz);
                    let pz = tape.add_row_broadcast(sz, gbz);
                    let z = tape.sigmoid(pz);
                    let xr = tape.matmul_tb(v, gwr);
                    let hr = tape.matmul_tb(hs, gur);
                    let sr = tape.add(xr, hr);
                    let pr = tape.add_row_broadcast(sr, gbr);
                    let r = tape.sigmoid(pr);
                    let rh = tape.mul(r, hs);
                    let xh = tape.matmul_tb(v, gwh);
                    let hh = tape.matmul_tb(rh, guh);
                    let sh = tape.add(xh, hh);
                    let ph = tape.add_row_broadcast(sh, gbh);
                    let cand = tape.tanh(ph);
                    let zh = tape.mul(z, hs);
                    let keep = tape.sub(hs, zh);
                    let zc = tape.mul(z, cand);
                    hs = tape.add(keep, zc);
                }
                hs
            }
            Aggregator::Sum => {
                let mut total = encoded[0];
                for &v in &encoded[1..] {
                    total = tape.add(total, v);
                }
                total
            }
        };

        let d = self.descriptor_len();
        let intra = tape.normalize_rows(state, NORM_EPS);
        let flat = tape.reshape(intra, vec![1, d]);
        let global = tape.normalize_rows(flat, NORM_EPS);
        let mut desc = tape.reshape(global, vec![d]);
        if let Some(mask) = dropout_mask {
            let m = tape.input(&vec1(mask));
            desc = tape.mul(desc, m);
        }
        let affine = tape.matvec(fcw, desc);
        let logits = tape.add(affine, fcb);
        let loss_id = tape.cross_entropy(logits, label);
        let loss = tape.value(loss_id)[0];
        tape.backward(loss_id);

        let mut grads = BTreeMap::new();
        let mut take = |name: &str, id: BufId| {
            grads.insert(name.to_string(), tape.grad(id).to_vec());
        };
        if let Some(w) = w_att {
            take("attention.weights", w);
        }
        take("codebook.centers", centers);
        take("codebook.assign_weights", aw);
        take("codebook.assign_bias", ab);
        take("gru.wz", gwz);
        take("gru.wr", gwr);
        take("gru.wh", gwh);
        take("gru.uz", guz);
        take("gru.ur", gur);
        take("gru.uh", guh);
        take("gru.bz", gbz);
        take("gru.br", gbr);
        take("gru.bh", gbh);
        take("fc.weights", fcw);
        take("fc.bias", fcb);
        Ok((loss, Gradients(grads)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let tensors: Vec<(String, Tensor)> = self
            .tensor_names()
            .into_iter()
            .map(|n| {
                let t = self.tensor(&n).expect("tensor_names lists known tensors");
                (n, t)
            })
            .collect();
        let flags = CheckpointFlags {
            aggregator: self.aggregator.as_flag(),
            attention_enabled: self.attention_enabled,
            dropout_rate: self.dropout_rate,
            stage: self.stage,
        };
        write_checkpoint(path, &tensors, flags)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, flags) = read_checkpoint(path)?;
        let mut map: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, t) in tensors {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::contract(format!("duplicate tensor {name} in checkpoint")));
            }
        }
        let att_weights = map
            .remove("attention.weights")
            .ok_or_else(|| Error::contract("checkpoint missing tensor attention.weights"))?;
        let att_bias = map.remove("attention.bias").map(|t| t.data().to_vec());
        let mut pull = |name: &str| -> Result<Tensor> {
            map.remove(name)
                .ok_or_else(|| Error::contract(format!("checkpoint missing tensor {name}")))
        };
        let attention = AttentionWeights::new(att_weights, att_bias)?;
        let alpha_t = pull("codebook.alpha")?;
        if alpha_t.len() != 1 {
            return Err(Error::contract("codebook.alpha must hold one value"));
        }
        let codebook = Codebook::from_parts(
            pull("codebook.centers")?,
            pull("codebook.assign_weights")?,
            pull("codebook.assign_bias")?.data().to_vec(),
            alpha_t.data()[0],
        )?;
        let gru = GruParams {
            wz: pull("gru.wz")?,
            wr: pull("gru.wr")?,
            wh: pull("gru.wh")?,
            uz: pull("gru.uz")?,
            ur: pull("gru.ur")?,
            uh: pull("gru.uh")?,
            bz: pull("gru.bz")?.data().to_vec(),
            br: pull("gru.br")?.data().to_vec(),
            bh: pull("gru.bh")?.data().to_vec(),
        };
        let fc_weights = pull("fc.weights")?;
        let fc_bias = pull("fc.bias")?.data().to_vec();
        if let Some(extra) = map.keys().next() {
            return Err(Error::contract(format!("checkpoint has unknown tensor {extra}")));
        }
        let params = ModelParams {
            attention,
            codebook,
            gru,
            fc_weights,
            fc_bias,
            aggregator: Aggregator::from_flag(flags.aggregator)?,
            attention_enabled: flags.attention_enabled,
            dropout_rate: flags.dropout_rate,
            stage: flags.stage,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Stable cross-entropy of a logit vector against an integer label.
pub fn loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::contract(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Compares the tape gradients of the whole pipeline against central
/// differences of the pure forward pass (dropout off). The two paths share
/// no code beyond primitive arithmetic, so this cross-validates both.
pub fn gradcheck_full_pipeline(
    params: &ModelParams,
    video: &FeatureVolume,
    label: usize,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    gradcheck_pipeline(params, video, label, None, eps, tol)
}

/// Like [`gradcheck_full_pipeline`] but restricted to the tensors in
/// `subset`, mirroring what a training stage with frozen tensors would
/// consume. Names absent from the gradient map are skipped.
pub fn gradcheck_pipeline_subset(
    params: &ModelParams,
    video: &FeatureVolume,
    label: usize,
    subset: &BTreeSet<String>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    gradcheck_pipeline(params, video, label, Some(subset), eps, tol)
}

fn gradcheck_pipeline(
    params: &ModelParams,
    video: &FeatureVolume,
    label: usize,
    subset: Option<&BTreeSet<String>>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = params.forward_backward(video, label, None)?;
    let entries: Vec<(String, Tensor, Vec<f64>)> = grads
        .0
        .iter()
        .filter(|(name, _)| subset.is_none_or(|s| s.contains(*name)))
        .map(|(name, g)| {
            let t = params.tensor(name).expect("gradient names are tensor names");
            (name.clone(), t, g.clone())
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::contract(
            "gradient check subset selects no differentiable tensors",
        ));
    }
    let specs: Vec<ParamSpec> = entries
        .iter()
        .map(|(name, t, g)| ParamSpec {
            name,
            value: t,
            analytic: g,
        })
        .collect();
    let names: Vec<String> = entries.iter().map(|(n, _, _)| n.clone()).collect();
    let base = params.clone();
    let loss_fn = |ts: &[Tensor]| -> Result<f64> {
        let mut p = base.clone();
        for (name, t) in names.iter().zip(ts.iter()) {
            p.set_tensor(name, t.data())?;
        }
        let out = p.forward(video, Mode::Eval, None)?;
        loss(&out.logits, label)
    };
    grad_check(loss_fn, &specs, eps, tol)
}
