//! Temporal aggregation: each cluster's row in the sequence of frame
//! descriptors drives its own GRU stream, all K streams sharing one
//! parameter set. The final hidden states are stacked, row-normalized,
//! flattened, and L2-normalized into the video descriptor.

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, sigmoid, Rng, Tensor, NORM_EPS};
use crate::vlad::FrameDescriptor;

/// One GRU parameter set shared by all K cluster streams.
///
/// Gate convention: z = σ(Wz·x + Uz·h + bz), r = σ(Wr·x + Ur·h + br),
/// h̃ = tanh(Wh·x + Uh·(r⊙h) + bh), h' = (1−z)⊙h + z⊙h̃. Here z gates the
/// candidate in (not the carry), so zero parameters give h' = 0.5·h.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub wz: Tensor,
    pub wr: Tensor,
    pub wh: Tensor,
    pub uz: Tensor,
    pub ur: Tensor,
    pub uh: Tensor,
    pub bz: Vec<f64>,
    pub br: Vec<f64>,
    pub bh: Vec<f64>,
}

impl GruParams {
    /// All parameters drawn uniform(−1/√H, 1/√H).
    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(Error::contract("GRU sizes must be >= 1"));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let mat = |r: usize, c: usize, rng: &mut Rng| {
            Tensor::new(vec![r, c], rng.uniform_vec(r * c, -bound, bound))
        };
        Ok(GruParams {
            wz: mat(hidden, input, rng),
            wr: mat(hidden, input, rng),
            wh: mat(hidden, input, rng),
            uz: mat(hidden, hidden, rng),
            ur: mat(hidden, hidden, rng),
            uh: mat(hidden, hidden, rng),
            bz: rng.uniform_vec(hidden, -bound, bound),
            br: rng.uniform_vec(hidden, -bound, bound),
            bh: rng.uniform_vec(hidden, -bound, bound),
        })
    }

    pub fn zeros(hidden: usize, input: usize) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(Error::contract("GRU sizes must be >= 1"));
        }
        Ok(GruParams {
            wz: Tensor::zeros(vec![hidden, input]),
            wr: Tensor::zeros(vec![hidden, input]),
            wh: Tensor::zeros(vec![hidden, input]),
            uz: Tensor::zeros(vec![hidden, hidden]),
            ur: Tensor::zeros(vec![hidden, hidden]),
            uh: Tensor::zeros(vec![hidden, hidden]),
            bz: vec![0.0; hidden],
            br: vec![0.0; hidden],
            bh: vec![0.0; hidden],
        })
    }

    pub fn hidden(&self) -> usize {
        self.wz.rows()
    }

    pub fn input(&self) -> usize {
        self.wz.cols()
    }

    fn check(&self) -> Result<()> {
        let (h, p) = (self.hidden(), self.input());
        let mats = [
            ("wz", &self.wz, h, p),
            ("wr", &self.wr, h, p),
            ("wh", &self.wh, h, p),
            ("uz", &self.uz, h, h),
            ("ur", &self.ur, h, h),
            ("uh", &self.uh, h, h),
        ];
        for (name, m, r, c) in mats {
            if m.dims() != [r, c] {
                return Err(Error::contract(format!(
                    "{name} dims {:?}, expected [{r}, {c}]",
                    m.dims()
                )));
            }
        }
        for (name, b) in [("bz", &self.bz), ("br", &self.br), ("bh", &self.bh)] {
            if b.len() != h {
                return Err(Error::contract(format!(
                    "{name} length {}, expected {h}",
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

/// Hidden states of the K cluster streams.
#[derive(Debug, Clone)]
pub struct GruState {
    pub h: Tensor,
}

/// Unit-length flattened descriptor of a whole video.
#[derive(Debug, Clone)]
pub struct VideoDescriptor {
    pub values: Vec<f64>,
    /// True when the pre-normalization vector was below the norm guard and
    /// passed through unscaled.
    pub degenerate: bool,
}

fn matvec_into(m: &Tensor, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += m.row(i).iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// One GRU update for a single stream.
pub fn gru_step(x: &[f64], h: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    p.check()?;
    if x.len() != p.input() || h.len() != p.hidden() {
        return Err(Error::contract(format!(
            "gru_step got x len {} h len {}, params expect P={} H={}",
            x.len(),
            h.len(),
            p.input(),
            p.hidden()
        )));
    }
    let hn = p.hidden();
    let mut z = p.bz.clone();
    matvec_into(&p.wz, x, &mut z);
    matvec_into(&p.uz, h, &mut z);
    let mut r = p.br.clone();
    matvec_into(&p.wr, x, &mut r);
    matvec_into(&p.ur, h, &mut r);
    for v in z.iter_mut() {
        *v = sigmoid(*v);
    }
    for v in r.iter_mut() {
        *v = sigmoid(*v);
    }
    let rh: Vec<f64> = r.iter().zip(h.iter()).map(|(a, b)| a * b).collect();
    let mut cand = p.bh.clone();
    matvec_into(&p.wh, x, &mut cand);
    matvec_into(&p.uh, &rh, &mut cand);
    let mut out = Vec::with_capacity(hn);
    for i in 0..hn {
        let ht = cand[i].tanh();
        out.push((1.0 - z[i]) * h[i] + z[i] * ht);
    }
    Ok(out)
}

/// Runs every cluster stream over the frame sequence from zero state and
/// stacks the final hidden states into a K×H matrix.
pub fn aggregate(frames: &[FrameDescriptor], p: &GruParams) -> Result<Tensor> {
    p.check()?;
    if frames.is_empty() {
        return Err(Error::contract("aggregate needs at least one frame"));
    }
    let (k, pp) = (frames[0].values.rows(), frames[0].values.cols());
    if pp != p.input() {
        return Err(Error::contract(format!(
            "frame descriptor width {} does not match GRU input {}",
            pp,
            p.input()
        )));
    }
    for (t, f) in frames.iter().enumerate() {
        if f.values.dims() != [k, pp] {
            return Err(Error::contract(format!(
                "frame {t} dims {:?} differ from first frame [{k}, {pp}]",
                f.values.dims()
            )));
        }
    }
    let h = p.hidden();
    let mut state = vec![vec![0.0; h]; k];
    for f in frames {
        for (kk, s) in state.iter_mut().enumerate() {
            *s = gru_step(f.values.row(kk), s, p)?;
        }
    }
    let mut data = Vec::with_capacity(k * h);
    for s in state {
        data.extend(s);
    }
    Ok(Tensor::new(vec![k, h], data))
}

/// Row-normalizes the K×H state matrix, flattens row-major, and
/// L2-normalizes the result.
pub fn finalize_descriptor(m: &Tensor) -> VideoDescriptor {
    let mut flat = Vec::with_capacity(m.len());
    let mut degenerate = false;
    for k in 0..m.rows() {
        let (row, guarded) = l2_normalize(m.row(k), NORM_EPS);
        degenerate |= guarded;
        flat.extend(row);
    }
    let (values, guarded) = l2_normalize(&flat, NORM_EPS);
    VideoDescriptor {
        values,
        degenerate: degenerate || guarded,
    }
}
