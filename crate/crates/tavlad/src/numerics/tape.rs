//! Reverse-mode gradient engine over a fixed primitive set.
//!
//! A `GradientTape` owns an arena of value buffers. Each operation computes
//! its result eagerly, appends the result buffer, and records which buffers
//! it read so `backward` can replay the recording once in reverse, applying
//! hand-derived adjoints. Tapes are single-owner and built per sample; they
//! are never shared across threads.
//!
//! Shape violations are programming errors and panic. Non-finite values are
//! deliberately propagated (not trapped) so a diverging loss surfaces as a
//! non-finite scalar the trainer can report with context.

use super::ops::sigmoid;
use super::tensor::Tensor;

/// Handle to a buffer on a tape. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufId(usize);

struct Buf {
    dims: Vec<usize>,
    data: Vec<f64>,
}

enum Op {
    /// C = A·B
    Matmul { a: BufId, b: BufId, out: BufId },
    /// C = Aᵀ·B
    MatmulTA { a: BufId, b: BufId, out: BufId },
    /// C = A·Bᵀ
    MatmulTB { a: BufId, b: BufId, out: BufId },
    /// y = A·x
    Matvec { a: BufId, x: BufId, out: BufId },
    Add { a: BufId, b: BufId, out: BufId },
    Sub { a: BufId, b: BufId, out: BufId },
    Mul { a: BufId, b: BufId, out: BufId },
    Scale { a: BufId, s: f64, out: BufId },
    /// out[i][j] = a[i][j] + b[j]
    AddRowBroadcast { a: BufId, b: BufId, out: BufId },
    /// out[i][j] = a[i][j] · v[i]
    ScaleRows { a: BufId, v: BufId, out: BufId },
    /// out[j] = Σ_i a[i][j]
    ColSum { a: BufId, out: BufId },
    /// out = a[row]
    RowGather { a: BufId, row: usize, out: BufId },
    Concat { parts: Vec<BufId>, out: BufId },
    Reshape { a: BufId, out: BufId },
    SumAll { a: BufId, out: BufId },
    Sigmoid { a: BufId, out: BufId },
    Tanh { a: BufId, out: BufId },
    SoftmaxRows { a: BufId, out: BufId },
    /// Per-row L2 normalization; rows with norm below eps pass through.
    NormalizeRows { a: BufId, eps: f64, out: BufId },
    /// loss = logsumexp(logits) − logits[label]; probs cached for the adjoint.
    CrossEntropy { logits: BufId, label: usize, probs: Vec<f64>, out: BufId },
}

pub struct GradientTape {
    bufs: Vec<Buf>,
    ops: Vec<Op>,
    grads: Option<Vec<Vec<f64>>>,
}

impl Default for GradientTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradientTape {
    pub fn new() -> Self {
        GradientTape {
            bufs: Vec::new(),
            ops: Vec::new(),
            grads: None,
        }
    }

    fn push(&mut self, dims: Vec<usize>, data: Vec<f64>) -> BufId {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.bufs.push(Buf { dims, data });
        BufId(self.bufs.len() - 1)
    }

    /// Registers a leaf buffer (input or parameter). Leaves record no op;
    /// their gradients accumulate during backward and stay zero when the
    /// buffer never reaches the loss.
    pub fn input(&mut self, t: &Tensor) -> BufId {
        self.push(t.dims().to_vec(), t.data().to_vec())
    }

    pub fn value(&self, id: BufId) -> &[f64] {
        &self.bufs[id.0].data
    }

    pub fn dims(&self, id: BufId) -> &[usize] {
        &self.bufs[id.0].dims
    }

    pub fn value_tensor(&self, id: BufId) -> Tensor {
        Tensor::new(self.bufs[id.0].dims.clone(), self.bufs[id.0].data.clone())
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    fn matrix_dims(&self, id: BufId, ctx: &str) -> (usize, usize) {
        let d = &self.bufs[id.0].dims;
        assert_eq!(d.len(), 2, "{ctx}: expected matrix, got dims {d:?}");
        (d[0], d[1])
    }

    fn vector_len(&self, id: BufId, ctx: &str) -> usize {
        let d = &self.bufs[id.0].dims;
        assert_eq!(d.len(), 1, "{ctx}: expected vector, got dims {d:?}");
        d[0]
    }

    pub fn matmul(&mut self, a: BufId, b: BufId) -> BufId {
        let (m, k) = self.matrix_dims(a, "matmul lhs");
        let (k2, n) = self.matrix_dims(b, "matmul rhs");
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        {
            let av = &self.bufs[a.0].data;
            let bv = &self.bufs[b.0].data;
            for i in 0..m {
                for l in 0..k {
                    let ail = av[i * k + l];
                    for j in 0..n {
                        out[i * n + j] += ail * bv[l * n + j];
                    }
                }
            }
        }
        let out = self.push(vec![m, n], out);
        self.ops.push(Op::Matmul { a, b, out });
        out
    }

    pub fn matmul_ta(&mut self, a: BufId, b: BufId) -> BufId {
        let (n, m) = self.matrix_dims(a, "matmul_ta lhs");
        let (n2, p) = self.matrix_dims(b, "matmul_ta rhs");
        assert_eq!(n, n2, "matmul_ta leading dims {n} vs {n2}");
        let mut out = vec![0.0; m * p];
        {
            let av = &self.bufs[a.0].data;
            let bv = &self.bufs[b.0].data;
            for r in 0..n {
                for i in 0..m {
                    let ari = av[r * m + i];
                    for j in 0..p {
                        out[i * p + j] += ari * bv[r * p + j];
                    }
                }
            }
        }
        let out = self.push(vec![m, p], out);
        self.ops.push(Op::MatmulTA { a, b, out });
        out
    }

    pub fn matmul_tb(&mut self, a: BufId, b: BufId) -> BufId {
        let (m, k) = self.matrix_dims(a, "matmul_tb lhs");
        let (n, k2) = self.matrix_dims(b, "matmul_tb rhs");
        assert_eq!(k, k2, "matmul_tb inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        {
            let av = &self.bufs[a.0].data;
            let bv = &self.bufs[b.0].data;
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for l in 0..k {
                        acc += av[i * k + l] * bv[j * k + l];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        let out = self.push(vec![m, n], out);
        self.ops.push(Op::MatmulTB { a, b, out });
        out
    }

    pub fn matvec(&mut self, a: BufId, x: BufId) -> BufId {
        let (m, n) = self.matrix_dims(a, "matvec lhs");
        let xlen = self.vector_len(x, "matvec rhs");
        assert_eq!(n, xlen, "matvec dims {n} vs {xlen}");
        let mut out = vec![0.0; m];
        {
            let av = &self.bufs[a.0].data;
            let xv = &self.bufs[x.0].data;
            for i in 0..m {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += av[i * n + j] * xv[j];
                }
                out[i] = acc;
            }
        }
        let out = self.push(vec![m], out);
        self.ops.push(Op::Matvec { a, x, out });
        out
    }

    fn elementwise(&mut self, a: BufId, b: BufId, ctx: &str, f: impl Fn(f64, f64) -> f64) -> Buf {
        assert_eq!(
            self.bufs[a.0].dims, self.bufs[b.0].dims,
            "{ctx}: shape mismatch"
        );
        let data = self.bufs[a.0]
            .data
            .iter()
            .zip(self.bufs[b.0].data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Buf {
            dims: self.bufs[a.0].dims.clone(),
            data,
        }
    }

    pub fn add(&mut self, a: BufId, b: BufId) -> BufId {
        let buf = self.elementwise(a, b, "add", |x, y| x + y);
        let out = self.push(buf.dims, buf.data);
        self.ops.push(Op::Add { a, b, out });
        out
    }

    pub fn sub(&mut self, a: BufId, b: BufId) -> BufId {
        let buf = self.elementwise(a, b, "sub", |x, y| x - y);
        let out = self.push(buf.dims, buf.data);
        self.ops.push(Op::Sub { a, b, out });
        out
    }

    pub fn mul(&mut self, a: BufId, b: BufId) -> BufId {
        let buf = self.elementwise(a, b, "mul", |x, y| x * y);
        let out = self.push(buf.dims, buf.data);
        self.ops.push(Op::Mul { a, b, out });
        out
    }

    pub fn scale(&mut self, a: BufId, s: f64) -> BufId {
        let dims = self.bufs[a.0].dims.clone();
        let data = self.bufs[a.0].data.iter().map(|&x| x * s).collect();
        let out = self.push(dims, data);
        self.ops.push(Op::Scale { a, s, out });
        out
    }

    pub fn add_row_broadcast(&mut self, a: BufId, b: BufId) -> BufId {
        let (m, n) = self.matrix_dims(a, "add_row_broadcast lhs");
        let blen = self.vector_len(b, "add_row_broadcast rhs");
        assert_eq!(n, blen, "add_row_broadcast cols {n} vs {blen}");
        let mut data = self.bufs[a.0].data.clone();
        {
            let bv = &self.bufs[b.0].data;
            for i in 0..m {
                for j in 0..n {
                    data[i * n + j] += bv[j];
                }
            }
        }
        let out = self.push(vec![m, n], data);
        self.ops.push(Op::AddRowBroadcast { a, b, out });
        out
    }

    pub fn scale_rows(&mut self, a: BufId, v: BufId) -> BufId {
        let (m, n) = self.matrix_dims(a, "scale_rows lhs");
        let vlen = self.vector_len(v, "scale_rows rhs");
        assert_eq!(m, vlen, "scale_rows rows {m} vs {vlen}");
        let mut data = self.bufs[a.0].data.clone();
        {
            let vv = &self.bufs[v.0].data;
            for i in 0..m {
                for j in 0..n {
                    data[i * n + j] *= vv[i];
                }
            }
        }
        let out = self.push(vec![m, n], data);
        self.ops.push(Op::ScaleRows { a, v, out });
        out
    }

    pub fn col_sum(&mut self, a: BufId) -> BufId {
        let (m, n) = self.matrix_dims(a, "col_sum");
        let mut data = vec![0.0; n];
        {
            let av = &self.bufs[a.0].data;
            for i in 0..m {
                for j in 0..n {
                    data[j] += av[i * n + j];
                }
            }
        }
        let out = self.push(vec![n], data);
        self.ops.push(Op::ColSum { a, out });
        out
    }

    pub fn row_gather(&mut self, a: BufId, row: usize) -> BufId {
        let (m, n) = self.matrix_dims(a, "row_gather");
        assert!(row < m, "row_gather row {row} out of {m}");
        let data = self.bufs[a.0].data[row * n..(row + 1) * n].to_vec();
        let out = self.push(vec![n], data);
        self.ops.push(Op::RowGather { a, row, out });
        out
    }

    /// Concatenates the flattened contents of `parts` into one vector.
    pub fn concat(&mut self, parts: &[BufId]) -> BufId {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&self.bufs[p.0].data);
        }
        let len = data.len();
        let out = self.push(vec![len], data);
        self.ops.push(Op::Concat {
            parts: parts.to_vec(),
            out,
        });
        out
    }

    pub fn reshape(&mut self, a: BufId, dims: Vec<usize>) -> BufId {
        assert_eq!(
            dims.iter().product::<usize>(),
            self.bufs[a.0].data.len(),
            "reshape to {dims:?} from {} elements",
            self.bufs[a.0].data.len()
        );
        let data = self.bufs[a.0].data.clone();
        let out = self.push(dims, data);
        self.ops.push(Op::Reshape { a, out });
        out
    }

    pub fn sum_all(&mut self, a: BufId) -> BufId {
        let s: f64 = self.bufs[a.0].data.iter().sum();
        let out = self.push(vec![1], vec![s]);
        self.ops.push(Op::SumAll { a, out });
        out
    }

    pub fn sigmoid(&mut self, a: BufId) -> BufId {
        let dims = self.bufs[a.0].dims.clone();
        let data = self.bufs[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let out = self.push(dims, data);
        self.ops.push(Op::Sigmoid { a, out });
        out
    }

    pub fn tanh(&mut self, a: BufId) -> BufId {
        let dims = self.bufs[a.0].dims.clone();
        let data = self.bufs[a.0].data.iter().map(|&x| x.tanh()).collect();
        let out = self.push(dims, data);
        self.ops.push(Op::Tanh { a, out });
        out
    }

    /// Row-wise softmax with max subtraction; the same algorithm as the pure
    /// `softmax` so both routes agree bit-for-bit on finite input.
    pub fn softmax_rows(&mut self, a: BufId) -> BufId {
        let (m, n) = self.matrix_dims(a, "softmax_rows");
        assert!(n > 0, "softmax_rows on zero-width matrix");
        let mut data = self.bufs[a.0].data.clone();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = self.push(vec![m, n], data);
        self.ops.push(Op::SoftmaxRows { a, out });
        out
    }

    pub fn normalize_rows(&mut self, a: BufId, eps: f64) -> BufId {
        assert!(eps > 0.0, "normalize_rows eps must be positive");
        let (m, n) = self.matrix_dims(a, "normalize_rows");
        let mut data = self.bufs[a.0].data.clone();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= eps {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        let out = self.push(vec![m, n], data);
        self.ops.push(Op::NormalizeRows { a, eps, out });
        out
    }

    /// Scalar cross-entropy of a logit vector against an integer label.
    pub fn cross_entropy(&mut self, logits: BufId, label: usize) -> BufId {
        let c = self.vector_len(logits, "cross_entropy");
        assert!(label < c, "label {label} out of {c} classes");
        let lv = &self.bufs[logits.0].data;
        let mx = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = lv.iter().map(|&v| (v - mx).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        let loss = mx + sum.ln() - lv[label];
        let out = self.push(vec![1], vec![loss]);
        self.ops.push(Op::CrossEntropy {
            logits,
            label,
            probs,
            out,
        });
        out
    }

    /// Runs reverse accumulation from a scalar `loss` buffer. Returns the
    /// number of recorded operations replayed (each exactly once).
    pub fn backward(&mut self, loss: BufId) -> usize {
        assert_eq!(
            self.bufs[loss.0].data.len(),
            1,
            "backward from non-scalar buffer"
        );
        let mut grads: Vec<Vec<f64>> = self
            .bufs
            .iter()
            .map(|b| vec![0.0; b.data.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        let mut visited = 0;
        for op in self.ops.iter().rev() {
            visited += 1;
            match op {
                Op::Matmul { a, b, out } => {
                    let dout = grads[out.0].clone();
                    let (m, k) = (self.bufs[a.0].dims[0], self.bufs[a.0].dims[1]);
                    let n = self.bufs[b.0].dims[1];
                    let av = &self.bufs[a.0].data;
                    let bv = &self.bufs[b.0].data;
                    // dA += dC·Bᵀ
                    for i in 0..m {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += dout[i * n + j] * bv[l * n + j];
                            }
                            grads[a.0][i * k + l] += acc;
                        }
                    }
                    // dB += Aᵀ·dC
                    for l in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + l] * dout[i * n + j];
                            }
                            grads[b.0][l * n + j] += acc;
                        }
                    }
                }
                Op::MatmulTA { a, b, out } => {
                    // C = AᵀB with A: n×m, B: n×p, C: m×p.
                    let dout = grads[out.0].clone();
                    let (nn, m) = (self.bufs[a.0].dims[0], self.bufs[a.0].dims[1]);
                    let p = self.bufs[b.0].dims[1];
                    let av = &self.bufs[a.0].data;
                    let bv = &self.bufs[b.0].data;
                    // dA[r][i] += Σ_j B[r][j]·dC[i][j]
                    for r in 0..nn {
                        for i in 0..m {
                            let mut acc = 0.0;
                            for j in 0..p {
                                acc += bv[r * p + j] * dout[i * p + j];
                            }
                            grads[a.0][r * m + i] += acc;
                        }
                    }
                    // dB[r][j] += Σ_i A[r][i]·dC[i][j]
                    for r in 0..nn {
                        for j in 0..p {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[r * m + i] * dout[i * p + j];
                            }
                            grads[b.0][r * p + j] += acc;
                        }
                    }
                }
                Op::MatmulTB { a, b, out } => {
                    // C = A·Bᵀ with A: m×k, B: n×k, C: m×n.
                    let dout = grads[out.0].clone();
                    let (m, k) = (self.bufs[a.0].dims[0], self.bufs[a.0].dims[1]);
                    let n = self.bufs[b.0].dims[0];
                    let av = &self.bufs[a.0].data;
                    let bv = &self.bufs[b.0].data;
                    // dA += dC·B
                    for i in 0..m {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += dout[i * n + j] * bv[j * k + l];
                            }
                            grads[a.0][i * k + l] += acc;
                        }
                    }
                    // dB += dCᵀ·A
                    for j in 0..n {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += dout[i * n + j] * av[i * k + l];
                            }
                            grads[b.0][j * k + l] += acc;
                        }
                    }
                }
                Op::Matvec { a, x, out } => {
                    let dout = grads[out.0].clone();
                    let (m, n) = (self.bufs[a.0].dims[0], self.bufs[a.0].dims[1]);
                    let av = &self.bufs[a.0].data;
                    let xv = &self.bufs[x.0].data;
                    for i in 0..m {
                        for j in 0..n {
                            grads[a.0][i * n + j] += dout[i] * xv[j];
                        }
                    }
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += av[i * n + j] * dout[i];
                        }
                        grads[x.0][j] += acc;
                    }
                }
                Op::Add { a, b, out } => {
                    let dout = grads[out.0].clone();
                    for (g, d) in grads[a.0].iter_mut().zip(dout.iter()) {
                        *g += d;
                    }
                    for (g, d) in grads[b.0].iter_mut().zip(dout.iter()) {
                        *g += d;
                    }
                }
                Op::Sub { a, b, out } => {
                    let dout = grads[out.0].clone();
                    for (g, d) in grads[a.0].iter_mut().zip(dout.iter()) {
                        *g += d;
                    }
                    for (g, d) in grads[b.0].iter_mut().zip(dout.iter()) {
                        *g -= d;
                    }
                }
                Op::Mul { a, b, out } => {
                    let dout = grads[out.0].clone();
                    let bv = self.bufs[b.0].data.clone();
                    let av = &self.bufs[a.0].data;
                    for i in 0..dout.len() {
                        grads[a.0][i] += dout[i] * bv[i];
                    }
                    for i in 0..dout.len() {
                        grads[b.0][i] += dout[i] * av[i];
                    }
                }
                Op::Scale { a, s, out } => {
                    let dout = grads[out.0].clone();
                    for (g, d) in grads[a.0].iter_mut().zip(dout.iter()) {
                        *g += d * s;
                    }
                }
                Op::AddRowBroadcast { a, b, out } => {
                    let dout = grads[out.0].clone();
                    let n = self.bufs[b.0].data.len();
                    let m = dout.len() / n;
                    for (g, d) in grads[a.0].iter_mut().zip(dout.iter()) {
                        *g += d;
                    }
                    for i in 0..m {
                        for j in 0..n {
                            grads[b.0][j] += dout[i * n + j];
                        }
                    }
                }
                Op::ScaleRows { a, v, out } => {
                    let dout = grads[out.0].clone();
                    let m = self.bufs[v.0].data.len();
                    let n = dout.len() / m;
                    let vv = self.bufs[v.0].data.clone();
                    let av = &self.bufs[a.0].data;
                    for i in 0..m {
                        for j in 0..n {
                            grads[a.0][i * n + j] += dout[i * n + j] * vv[i];
                        }
                    }
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += dout[i * n + j] * av[i * n + j];
                        }
                        grads[v.0][i] += acc;
                    }
                }
                Op::ColSum { a, out } => {
                    let dout = grads[out.0].clone();
                    let n = dout.len();
                    let m = self.bufs[a.0].data.len() / n;
                    for i in 0..m {
                        for j in 0..n {
                            grads[a.0][i * n + j] += dout[j];
                        }
                    }
                }
                Op::RowGather { a, row, out } => {
                    let dout = grads[out.0].clone();
                    let n = dout.len();
                    for j in 0..n {
                        grads[a.0][row * n + j] += dout[j];
                    }
                }
                Op::Concat { parts, out } => {
                    let dout = grads[out.0].clone();
                    let mut off = 0;
                    for p in parts {
                        let len = self.bufs[p.0].data.len();
                        for j in 0..len {
                            grads[p.0][j] += dout[off + j];
                        }
                        off += len;
                    }
                }
                Op::Reshape { a, out } => {
                    let dout = grads[out.0].clone();
                    for (g, d) in grads[a.0].iter_mut().zip(dout.iter()) {
                        *g += d;
                    }
                }
                Op::SumAll { a, out } => {
                    let d = grads[out.0][0];
                    for g in grads[a.0].iter_mut() {
                        *g += d;
                    }
                }
                Op::Sigmoid { a, out } => {
                    let dout = grads[out.0].clone();
                    let yv = &self.bufs[out.0].data;
                    for i in 0..dout.len() {
                        grads[a.0][i] += dout[i] * yv[i] * (1.0 - yv[i]);
                    }
                }
                Op::Tanh { a, out } => {
                    let dout = grads[out.0].clone();
                    let yv = &self.bufs[out.0].data;
                    for i in 0..dout.len() {
                        grads[a.0][i] += dout[i] * (1.0 - yv[i] * yv[i]);
                    }
                }
                Op::SoftmaxRows { a, out } => {
                    let dout = grads[out.0].clone();
                    let (m, n) = (self.bufs[a.0].dims[0], self.bufs[a.0].dims[1]);
                    let yv = &self.bufs[out.0].data;
                    // dx = y ⊙ (dy − (dy·y)) per row.
                    for i in 0..m {
                        let mut dot = 0.0;
                        for j in 0..n {
                            dot += dout[i * n + j] * yv[i * n + j];
                        }
                        for j in 0..n {
                            grads[a.0][i * n + j] += yv[i * n + j] * (dout[i * n + j] - dot);
                        }
                    }
                }
                Op::NormalizeRows { a, eps, out } => {
                    let dout = grads[out.0].clone();
                    let (m, n) = (self.bufs[a.0].dims[0], self.bufs[a.0].dims[1]);
                    let xv = &self.bufs[a.0].data;
                    let yv = &self.bufs[out.0].data;
                    for i in 0..m {
                        let norm = xv[i * n..(i + 1) * n]
                            .iter()
                            .map(|v| v * v)
                            .sum::<f64>()
                            .sqrt();
                        if norm < *eps {
                            // Pass-through row: identity adjoint.
                            for j in 0..n {
                                grads[a.0][i * n + j] += dout[i * n + j];
                            }
                        } else {
                            // dx = (dy − y·(y·dy)) / ‖x‖
                            let mut dot = 0.0;
                            for j in 0..n {
                                dot += yv[i * n + j] * dout[i * n + j];
                            }
                            for j in 0..n {
                                grads[a.0][i * n + j] +=
                                    (dout[i * n + j] - yv[i * n + j] * dot) / norm;
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    probs,
                    out,
                } => {
                    let d = grads[out.0][0];
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *label { 1.0 } else { 0.0 };
                        grads[logits.0][j] += d * (p - onehot);
                    }
                }
            }
        }
        self.grads = Some(grads);
        visited
    }

    /// Gradient of the backward target with respect to buffer `id`.
    /// Panics if `backward` has not run.
    pub fn grad(&self, id: BufId) -> &[f64] {
        &self.grads.as_ref().expect("backward not run")[id.0]
    }
}
