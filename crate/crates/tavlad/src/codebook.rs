//! Cluster codebook: k-means over sampled frame features, plus the affine
//! soft-assignment parameters derived from the centers.
//!
//! At initialization assign_weights = 2α·centers and assign_bias[k] =
//! −α‖centers[k]‖², which makes softmax(Wx + B) equal a softmax over
//! −α‖x − c_k‖² (the ‖x‖² term is constant across k and cancels). Training
//! may later decouple the three parameter groups.

use rayon::prelude::*;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Default number of feature vectors sampled per cluster when building a
/// codebook from a dataset.
pub const SAMPLES_PER_CLUSTER: usize = 100;

/// Default cap on Lloyd iterations.
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct Codebook {
    pub centers: Tensor,
    pub assign_weights: Tensor,
    pub assign_bias: Vec<f64>,
    pub alpha: f64,
}

impl Codebook {
    /// Builds a codebook whose assignment parameters are tied to `centers`
    /// by the initialization formulas.
    pub fn from_centers(centers: Tensor, alpha: f64) -> Result<Self> {
        if centers.dims().len() != 2 || centers.rows() == 0 || centers.cols() == 0 {
            return Err(Error::contract(format!(
                "centers must be a non-empty K×P matrix, got dims {:?}",
                centers.dims()
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::contract(format!("alpha must be positive, got {alpha}")));
        }
        let (assign_weights, assign_bias) = init_assignment_params(&centers, alpha);
        Ok(Codebook {
            centers,
            assign_weights,
            assign_bias,
            alpha,
        })
    }

    /// Rebuilds from possibly-decoupled parts (e.g. a trained checkpoint).
    pub fn from_parts(
        centers: Tensor,
        assign_weights: Tensor,
        assign_bias: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        if centers.dims().len() != 2 || assign_weights.dims() != centers.dims() {
            return Err(Error::contract(format!(
                "assign_weights dims {:?} must match centers dims {:?}",
                assign_weights.dims(),
                centers.dims()
            )));
        }
        if assign_bias.len() != centers.rows() {
            return Err(Error::contract(format!(
                "assign_bias length {} must match K = {}",
                assign_bias.len(),
                centers.rows()
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::contract(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Codebook {
            centers,
            assign_weights,
            assign_bias,
            alpha,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    pub fn p(&self) -> usize {
        self.centers.cols()
    }
}

/// W_k = 2α·c_k and B_k = −α‖c_k‖², exactly.
pub fn init_assignment_params(centers: &Tensor, alpha: f64) -> (Tensor, Vec<f64>) {
    let weights = Tensor::new(
        centers.dims().to_vec(),
        centers.iter().map(|v| 2.0 * alpha * v).collect(),
    );
    let bias = (0..centers.rows())
        .map(|k| -alpha * centers.row(k).iter().map(|v| v * v).sum::<f64>())
        .collect();
    (weights, bias)
}

/// Sum of squared distances to the nearest center, recorded after each
/// assignment step of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct DistortionTrace(pub Vec<f64>);

impl DistortionTrace {
    pub fn is_non_increasing(&self) -> bool {
        self.0.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn final_distortion(&self) -> f64 {
        *self.0.last().expect("trace has at least one entry")
    }
}

/// Uniformly samples `n_samples` (video, frame, cell) triples with
/// replacement from the dataset and stacks their feature vectors.
pub fn sample_features(dataset: &Dataset, n_samples: usize, rng: &mut Rng) -> Result<Tensor> {
    if n_samples == 0 {
        return Err(Error::contract("sample_features needs n_samples >= 1"));
    }
    let p = dataset.header().channels;
    let mut data = Vec::with_capacity(n_samples * p);
    // Cache volumes on first touch; desk-scale datasets fit in memory.
    let mut cache: Vec<Option<crate::dataio::FeatureVolume>> = vec![None; dataset.len()];
    for _ in 0..n_samples {
        let v = rng.below(dataset.len());
        if cache[v].is_none() {
            cache[v] = Some(dataset.load_video(v)?);
        }
        let vol = cache[v].as_ref().expect("just loaded");
        let t = rng.below(vol.frames());
        let cell = rng.below(vol.cells());
        data.extend_from_slice(&vol.frame(t).row(cell)[..]);
    }
    Ok(Tensor::new(vec![n_samples, p], data))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(x: &[f64], centers: &Tensor) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..centers.rows() {
        let d = sq_dist(x, centers.row(k));
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first center uniform, then each next center drawn with
/// probability proportional to squared distance from the chosen set.
fn seed_centers(samples: &Tensor, k: usize, rng: &mut Rng) -> Tensor {
    let (n, p) = (samples.rows(), samples.cols());
    let mut centers: Vec<f64> = Vec::with_capacity(k * p);
    let first = rng.below(n);
    centers.extend_from_slice(samples.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(samples.row(i), &centers[..p]))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All samples coincide with a center; any pick is equivalent.
            rng.below(n)
        };
        centers.extend_from_slice(samples.row(pick));
        let new = &centers[c * p..(c + 1) * p];
        for i in 0..n {
            let d = sq_dist(samples.row(i), new);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Tensor::new(vec![k, p], centers)
}

/// Lloyd's algorithm with k-means++ seeding. Iterates to an assignment
/// fixpoint or `max_iter`, re-seeding any emptied cluster to the sample
/// farthest from its assigned center. The trace records the distortion at
/// every assignment step and is non-increasing.
pub fn kmeans(
    samples: &Tensor,
    k: usize,
    max_iter: usize,
    rng: &mut Rng,
) -> Result<(Tensor, DistortionTrace)> {
    if samples.dims().len() != 2 {
        return Err(Error::contract("kmeans expects an n×P sample matrix"));
    }
    let (n, p) = (samples.rows(), samples.cols());
    if k == 0 {
        return Err(Error::contract("kmeans needs K >= 1"));
    }
    if n < k {
        return Err(Error::contract(format!("kmeans needs n >= K, got n={n} K={k}")));
    }
    if max_iter == 0 {
        return Err(Error::contract("kmeans needs max_iter >= 1"));
    }

    let mut centers = seed_centers(samples, k, rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..max_iter {
        // Assignment step (parallel; order-preserving collect).
        let new_assign: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest_center(samples.row(i), &centers))
            .collect();
        trace.push(new_assign.iter().map(|&(_, d)| d).sum());
        let changed = new_assign
            .iter()
            .zip(assign.iter())
            .any(|(&(a, _), &b)| a != b);
        assign = new_assign.iter().map(|&(a, _)| a).collect();
        if !changed {
            break;
        }

        // Update step: mean of each cluster, fixed-order accumulation.
        let mut sums = vec![0.0; k * p];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (j, v) in samples.row(i).iter().enumerate() {
                sums[a * p + j] += v;
            }
        }
        for kk in 0..k {
            if counts[kk] > 0 {
                for j in 0..p {
                    sums[kk * p + j] /= counts[kk] as f64;
                }
            } else {
                // Re-seed an empty cluster to the sample farthest from its
                // current center.
                let far = (0..n)
                    .map(|i| (i, sq_dist(samples.row(i), centers.row(assign[i]))))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i)
                    .expect("n >= 1");
                sums[kk * p..(kk + 1) * p].copy_from_slice(samples.row(far));
            }
        }
        centers = Tensor::new(vec![k, p], sums);
    }

    Ok((centers, DistortionTrace(trace)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax;
    use approx::assert_abs_diff_eq;

    fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![rows, cols], data)
    }

    #[test]
    fn init_params_formulas() {
        let centers = matrix(1, 2, vec![1.0, 0.0]);
        let (w, b) = init_assignment_params(&centers, 1000.0);
        assert_eq!(w.data(), &[2000.0, 0.0]);
        assert_eq!(b, vec![-1000.0]);

        let zero = matrix(1, 2, vec![0.0, 0.0]);
        let (w, b) = init_assignment_params(&zero, 10.0);
        assert_eq!(w.data(), &[0.0, 0.0]);
        assert_eq!(b, vec![0.0]);
    }

    #[test]
    fn init_params_membership_at_center() {
        // x = c1 with centers (1,0) and (0,1), alpha 10: scores are (alpha,
        // -alpha) up to the shared ||x||^2 shift, membership ~ (1, 0).
        let centers = matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let (w, b) = init_assignment_params(&centers, 10.0);
        let x = [1.0, 0.0];
        let scores: Vec<f64> = (0..2)
            .map(|k| {
                w.row(k).iter().zip(x.iter()).map(|(wk, xi)| wk * xi).sum::<f64>() + b[k]
            })
            .collect();
        let m = softmax(&scores).unwrap();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn affine_scores_match_distance_scores() {
        let mut rng = Rng::new(51);
        for _ in 0..20 {
            let (k, p) = (4, 3);
            let centers = matrix(k, p, rng.uniform_vec(k * p, -1.0, 1.0));
            let alpha = 7.5;
            let (w, b) = init_assignment_params(&centers, alpha);
            let x = rng.uniform_vec(p, -1.0, 1.0);
            let affine: Vec<f64> = (0..k)
                .map(|kk| {
                    w.row(kk).iter().zip(x.iter()).map(|(wk, xi)| wk * xi).sum::<f64>() + b[kk]
                })
                .collect();
            let dist: Vec<f64> = (0..k).map(|kk| -alpha * sq_dist(&x, centers.row(kk))).collect();
            let ma = softmax(&affine).unwrap();
            let md = softmax(&dist).unwrap();
            for (a, d) in ma.iter().zip(md.iter()) {
                assert_abs_diff_eq!(a, d, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn membership_entropy_non_increasing_in_alpha() {
        let mut rng = Rng::new(52);
        for _ in 0..10 {
            let (k, p) = (4, 3);
            let centers = matrix(k, p, rng.uniform_vec(k * p, -1.0, 1.0));
            let x = rng.uniform_vec(p, -1.0, 1.0);
            let mut prev = f64::INFINITY;
            for alpha in [1.0, 10.0, 100.0, 1000.0] {
                let (w, b) = init_assignment_params(&centers, alpha);
                let scores: Vec<f64> = (0..k)
                    .map(|kk| {
                        w.row(kk).iter().zip(x.iter()).map(|(wk, xi)| wk * xi).sum::<f64>()
                            + b[kk]
                    })
                    .collect();
                let m = softmax(&scores).unwrap();
                let entropy: f64 = m
                    .iter()
                    .filter(|&&v| v > 0.0)
                    .map(|&v| -v * v.ln())
                    .sum();
                assert!(entropy <= prev + 1e-12, "entropy rose: {entropy} > {prev}");
                prev = entropy;
            }
        }
    }

    #[test]
    fn kmeans_k_distinct_points() {
        let samples = matrix(3, 2, vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0]);
        let mut rng = Rng::new(53);
        let (centers, trace) = kmeans(&samples, 3, 100, &mut rng).unwrap();
        assert!(trace.is_non_increasing());
        assert_abs_diff_eq!(trace.final_distortion(), 0.0, epsilon = 1e-12);
        // Every sample must be one of the centers.
        for i in 0..3 {
            let (_, d) = nearest_center(samples.row(i), &centers);
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kmeans_k1_is_mean() {
        let mut rng = Rng::new(54);
        let samples = matrix(10, 2, rng.uniform_vec(20, -3.0, 3.0));
        let (centers, _) = kmeans(&samples, 1, 100, &mut rng).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..10).map(|i| samples.at(i, j)).sum::<f64>() / 10.0;
            assert_abs_diff_eq!(centers.at(0, j), mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn kmeans_two_blobs() {
        let mut rng = Rng::new(55);
        let mut data = Vec::new();
        let means = [[-3.0, -3.0], [3.0, 3.0]];
        for m in means {
            for _ in 0..50 {
                data.push(m[0] + 0.3 * rng.normal());
                data.push(m[1] + 0.3 * rng.normal());
            }
        }
        let samples = matrix(100, 2, data);
        // Empirical blob means (what kmeans should find).
        let mut emp = [[0.0; 2]; 2];
        for b in 0..2 {
            for i in 0..50 {
                emp[b][0] += samples.at(b * 50 + i, 0) / 50.0;
                emp[b][1] += samples.at(b * 50 + i, 1) / 50.0;
            }
        }
        let (centers, trace) = kmeans(&samples, 2, 100, &mut rng).unwrap();
        assert!(trace.is_non_increasing());
        for b in 0..2 {
            let d0 = sq_dist(centers.row(0), &emp[b]).sqrt();
            let d1 = sq_dist(centers.row(1), &emp[b]).sqrt();
            assert!(d0.min(d1) < 0.1, "blob {b} unmatched: {d0} {d1}");
        }
    }

    #[test]
    fn kmeans_deterministic_and_preconditions() {
        let mut r1 = Rng::new(56);
        let mut r2 = Rng::new(56);
        let samples = matrix(20, 3, Rng::new(57).uniform_vec(60, -1.0, 1.0));
        let (c1, t1) = kmeans(&samples, 4, 100, &mut r1).unwrap();
        let (c2, t2) = kmeans(&samples, 4, 100, &mut r2).unwrap();
        assert!(c1.bit_eq(&c2));
        assert_eq!(t1.0, t2.0);

        assert!(kmeans(&samples, 21, 100, &mut r1).is_err());
        assert!(kmeans(&samples, 0, 100, &mut r1).is_err());
    }

    #[test]
    fn kmeans_identical_samples_survive() {
        // All points identical: seeding degenerates, distortion 0, no panic.
        let samples = matrix(8, 2, vec![1.5, -0.5].repeat(8));
        let mut rng = Rng::new(58);
        let (centers, trace) = kmeans(&samples, 3, 100, &mut rng).unwrap();
        assert!(trace.is_non_increasing());
        assert_abs_diff_eq!(trace.final_distortion(), 0.0, epsilon = 1e-12);
        assert_eq!(centers.rows(), 3);
    }

    #[test]
    fn codebook_constructors_validate() {
        let centers = matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let cb = Codebook::from_centers(centers.clone(), 1000.0).unwrap();
        assert_eq!(cb.k(), 2);
        assert_eq!(cb.p(), 2);
        assert_eq!(cb.assign_weights.at(0, 0), 2000.0);
        assert!(Codebook::from_centers(centers.clone(), 0.0).is_err());
        assert!(Codebook::from_parts(
            centers.clone(),
            matrix(1, 2, vec![0.0, 0.0]),
            vec![0.0, 0.0],
            1.0
        )
        .is_err());
        assert!(Codebook::from_parts(centers, matrix(2, 2, vec![0.0; 4]), vec![0.0], 1.0).is_err());
    }

    #[test]
    fn sample_features_from_dataset() {
        use crate::dataio::{gen_synthetic, SyntheticSpec};
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            num_classes: 2,
            videos_per_class: 4,
            t_total: 4,
            t_sample: 4,
            grid: (2, 2),
            channels: 3,
            num_prototypes: 2,
            segments: 2,
            sigma: 0.1,
            signal_cells: 1,
            order_reversed_pairs: true,
            clamp_nonnegative: true,
            seed: 5,
        };
        let gen = gen_synthetic(&spec, dir.path()).unwrap();
        let ds = Dataset::load(&gen.train_manifest).unwrap();

        let mut r1 = Rng::new(9);
        let mut r2 = Rng::new(9);
        let s1 = sample_features(&ds, 50, &mut r1).unwrap();
        let s2 = sample_features(&ds, 50, &mut r2).unwrap();
        assert_eq!(s1.dims(), &[50, 3]);
        assert!(s1.bit_eq(&s2));
        assert!(sample_features(&ds, 0, &mut r1).is_err());
    }
}
