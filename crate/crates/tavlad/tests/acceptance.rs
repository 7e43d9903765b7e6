//! Release acceptance suite. Each test covers one numbered criterion of the
//! pipeline's contract and prints a single PASS/FAIL line with the numbers it
//! measured (visible with `cargo test --test acceptance -- --nocapture`).
//! Criteria with a stated time budget assert it.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use tavlad::attention::{attention_map, AttentionWeights};
use tavlad::codebook::{kmeans, sample_features, Codebook};
use tavlad::dataio::{
    gen_synthetic, read_attention_weights, read_checkpoint, read_features, read_mask,
    write_attention_weights, write_features, Dataset, FeatureVolume, GeneratedDataset,
    SyntheticSpec,
};
use tavlad::model::{
    gradcheck_full_pipeline, gradcheck_pipeline_subset, Aggregator, Mode, ModelParams,
};
use tavlad::numerics::{intra_normalize, Rng, Tensor};
use tavlad::temporal::{aggregate, finalize_descriptor, GruParams};
use tavlad::trainer::{evaluate, train_stage, LoadedSet, TrainConfig};
use tavlad::vlad::{encode_frame, encode_video_sum, membership, vlad_oracle, OracleMode};

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {id} ({name}): {verdict} [{detail}]");
    assert!(ok, "criterion {id} ({name}): FAIL [{detail}]");
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch in comparison");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn rand_frame(rng: &mut Rng, n: usize, p: usize) -> Tensor {
    Tensor::new(vec![n, p], rng.uniform_vec(n * p, -1.0, 1.0))
}

fn rand_video(rng: &mut Rng, t: usize, n: usize, p: usize) -> FeatureVolume {
    let frames = (0..t).map(|_| rand_frame(rng, n, p)).collect();
    FeatureVolume::new((1, n), frames).unwrap()
}

fn open_attention(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(0.05, 0.95)).collect()
}

/// Criterion 1: the production soft-assignment encoder agrees with a naive
/// reference implementation on random instances across a range of assignment
/// sharpness values, with and without attention.
#[test]
fn criterion_01_encoder_matches_soft_oracle() {
    let start = Instant::now();
    let mut rng = Rng::new(101);
    let mut worst = 0.0_f64;
    let instances = 100;
    for i in 0..instances {
        let k = 2 + rng.below(7);
        let p = 1 + rng.below(12);
        let n = 1 + rng.below(10);
        let alpha = [1.0, 10.0, 100.0, 1000.0][i % 4];
        let centers = rand_frame(&mut rng, k, p);
        let cb = Codebook::from_centers(centers, alpha).unwrap();
        let frame = rand_frame(&mut rng, n, p);
        let attn = open_attention(&mut rng, n);

        let fast = encode_frame(&frame, Some(&attn), &cb, i).unwrap();
        let slow = vlad_oracle(&frame, Some(&attn), &cb, OracleMode::Soft, i).unwrap();
        worst = worst.max(max_abs_diff(fast.values.data(), slow.values.data()));

        let fast = encode_frame(&frame, None, &cb, i).unwrap();
        let slow = vlad_oracle(&frame, None, &cb, OracleMode::Soft, i).unwrap();
        worst = worst.max(max_abs_diff(fast.values.data(), slow.values.data()));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "soft-assignment oracle equivalence",
        worst <= 1e-10 && secs < 10.0,
        &format!("{instances} instances, max |diff| {worst:.3e} (tol 1e-10), {secs:.2}s (budget 10s)"),
    );
}

/// Criterion 2: at assignment sharpness 1000 with well-separated centers and
/// near-center features, the soft encoder matches the hard nearest-center
/// oracle.
#[test]
fn criterion_02_sharp_assignment_matches_hard_oracle() {
    let mut rng = Rng::new(102);
    let mut worst = 0.0_f64;
    let instances = 20;
    for i in 0..instances {
        let k = 2 + rng.below(4);
        let p = 2 + rng.below(5);
        let n = 2 + rng.below(6);
        // Rejection-sample centers until every pair is at least 0.8 apart so
        // the score margin at alpha 1000 saturates the softmax.
        let centers = loop {
            let c = rand_frame(&mut rng, k, p);
            let mut min_d2 = f64::INFINITY;
            for a in 0..k {
                for b in a + 1..k {
                    let d2: f64 = c
                        .row(a)
                        .iter()
                        .zip(c.row(b).iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    min_d2 = min_d2.min(d2);
                }
            }
            if min_d2 >= 0.64 {
                break c;
            }
        };
        // Each feature sits within 0.1 of a random center.
        let mut data = Vec::with_capacity(n * p);
        for _ in 0..n {
            let home = rng.below(k);
            for j in 0..p {
                data.push(centers.at(home, j) + rng.uniform_in(-0.05, 0.05));
            }
        }
        let frame = Tensor::new(vec![n, p], data);
        let cb = Codebook::from_centers(centers, 1000.0).unwrap();
        let attn = open_attention(&mut rng, n);

        let soft = encode_frame(&frame, Some(&attn), &cb, i).unwrap();
        let hard = vlad_oracle(&frame, Some(&attn), &cb, OracleMode::Hard, i).unwrap();
        worst = worst.max(max_abs_diff(soft.values.data(), hard.values.data()));
    }
    report(
        2,
        "sharp soft assignment reaches the hard limit",
        worst <= 1e-6,
        &format!("{instances} instances at alpha 1000, max |diff| {worst:.3e} (tol 1e-6)"),
    );
}

fn gradcheck_model(seed: u64, aggregator: Aggregator, attention_enabled: bool) -> ModelParams {
    // Dimensions fixed by the criterion: T=3 frames, N=4 cells, P=5 channels,
    // K=3 clusters, H=4 hidden units, C=2 classes. Assignment sharpness stays
    // low so no membership saturates: a coordinate whose true gradient falls
    // below the finite-difference noise floor would be unverifiable at any
    // tolerance (the hard-limit regime has its own criterion).
    let (k, p, c, h) = (3, 4 + 1, 2, 4);
    let mut rng = Rng::new(seed);
    let centers = rand_frame(&mut rng, k, p);
    let cb = Codebook::from_centers(centers, 2.0).unwrap();
    let bias = if seed % 2 == 1 {
        Some(rng.uniform_vec(c, -0.5, 0.5))
    } else {
        None
    };
    let aw = AttentionWeights::new(rand_frame(&mut rng, c, p), bias).unwrap();
    ModelParams::init(c, aw, cb, h, aggregator, attention_enabled, 0.0, &mut rng).unwrap()
}

/// Criterion 3: tape gradients of the full pipeline match central finite
/// differences for both aggregators, attention on and off, and the two
/// frozen-tensor training subsets, over ten seeds.
#[test]
fn criterion_03_pipeline_gradients_match_finite_differences() {
    let start = Instant::now();
    let (t, n, p) = (3, 4, 5);
    let (eps, tol) = (1e-5, 1e-4);
    let stage1 = ModelParams::trainable_names(1, false);
    let stage2_frozen = ModelParams::trainable_names(2, true);
    let mut checks = 0usize;
    let mut worst = 0.0_f64;
    for seed in 0..10u64 {
        for aggregator in [Aggregator::Gru, Aggregator::Sum] {
            for attention_enabled in [true, false] {
                let m = gradcheck_model(seed * 4 + 11, aggregator, attention_enabled);
                let video = rand_video(&mut Rng::new(seed * 4 + 13), t, n, p);
                let label = (seed % 2) as usize;

                let full = gradcheck_full_pipeline(&m, &video, label, eps, tol).unwrap();
                assert!(
                    full.passed(),
                    "full gradient check failed (seed {seed}, {aggregator:?}, attention {attention_enabled}): {:?}",
                    full.worst()
                );
                worst = worst.max(full.max_rel_err());
                checks += 1;

                for subset in [&stage1, &stage2_frozen] {
                    let r = gradcheck_pipeline_subset(&m, &video, label, subset, eps, tol)
                        .unwrap();
                    assert!(
                        r.passed(),
                        "subset gradient check failed (seed {seed}, {aggregator:?}, attention {attention_enabled}): {:?}",
                        r.worst()
                    );
                    worst = worst.max(r.max_rel_err());
                    checks += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "full-pipeline gradient checks",
        secs < 120.0,
        &format!(
            "{checks} checks (10 seeds x both aggregators x attention on/off x full+2 freeze subsets), \
             max rel err {worst:.3e} (tol 1e-4, eps 1e-5), {secs:.1}s (budget 120s)"
        ),
    );
}

/// Criterion 4: normalization invariants. Membership rows sum to the cell's
/// attention weight (or 1 without attention), intra-normalized rows are unit
/// or exactly zero, and every final descriptor has unit norm.
#[test]
fn criterion_04_normalization_invariants() {
    let mut rng = Rng::new(104);
    let mut worst_member = 0.0_f64;
    let mut worst_row = 0.0_f64;
    let mut worst_desc = 0.0_f64;
    for i in 0..20 {
        let k = 2 + rng.below(5);
        let p = 2 + rng.below(6);
        let n = 2 + rng.below(6);
        let t = 2 + rng.below(4);
        let alpha = [1.0, 10.0, 100.0][i % 3];
        let centers = rand_frame(&mut rng, k, p);
        let cb = Codebook::from_centers(centers, alpha).unwrap();
        let frame = rand_frame(&mut rng, n, p);
        let attn = open_attention(&mut rng, n);

        let mem = membership(&frame, Some(&attn), &cb).unwrap();
        for (row, &m) in (0..n).map(|r| mem.values.row(r)).zip(attn.iter()) {
            worst_member = worst_member.max((row.iter().sum::<f64>() - m).abs());
        }
        let mem = membership(&frame, None, &cb).unwrap();
        for row in (0..n).map(|r| mem.values.row(r)) {
            worst_member = worst_member.max((row.iter().sum::<f64>() - 1.0).abs());
        }

        // Row normalization: random rows come out unit length, a zero row
        // passes through untouched.
        let mut mat = rand_frame(&mut rng, k, p);
        for v in mat.row_mut(0) {
            *v = 0.0;
        }
        let normed = intra_normalize(&mat, tavlad::numerics::NORM_EPS);
        assert!(normed.row(0).iter().all(|&v| v == 0.0), "zero row must stay zero");
        for r in 1..k {
            let norm: f64 = normed.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_row = worst_row.max((norm - 1.0).abs());
        }

        // End-to-end descriptors, both aggregators, attention on and off.
        for aggregator in [Aggregator::Gru, Aggregator::Sum] {
            for attention_enabled in [true, false] {
                let aw = AttentionWeights::new(rand_frame(&mut rng, 3, p), None).unwrap();
                let mut mrng = Rng::new(9000 + i as u64);
                let m = ModelParams::init(
                    3,
                    aw,
                    cb.clone(),
                    4,
                    aggregator,
                    attention_enabled,
                    0.0,
                    &mut mrng,
                )
                .unwrap();
                let video = rand_video(&mut rng, t, n, p);
                let out = m.forward(&video, Mode::Eval, None).unwrap();
                let norm: f64 = out.descriptor.values.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst_desc = worst_desc.max((norm - 1.0).abs());
            }
        }
    }
    report(
        4,
        "normalization invariants",
        worst_member <= 1e-12 && worst_row <= 1e-12 && worst_desc <= 1e-6,
        &format!(
            "membership row-sum err {worst_member:.3e} (tol 1e-12), row-norm err {worst_row:.3e} \
             (tol 1e-12), descriptor norm err {worst_desc:.3e} (tol 1e-6)"
        ),
    );
}

/// Criterion 5: the sum aggregator is invariant under frame permutation while
/// the recurrent aggregator distinguishes orders on at least 19 of 20 seeds.
#[test]
fn criterion_05_sum_invariant_gru_order_sensitive() {
    let mut worst_sum = 0.0_f64;
    let mut gru_sensitive = 0usize;
    let trials = 20;
    for seed in 0..trials {
        let mut rng = Rng::new(500 + seed);
        let (k, p, n, t) = (3, 4, 5, 4 + rng.below(4));
        let centers = rand_frame(&mut rng, k, p);
        let cb = Codebook::from_centers(centers, 10.0).unwrap();
        let aw = AttentionWeights::new(rand_frame(&mut rng, 2, p), None).unwrap();
        let video = rand_video(&mut rng, t, n, p);
        let mut perm: Vec<usize> = (0..t).collect();
        while perm.iter().enumerate().all(|(i, &j)| i == j) {
            rng.shuffle(&mut perm);
        }
        let shuffled = video.select_frames(&perm).unwrap();

        let map_a = attention_map(&video, &aw).unwrap();
        let map_b = attention_map(&shuffled, &aw).unwrap();
        let sum_a = encode_video_sum(&video, Some(&map_a), &cb).unwrap();
        let sum_b = encode_video_sum(&shuffled, Some(&map_b), &cb).unwrap();
        worst_sum = worst_sum.max(max_abs_diff(sum_a.values.data(), sum_b.values.data()));

        let gru = GruParams::init(4, p, &mut rng).unwrap();
        let encode = |v: &FeatureVolume, map: &tavlad::attention::AttentionMap| {
            let fds: Vec<_> = (0..v.frames())
                .map(|ti| encode_frame(v.frame(ti), Some(map.frame(ti)), &cb, ti).unwrap())
                .collect();
            finalize_descriptor(&aggregate(&fds, &gru).unwrap()).values
        };
        let d_a = encode(&video, &map_a);
        let d_b = encode(&shuffled, &map_b);
        if max_abs_diff(&d_a, &d_b) > 1e-9 {
            gru_sensitive += 1;
        }
    }
    report(
        5,
        "sum order invariance vs recurrent order sensitivity",
        worst_sum <= 1e-12 && gru_sensitive >= 19,
        &format!(
            "sum permutation err {worst_sum:.3e} (tol 1e-12), recurrent aggregator distinguished \
             order on {gru_sensitive}/{trials} seeds (need >= 19)"
        ),
    );
}

struct BenchSets {
    train_ds: Dataset,
    train: LoadedSet,
    val: LoadedSet,
    test: LoadedSet,
}

fn load_bench(ds: &GeneratedDataset) -> BenchSets {
    let train_ds = Dataset::load(&ds.train_manifest).unwrap();
    let val_ds = Dataset::load(&ds.val_manifest).unwrap();
    let test_ds = Dataset::load(&ds.test_manifest).unwrap();
    BenchSets {
        train: LoadedSet::load(&train_ds).unwrap(),
        val: LoadedSet::load(&val_ds).unwrap(),
        test: LoadedSet::load(&test_ds).unwrap(),
        train_ds,
    }
}

fn bench_codebook(train_ds: &Dataset, k: usize, seed: u64) -> Codebook {
    let mut rng = Rng::new(seed);
    let samples = sample_features(train_ds, 100 * k, &mut rng).unwrap();
    let (centers, _) = kmeans(&samples, k, 100, &mut rng).unwrap();
    Codebook::from_centers(centers, 1000.0).unwrap()
}

fn bench_model(
    sets: &BenchSets,
    cb: &Codebook,
    aggregator: Aggregator,
    seed: u64,
) -> ModelParams {
    let attention = sets.train_ds.load_attention_weights().unwrap();
    let mut rng = Rng::new(seed);
    ModelParams::init(
        sets.train_ds.header().num_classes,
        attention,
        cb.clone(),
        16,
        aggregator,
        true,
        0.5,
        &mut rng,
    )
    .unwrap()
}

fn two_stage(
    sets: &BenchSets,
    params: ModelParams,
    epochs1: usize,
    epochs2: usize,
) -> (ModelParams, ModelParams) {
    let mut cfg1 = TrainConfig::stage1();
    cfg1.epochs = epochs1;
    cfg1.seed = 2;
    let out1 = train_stage(&sets.train, &sets.val, params, &cfg1).unwrap();
    let stage1_best = out1.best_params;
    let mut cfg2 = TrainConfig::stage2();
    cfg2.epochs = epochs2;
    cfg2.seed = 3;
    let out2 = train_stage(&sets.train, &sets.val, stage1_best.clone(), &cfg2).unwrap();
    (stage1_best, out2.final_params)
}

/// Criterion 6: on the synthetic benchmark (4 classes with order-reversed
/// pairs, 40 videos each, 12 frames sampled to 8, 4x4 grid, 16 channels,
/// noise 0.1, K=8, H=16) the full two-stage recurrent model reaches at least
/// 95% test accuracy while the order-invariant sum baseline stays at or below
/// 60% on the mirrored-pair subset.
#[test]
fn criterion_06_synthetic_benchmark() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::default();
    let ds = gen_synthetic(&spec, tmp.path()).unwrap();
    let sets = load_bench(&ds);
    let cb = bench_codebook(&sets.train_ds, 8, 1);

    let (_, gru_final) = two_stage(&sets, bench_model(&sets, &cb, Aggregator::Gru, 2), 50, 30);
    let gru_report = evaluate(&sets.test, &gru_final).unwrap();

    let (_, sum_final) = two_stage(&sets, bench_model(&sets, &cb, Aggregator::Sum, 2), 50, 30);
    // Every class in this benchmark has an order-reversed mirror partner, so
    // the mirrored-pair subset is the whole test set.
    let sum_report = evaluate(&sets.test, &sum_final).unwrap();

    let secs = start.elapsed().as_secs_f64();
    report(
        6,
        "synthetic benchmark accuracy",
        gru_report.accuracy >= 0.95 && sum_report.accuracy <= 0.60 && secs < 600.0,
        &format!(
            "recurrent test acc {:.4} (need >= 0.95), sum baseline pair-subset acc {:.4} \
             (need <= 0.60) over {} videos, {secs:.0}s (budget 600s)",
            gru_report.accuracy, sum_report.accuracy, sum_report.total
        ),
    );
}

/// Criterion 7: after stage-2 training the attention the model puts on signal
/// cells exceeds what it puts on background cells by at least 0.1, and
/// freezing the attention weights during stage 2 keeps them bit-identical.
#[test]
fn criterion_07_attention_focus_and_freeze() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::default();
    let ds = gen_synthetic(&spec, tmp.path()).unwrap();
    let sets = load_bench(&ds);
    let cb = bench_codebook(&sets.train_ds, 8, 1);

    let (stage1_best, trained) =
        two_stage(&sets, bench_model(&sets, &cb, Aggregator::Gru, 2), 12, 8);

    // Mean attention over signal cells vs background cells of the full test
    // videos, using the per-frame signal masks written by the generator.
    let test_ds = Dataset::load(&ds.test_manifest).unwrap();
    let (mut signal, mut background) = ((0.0, 0usize), (0.0, 0usize));
    for rec in test_ds.records() {
        let vol = read_features(&test_ds.root().join(&rec.path)).unwrap();
        let stem = rec.path.file_stem().unwrap().to_string_lossy().into_owned();
        let mask = read_mask(&test_ds.root().join("masks").join(format!("{stem}.mask"))).unwrap();
        assert_eq!(mask.len(), vol.frames(), "mask covers every frame");
        let map = attention_map(&vol, &trained.attention).unwrap();
        for t in 0..vol.frames() {
            let m = map.frame(t);
            for cell in 0..vol.cells() {
                if mask[t].contains(&cell) {
                    signal = (signal.0 + m[cell], signal.1 + 1);
                } else {
                    background = (background.0 + m[cell], background.1 + 1);
                }
            }
        }
    }
    let gap = signal.0 / signal.1 as f64 - background.0 / background.1 as f64;

    // Stage 2 moves the attention weights unless they are frozen.
    let moved = !trained
        .tensor("attention.weights")
        .unwrap()
        .bit_eq(&stage1_best.tensor("attention.weights").unwrap());
    let mut cfg_frozen = TrainConfig::stage2();
    cfg_frozen.epochs = 8;
    cfg_frozen.seed = 3;
    cfg_frozen.freeze_attention = true;
    let frozen = train_stage(&sets.train, &sets.val, stage1_best.clone(), &cfg_frozen).unwrap();
    let frozen_identical = frozen
        .final_params
        .tensor("attention.weights")
        .unwrap()
        .bit_eq(&stage1_best.tensor("attention.weights").unwrap());

    report(
        7,
        "attention focus and freeze",
        gap >= 0.1 && moved && frozen_identical,
        &format!(
            "signal-background attention gap {gap:.3} (need >= 0.1), unfrozen stage 2 moved the \
             weights: {moved}, frozen stage 2 kept them bit-identical: {frozen_identical}"
        ),
    );
}

fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 2,
        videos_per_class: 6,
        t_total: 6,
        t_sample: 4,
        grid: (2, 2),
        channels: 5,
        num_prototypes: 2,
        segments: 2,
        sigma: 0.1,
        signal_cells: 1,
        order_reversed_pairs: true,
        clamp_nonnegative: true,
        seed,
    }
}

fn tiny_run(root: &Path, epochs1: usize, epochs2: usize) -> (ModelParams, ModelParams, String) {
    let ds = gen_synthetic(&tiny_spec(11), root).unwrap();
    let sets = load_bench(&ds);
    let mut rng = Rng::new(1);
    let samples = sample_features(&sets.train_ds, 60, &mut rng).unwrap();
    let (centers, _) = kmeans(&samples, 3, 50, &mut rng).unwrap();
    let cb = Codebook::from_centers(centers, 1000.0).unwrap();
    let attention = sets.train_ds.load_attention_weights().unwrap();
    let mut mrng = Rng::new(5);
    let init = ModelParams::init(2, attention, cb, 6, Aggregator::Gru, true, 0.5, &mut mrng)
        .unwrap();
    let mut cfg1 = TrainConfig::stage1();
    cfg1.epochs = epochs1;
    cfg1.seed = 5;
    let out1 = train_stage(&sets.train, &sets.val, init.clone(), &cfg1).unwrap();
    let mut cfg2 = TrainConfig::stage2();
    cfg2.epochs = epochs2;
    cfg2.seed = 6;
    let out2 = train_stage(&sets.train, &sets.val, out1.final_params, &cfg2).unwrap();
    (init, out2.final_params, out2.history.to_csv())
}

/// Criterion 8: stage 1 leaves every tensor outside its trainable set
/// bit-identical to initialization, and a full fixed-seed two-stage run is
/// bit-reproducible across two executions.
#[test]
fn criterion_08_stage_isolation_and_bit_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = gen_synthetic(&tiny_spec(11), &tmp.path().join("data")).unwrap();
    let sets = load_bench(&ds);
    let mut rng = Rng::new(1);
    let samples = sample_features(&sets.train_ds, 60, &mut rng).unwrap();
    let (centers, _) = kmeans(&samples, 3, 50, &mut rng).unwrap();
    let cb = Codebook::from_centers(centers, 1000.0).unwrap();
    let attention = sets.train_ds.load_attention_weights().unwrap();
    let mut mrng = Rng::new(5);
    let init = ModelParams::init(2, attention, cb, 6, Aggregator::Gru, true, 0.5, &mut mrng)
        .unwrap();

    // Stage 1 with dropout active: the attention and codebook tensors are
    // outside the trainable set and must come back bit-identical.
    let mut cfg1 = TrainConfig::stage1();
    cfg1.epochs = 6;
    cfg1.seed = 5;
    let out1 = train_stage(&sets.train, &sets.val, init.clone(), &cfg1).unwrap();
    let trainable = ModelParams::trainable_names(1, false);
    let frozen: Vec<String> = init
        .tensor_names()
        .into_iter()
        .filter(|n| !trainable.contains(n))
        .collect();
    let mut frozen_ok = true;
    for name in &frozen {
        frozen_ok &= out1
            .final_params
            .tensor(name)
            .unwrap()
            .bit_eq(&init.tensor(name).unwrap());
    }
    // And the trained tensors did move.
    let moved = !out1
        .final_params
        .tensor("fc.weights")
        .unwrap()
        .bit_eq(&init.tensor("fc.weights").unwrap());

    // Two identical full runs, compared through the serialized checkpoints.
    let (init_a, final_a, hist_a) = tiny_run(&tmp.path().join("run_a"), 4, 4);
    let (init_b, final_b, hist_b) = tiny_run(&tmp.path().join("run_b"), 4, 4);
    let path_a = tmp.path().join("a.tavc");
    let path_b = tmp.path().join("b.tavc");
    final_a.save(&path_a).unwrap();
    final_b.save(&path_b).unwrap();
    let bytes_equal = fs::read(&path_a).unwrap() == fs::read(&path_b).unwrap();
    let inits_equal = init_a
        .tensor_names()
        .iter()
        .all(|n| init_a.tensor(n).unwrap().bit_eq(&init_b.tensor(n).unwrap()));

    report(
        8,
        "stage isolation and bit reproducibility",
        frozen_ok && moved && inits_equal && bytes_equal && hist_a == hist_b,
        &format!(
            "{} frozen tensors bit-identical after stage 1: {frozen_ok}, trained tensors moved: \
             {moved}, two full runs byte-identical: {bytes_equal}, histories identical: {}",
            frozen.len(),
            hist_a == hist_b
        ),
    );
}

/// Criterion 9: every file format survives write-read-write byte-identically,
/// and corrupted headers are rejected with the byte offset of the fault.
#[test]
fn criterion_09_file_formats_round_trip_and_diagnose() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(109);

    // Features: the second write must reproduce the first byte for byte.
    let vol = FeatureVolume::new(
        (2, 3),
        (0..4).map(|_| rand_frame(&mut rng, 6, 5)).collect(),
    )
    .unwrap();
    let f1 = tmp.path().join("a.tavf");
    let f2 = tmp.path().join("b.tavf");
    write_features(&f1, &vol).unwrap();
    let loaded = read_features(&f1).unwrap();
    write_features(&f2, &loaded).unwrap();
    let features_ok = fs::read(&f1).unwrap() == fs::read(&f2).unwrap();

    // Attention weights, with and without bias.
    let mut weights_ok = true;
    for bias in [None, Some(rng.uniform_vec(3, -1.0, 1.0))] {
        let aw = AttentionWeights::new(rand_frame(&mut rng, 3, 5), bias).unwrap();
        let w1 = tmp.path().join("a.tavw");
        let w2 = tmp.path().join("b.tavw");
        write_attention_weights(&w1, &aw).unwrap();
        let loaded = read_attention_weights(&w1).unwrap();
        write_attention_weights(&w2, &loaded).unwrap();
        weights_ok &= fs::read(&w1).unwrap() == fs::read(&w2).unwrap();
    }

    // Checkpoints: full model state including flags.
    let model = gradcheck_model(42, Aggregator::Sum, false);
    let c1 = tmp.path().join("a.tavc");
    let c2 = tmp.path().join("b.tavc");
    model.save(&c1).unwrap();
    let loaded = ModelParams::load(&c1).unwrap();
    loaded.save(&c2).unwrap();
    let checkpoint_ok = fs::read(&c1).unwrap() == fs::read(&c2).unwrap();
    let flags_ok = loaded.aggregator == model.aggregator
        && loaded.attention_enabled == model.attention_enabled
        && loaded.stage == model.stage
        && loaded.dropout_rate == model.dropout_rate;

    // Corruptions: each fault is reported at its byte offset.
    let base = fs::read(&f1).unwrap();
    let expect_fail = |bytes: Vec<u8>, needles: &[&str]| -> bool {
        let path = tmp.path().join("corrupt.bin");
        fs::write(&path, &bytes).unwrap();
        match read_features(&path) {
            Ok(_) => false,
            Err(e) => {
                let msg = e.to_string();
                needles.iter().all(|n| msg.contains(n))
            }
        }
    };
    let mut diag_ok = true;
    let mut bad = base.clone();
    bad[0] ^= 0xFF;
    diag_ok &= expect_fail(bad, &["format error at byte 0", "bad magic"]);
    let mut bad = base.clone();
    bad[4..8].copy_from_slice(&99u32.to_le_bytes());
    diag_ok &= expect_fail(bad, &["format error at byte 4", "unsupported version 99"]);
    let mut bad = base.clone();
    bad[20..24].copy_from_slice(&0u32.to_le_bytes());
    diag_ok &= expect_fail(bad, &["format error at byte 24", "degenerate dims"]);
    let mut bad = base.clone();
    bad.truncate(base.len() - 3);
    diag_ok &= expect_fail(bad, &["format error at byte", "truncated"]);
    let mut bad = base.clone();
    bad.push(0);
    diag_ok &= expect_fail(bad, &[
        &format!("format error at byte {}", base.len()),
        "trailing",
    ]);

    // Checkpoint trailer flag corruption, at a computed offset.
    let cbytes = fs::read(&c1).unwrap();
    let agg_at = cbytes.len() - 14;
    let mut bad = cbytes.clone();
    bad[agg_at] = 9;
    let cpath = tmp.path().join("corrupt.tavc");
    fs::write(&cpath, &bad).unwrap();
    diag_ok &= match read_checkpoint(&cpath) {
        Ok(_) => false,
        Err(e) => {
            let msg = e.to_string();
            msg.contains(&format!("format error at byte {agg_at}"))
                && msg.contains("aggregator flag")
        }
    };

    report(
        9,
        "file format round trips and diagnostics",
        features_ok && weights_ok && checkpoint_ok && flags_ok && diag_ok,
        &format!(
            "features byte-identical: {features_ok}, attention weights byte-identical: \
             {weights_ok}, checkpoint byte-identical: {checkpoint_ok}, flags preserved: \
             {flags_ok}, corruption offsets reported: {diag_ok}"
        ),
    );
}

/// Criterion 10: the codebook builder's distortion trace never increases, and
/// on two well-separated blobs it recovers both blob means to within 0.1.
#[test]
fn criterion_10_kmeans_descends_and_recovers() {
    let mut traces_ok = true;
    let mut worst_trace_len = 0usize;
    for seed in 0..20u64 {
        let mut rng = Rng::new(1000 + seed);
        let p = 2 + rng.below(4);
        let k = 2 + rng.below(4);
        let samples = rand_frame(&mut rng, 120, p);
        let (_, trace) = kmeans(&samples, k, 50, &mut rng).unwrap();
        traces_ok &= trace.is_non_increasing();
        worst_trace_len = worst_trace_len.max(trace.0.len());
    }

    let mut rng = Rng::new(1100);
    let truth = [vec![0.0, 0.0, 0.0], vec![3.0, 3.0, 3.0]];
    let mut data = Vec::new();
    for i in 0..200 {
        let mean = &truth[i % 2];
        for &m in mean {
            data.push(m + 0.05 * rng.normal());
        }
    }
    let samples = Tensor::new(vec![200, 3], data);
    let (centers, trace) = kmeans(&samples, 2, 50, &mut rng).unwrap();
    let mut worst_recovery = 0.0_f64;
    let mut matched = BTreeSet::new();
    for k in 0..2 {
        let (best, dist) = truth
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d: f64 = centers
                    .row(k)
                    .iter()
                    .zip(t.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        matched.insert(best);
        worst_recovery = worst_recovery.max(dist);
    }
    let recovered = matched.len() == 2 && worst_recovery <= 0.1 && trace.is_non_increasing();

    report(
        10,
        "codebook construction descends and recovers structure",
        traces_ok && recovered,
        &format!(
            "20 random traces non-increasing: {traces_ok} (longest {worst_trace_len} steps), \
             two-blob recovery err {worst_recovery:.3e} (tol 0.1), both blobs matched: {}",
            matched.len() == 2
        ),
    );
}
