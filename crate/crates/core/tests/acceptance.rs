//! Acceptance suite: one PASS/FAIL/BLOCKED line per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits nonzero if any
//! criterion fails. Blocked criteria need external data and do not fail
//! the run.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use miscause::causal_test::{adaptive_simpson, t_cdf, t_density, two_sample_t_test, DfRule};
use miscause::classifier::{
    finite_diff_gradient, init_model, input_gradient, predict, train, ClassificationRecord,
    ModelParams, ScoreVector, TrainConfig,
};
use miscause::dataset::{
    compute_channel_stats, encode_cifar10, generate_planted_dataset, load_cifar10,
    load_dataset_dir, normalize_image, parse_cifar10, write_cifar10, ChannelStats, LabeledImage,
    NormalizedImage, PlantedConfig, RawImage, CHANNELS, IMAGE_LEN, PLANE,
};
use miscause::intervention::{do_intervention, InterventionSpec, DEFAULT_TOP_P};
use miscause::netgraph::{build_network, in_degrees, DEFAULT_THETA};
use miscause::pipeline::{run_pipeline, RunConfig};
use miscause::stats::{
    chi_squared_homogeneity, conditional_rates, misclass_rates, rate_table, tally,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Outcome::{Blocked, Fail, Pass};

type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn counting() -> Outcome {
    const C: usize = 10;
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let records: Vec<ClassificationRecord> = (0..N)
        .map(|k| {
            let t = rng.random_range(0..C);
            let p = if rng.random_bool(0.6) {
                t
            } else {
                rng.random_range(0..C)
            };
            let mut s = vec![0.01; C];
            s[p] = 1.0 - 0.01 * (C - 1) as f64;
            ClassificationRecord {
                image_id: format!("r{k}"),
                true_label: t,
                predicted_label: p,
                scores: ScoreVector::new(s).unwrap(),
                model_id: "m".into(),
            }
        })
        .collect();
    let start = Instant::now();
    let counts = tally(&records, C).unwrap();
    let rates = rate_table(&counts);
    let elapsed = start.elapsed();

    let mut brute = vec![vec![0u64; C]; C];
    for r in &records {
        brute[r.true_label][r.predicted_label] += 1;
    }
    let mut ok = counts.counts == brute;
    for (i, row) in brute.iter().enumerate() {
        let n: u64 = row.iter().sum();
        let miss = n - row[i];
        ok &= rates.u.values[i] == miss as f64 / n as f64;
        for (j, &nij) in row.iter().enumerate() {
            let want = if i == j || miss == 0 {
                0.0
            } else {
                nij as f64 / miss as f64
            };
            ok &= rates.v.matrix[i][j] == want;
        }
    }
    ok &= misclass_rates(&counts) == rates.u && conditional_rates(&counts) == rates.v;
    match within(elapsed, Duration::from_secs(1)) {
        Ok(()) => check(
            ok,
            format!("{N} records, exact agreement={ok}, {elapsed:.2?}"),
        ),
        Err(e) => Fail(e),
    }
}

fn in_degree_oracle() -> Outcome {
    const C: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut counts = miscause::stats::ConfusionCounts::zeros(C);
        for i in 0..C {
            for j in 0..C {
                counts.counts[i][j] = if rng.random_bool(0.3) {
                    0
                } else {
                    rng.random_range(0..40)
                };
            }
        }
        let rates = rate_table(&counts);
        let v = &rates.v.matrix;
        for theta in [0.0, 0.3, 0.9] {
            let got = in_degrees(&build_network(&rates, theta, "m").unwrap());
            for j in 0..C {
                let mut want = 0.0;
                for (i, row) in v.iter().enumerate() {
                    if i != j && row[j] > 0.0 && row[j] >= theta {
                        want += row[j];
                    }
                }
                worst = worst.max((got[j] - want).abs());
            }
        }
    }
    check(
        worst <= 1e-12 && DEFAULT_THETA == 0.3,
        format!("max error {worst:.1e} over 300 networks, default theta {DEFAULT_THETA}"),
    )
}

fn t_machinery() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for d in [1usize, 2, 5, 10, 30, 100] {
        // s = tan(a) maps the real line onto (-pi/2, pi/2).
        let g = |a: f64| {
            let s = a.tan();
            t_density(s, d).unwrap() * (1.0 + s * s)
        };
        let total = adaptive_simpson(g, -FRAC_PI_2, FRAC_PI_2, 1e-12);
        worst = worst.max((total - 1.0).abs());
    }
    let cdf = t_cdf(1.0, 1).unwrap();
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let hand = two_sample_t_test(&a, &b, DfRule::Standard)
        .unwrap()
        .t_statistic;
    let same = two_sample_t_test(&a, &a, DfRule::Standard).unwrap();
    let elapsed = start.elapsed();
    let ok = worst <= 1e-9
        && (cdf - 0.75).abs() <= 1e-10
        && (hand + 1.0).abs() <= 1e-12
        && same.t_statistic == 0.0
        && same.p_value == 1.0;
    match within(elapsed, Duration::from_secs(5)) {
        Ok(()) => check(
            ok,
            format!(
                "density mass error {worst:.1e}, cdf(1,1)={cdf:.12}, hand t={hand}, identical t={} p={}, {elapsed:.2?}",
                same.t_statistic, same.p_value
            ),
        ),
        Err(e) => Fail(e),
    }
}

fn homogeneity() -> Outcome {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let same = chi_squared_homogeneity(&[vec![4, 7, 2], vec![4, 7, 2]]).unwrap();
    let r = chi_squared_homogeneity(&[vec![10, 20], vec![20, 10]]).unwrap();
    let oracle = 1.0 - ChiSquared::new(1.0).unwrap().cdf(20.0 / 3.0);
    let ok = same.statistic == 0.0
        && same.p_value == 1.0
        && (r.statistic - 20.0 / 3.0).abs() <= 1e-9
        && (r.p_value - oracle).abs() <= 1e-6
        && (r.p_value - 0.00982).abs() <= 1e-5;
    check(
        ok,
        format!(
            "identical rows stat={} p={}; 2x2 stat={:.12} p={:.8} (oracle {oracle:.8})",
            same.statistic, same.p_value, r.statistic, r.p_value
        ),
    )
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut worst = 0.0f64;
    let (mut accepted, mut redrawn) = (0, 0);
    let mut k = 0u64;
    while accepted < 5 && k < 50 {
        let c = 2 + (k as usize % 9);
        let params = init_model(100 + k, c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + k);
        k += 1;
        let x = NormalizedImage::from_values(
            (0..IMAGE_LEN)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap();
        let target = rng.random_range(0..c);
        let g = input_gradient(&params, &x, target).unwrap();
        let err = |h: f64| {
            let fd = finite_diff_gradient(&params, &x, target, h).unwrap();
            let norm = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            g.iter()
                .zip(&fd)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / norm.max(1e-12)
        };
        let e = err(H);
        // A ReLU or pooling switch inside [x-h, x+h] breaks the difference
        // quotient, not the gradient; it shows up as disagreement that
        // vanishes at a smaller step.
        if e > 1e-6 && err(H / 10.0) <= 1e-6 {
            redrawn += 1;
            continue;
        }
        worst = worst.max(e);
        accepted += 1;
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "max relative error {worst:.2e} over {accepted} triples at h={H:e} ({redrawn} redrawn: activation switch within h), {elapsed:.2?}"
    );
    match within(elapsed, Duration::from_secs(30)) {
        Ok(()) => check(accepted == 5 && worst <= 1e-6, detail),
        Err(e) => Fail(format!("{detail}; {e}")),
    }
}

fn loader_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let images: Vec<LabeledImage> = (0..50)
        .map(|k| LabeledImage {
            id: format!("data_batch_1:{k}"),
            label: rng.random_range(0..10),
            image: RawImage::new((0..IMAGE_LEN).map(|_| rng.random()).collect()).unwrap(),
        })
        .collect();
    let bytes = encode_cifar10(&images).unwrap();
    let parsed = parse_cifar10(&bytes, "data_batch_1").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("data_batch_1.bin");
    write_cifar10(&file, &images).unwrap();
    let reloaded = load_cifar10(&file).unwrap();
    let round_trip = parsed == images
        && reloaded == images
        && std::fs::read(&file).unwrap() == bytes
        && encode_cifar10(&parsed).unwrap() == bytes;

    let data = generate_planted_dataset(&PlantedConfig::default(), 5).unwrap();
    let stats = compute_channel_stats(&data.train).unwrap();
    let (mut mean_err, mut std_err) = (0.0f64, 0.0f64);
    for (m, s) in channel_moments(&data.train, &stats) {
        mean_err = mean_err.max(m.abs());
        std_err = std_err.max((s - 1.0).abs());
    }
    check(
        round_trip && mean_err <= 1e-9 && std_err <= 1e-6,
        format!("round trip bit-exact={round_trip}; normalized train max|mean|={mean_err:.1e}, max|std-1|={std_err:.1e}"),
    )
}

fn channel_moments(images: &[LabeledImage], stats: &ChannelStats) -> Vec<(f64, f64)> {
    let mut sum = [0.0f64; CHANNELS];
    let mut sq = [0.0f64; CHANNELS];
    for img in images {
        let x = normalize_image(&img.image, stats).unwrap();
        for ch in 0..CHANNELS {
            for v in &x.values()[ch * PLANE..(ch + 1) * PLANE] {
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
    }
    let n = (images.len() * PLANE) as f64;
    (0..CHANNELS)
        .map(|ch| {
            let m = sum[ch] / n;
            (m, (sq[ch] / n - m * m).sqrt())
        })
        .collect()
}

fn efficacy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: 16,
        epochs: 20,
        seed,
        shuffle: true,
        parallel: true,
    }
}

fn fit(
    train_set: &[LabeledImage],
    classes: usize,
    cfg: &TrainConfig,
) -> (ModelParams, ChannelStats) {
    let stats = compute_channel_stats(train_set).unwrap();
    let set: Vec<_> = train_set
        .iter()
        .map(|i| (normalize_image(&i.image, &stats).unwrap(), i.label))
        .collect();
    let (params, _) = train(&init_model(cfg.seed, classes).unwrap(), &set, cfg).unwrap();
    (params, stats)
}

fn accuracy(params: &ModelParams, stats: &ChannelStats, images: &[LabeledImage]) -> f64 {
    let ok = images
        .iter()
        .filter(|i| {
            predict(params, &normalize_image(&i.image, stats).unwrap())
                .unwrap()
                .predicted_label
                == i.label
        })
        .count();
    ok as f64 / images.len() as f64
}

fn planted_training() -> Outcome {
    let start = Instant::now();
    let data = generate_planted_dataset(&PlantedConfig::default(), 1).unwrap();
    let (params, stats) = fit(&data.train, 3, &efficacy_train_config(1));
    let acc = accuracy(&params, &stats, &data.test);
    let elapsed = start.elapsed();
    let detail = format!(
        "{} train / {} test, accuracy {acc:.4}, {elapsed:.1?}",
        data.train.len(),
        data.test.len()
    );
    match within(elapsed, Duration::from_secs(300)) {
        Ok(()) => check(acc >= 0.95, detail),
        Err(e) => Fail(format!("{detail}; {e}")),
    }
}

fn cifar_training() -> Outcome {
    let Some(dir) = std::env::var_os("CIFAR10_DIR") else {
        return Blocked("CIFAR-10 binaries not available; set CIFAR10_DIR to run".into());
    };
    let start = Instant::now();
    let data = match load_dataset_dir(Path::new(&dir), Some(&[0, 1])) {
        Ok(d) => d,
        Err(e) => return Blocked(format!("cannot load {}: {e}", dir.to_string_lossy())),
    };
    let train_set: Vec<_> = data.train.into_iter().take(2000).collect();
    let test_set: Vec<_> = data.test.into_iter().take(400).collect();
    let (params, stats) = fit(&train_set, 2, &efficacy_train_config(1));
    let acc = accuracy(&params, &stats, &test_set);
    let elapsed = start.elapsed();
    let detail = format!("plane vs car, accuracy {acc:.4}, {elapsed:.1?}");
    match within(elapsed, Duration::from_secs(900)) {
        Ok(()) => check(acc >= 0.75, detail),
        Err(e) => Fail(format!("{detail}; {e}")),
    }
}

fn intervention_efficacy() -> Outcome {
    let cfg = PlantedConfig {
        correlation: 1.0,
        ..PlantedConfig::default()
    };
    let data = generate_planted_dataset(&cfg, 1).unwrap();
    let (params, stats) = fit(&data.train, cfg.num_classes, &efficacy_train_config(1));
    let mut patch_caused = Vec::new();
    let mut controls = Vec::new();
    for (img, truth) in data.test.iter().zip(&data.test_truth) {
        let pred = predict(&params, &normalize_image(&img.image, &stats).unwrap())
            .unwrap()
            .predicted_label;
        match &truth.patch {
            Some(p) if truth.interference && pred == p.class && pred != img.label => {
                patch_caused.push((img, truth))
            }
            _ if !truth.interference && pred == img.label && controls.len() < 200 => {
                controls.push((img, truth))
            }
            _ => {}
        }
    }
    let run = |set: &[(&LabeledImage, &miscause::dataset::PlantedTruth)]| {
        set.iter()
            .filter(|(img, truth)| {
                let spec =
                    InterventionSpec::new(DEFAULT_TOP_P, 7, 7).with_mask(Some(truth.object_mask()));
                do_intervention(&params, &stats, img, &spec, "m")
                    .unwrap()
                    .after
                    .is_correct()
            })
            .count()
    };
    let flipped = run(&patch_caused);
    let still_correct = run(&controls);
    let flip_rate = flipped as f64 / patch_caused.len().max(1) as f64;
    let collateral = (controls.len() - still_correct) as f64 / controls.len().max(1) as f64;
    check(
        !patch_caused.is_empty()
            && controls.len() == 200
            && flip_rate >= 0.80
            && collateral <= 0.05,
        format!(
            "flipped {flipped}/{} ({flip_rate:.3}), collateral {}/{} ({collateral:.3})",
            patch_caused.len(),
            controls.len() - still_correct,
            controls.len()
        ),
    )
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pcfg = PlantedConfig {
        train_size: 150,
        test_size: 60,
        correlation: 1.0,
        ..PlantedConfig::default()
    };
    let data = dir.path().join("data");
    generate_planted_dataset(&pcfg, 4)
        .unwrap()
        .write(&data)
        .unwrap();
    let mut trees = Vec::new();
    for k in 0..2 {
        let cfg = RunConfig {
            dataset: data.clone(),
            seed: 4,
            output: dir.path().join(format!("report-{k}")),
            train: TrainConfig {
                epochs: 3,
                batch_size: 16,
                parallel: true,
                ..TrainConfig::default()
            },
            sweep_dx: vec![3, 7],
            sweep_dy: vec![7],
            ..RunConfig::default()
        };
        run_pipeline(&cfg).unwrap();
        trees.push(read_tree(&cfg.output));
    }
    let files = trees[0].len();
    let differing: Vec<_> = trees[0]
        .iter()
        .filter(|(name, bytes)| trees[1].get(*name) != Some(bytes))
        .map(|(name, _)| name.clone())
        .collect();
    check(
        files > 0 && differing.is_empty() && trees[0].len() == trees[1].len(),
        format!("{files} files compared, differing: {differing:?}"),
    )
}

fn main() {
    // `cargo test -- --list` and similar probes expect no work to be done.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 10] = [
        ("counting exactness", counting),
        ("in-degree oracle", in_degree_oracle),
        ("t-machinery", t_machinery),
        ("homogeneity", homogeneity),
        ("gradient correctness", gradient_check),
        ("loader/normalization", loader_normalization),
        ("desk-scale training (planted)", planted_training),
        (
            "desk-scale training (CIFAR-10 plane vs car)",
            cifar_training,
        ),
        ("intervention efficacy", intervention_efficacy),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        match outcome {
            Pass(d) => println!("PASS    {name}: {d}"),
            Blocked(d) => println!("BLOCKED {name}: {d}"),
            Fail(d) => {
                failed += 1;
                println!("FAIL    {name}: {d}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
