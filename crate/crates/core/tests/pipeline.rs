use std::fs;
use std::path::Path;

use miscause::classifier::{load_prediction_log, TrainConfig};
use miscause::dataset::{generate_planted_dataset, PlantedConfig};
use miscause::pipeline::{run_pipeline, RunConfig, TTestEntry};

fn small_run(dir: &Path) -> RunConfig {
    let pcfg = PlantedConfig {
        train_size: 150,
        test_size: 60,
        correlation: 1.0,
        ..PlantedConfig::default()
    };
    let data = dir.join("data");
    generate_planted_dataset(&pcfg, 2)
        .unwrap()
        .write(&data)
        .unwrap();
    RunConfig {
        dataset: data,
        seed: 2,
        output: dir.join("report"),
        train: TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        },
        sweep_dx: vec![7],
        sweep_dy: vec![7],
        ..RunConfig::default()
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn report_bundle_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path());
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.models.len(), 2);
    assert_eq!(summary.num_classes, 3);

    let out = &cfg.output;
    for name in [
        "config.json",
        "ttest.json",
        "homogeneity.json",
        "consistency.json",
        "sweep.csv",
        "summary.json",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
    for m in &summary.models {
        let md = out.join("models").join(&m.model_id);
        for name in [
            "predictions.jsonl",
            "counts.csv",
            "u.csv",
            "v.csv",
            "network.dot",
            "network.json",
            "trace.csv",
            "model.bin",
            "score_ratios.csv",
        ] {
            assert!(md.join(name).is_file(), "{}/{name}", m.model_id);
        }
        let log = load_prediction_log(md.join("predictions.jsonl"), None).unwrap();
        assert_eq!(log.len(), 60);
        let correct = log.iter().filter(|r| r.is_correct()).count();
        assert_eq!(correct as f64 / 60.0, m.accuracy);
        let trace = fs::read_to_string(md.join("trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 3);
    }

    let tt: Vec<TTestEntry> = serde_json::from_value(json(&out.join("ttest.json"))).unwrap();
    assert_eq!(tt.len(), 2);
    assert!(tt.iter().all(|e| e.report.is_some() != e.note.is_some()));
    let h = json(&out.join("homogeneity.json"));
    assert_eq!(h["models"].as_array().unwrap().len(), 2);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2);
    assert!(sweep.starts_with("top_p,dx,dy,flip_rate,collateral_rate,mean_erased_pixels"));
    let cfg_back: RunConfig = serde_json::from_value(json(&out.join("config.json"))).unwrap();
    assert_eq!(cfg_back.seed, 2);
    // no staging directories are left behind
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with('.'))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn rerun_replaces_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path());
    run_pipeline(&cfg).unwrap();
    fs::write(cfg.output.join("stale.txt"), "x").unwrap();
    run_pipeline(&cfg).unwrap();
    assert!(!cfg.output.join("stale.txt").exists());
}

#[test]
fn failing_run_keeps_previous_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path());
    run_pipeline(&cfg).unwrap();
    let before = fs::read(cfg.output.join("summary.json")).unwrap();
    cfg.models = vec![dir.path().join("absent.bin")];
    assert!(run_pipeline(&cfg).is_err());
    assert_eq!(fs::read(cfg.output.join("summary.json")).unwrap(), before);
}
