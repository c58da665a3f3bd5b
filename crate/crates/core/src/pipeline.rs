//! End-to-end run: load data, train or load models, tally, build networks,
//! test, intervene, and write a report bundle.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causal_test::{two_sample_t_test, DfRule, TTestReport};
use crate::classifier::{
    init_model, load_model, load_prediction_log, predict_batch, save_model, train,
    write_prediction_log, ClassificationRecord, TrainConfig, TrainedModel, TrainingTrace,
};
use crate::dataset::{
    compute_channel_stats, load_dataset_dir, normalize_image, DatasetBundle, DatasetKind,
};
use crate::error::{Error, IoContext, Result};
use crate::intervention::{
    do_intervention, sweep, write_sweep_csv, InterventionSpec, SweepGrid, SweepItem, SweepOptions,
    DEFAULT_TOP_P,
};
use crate::netgraph::{
    build_network, consistent_edges, export_dot, network_json, MisclassNetwork, DEFAULT_THETA,
};
use crate::stats::{
    chi_squared_homogeneity, rate_table, score_ratios, score_samples, tally,
    write_score_samples_csv, Category, CategoryMap, ScoreKind, ScoreRatioSample,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Planted dataset directory or CIFAR-10 batch directory.
    pub dataset: PathBuf,
    /// CIFAR-10 class subset, relabelled in the given order.
    pub classes: Option<Vec<usize>>,
    /// Pretrained model files. When empty, `num_models` models are trained.
    pub models: Vec<PathBuf>,
    /// Prediction logs from external models, analysed alongside.
    pub logs: Vec<PathBuf>,
    pub num_models: usize,
    pub train: TrainConfig,
    pub seed: u64,
    pub output: PathBuf,
    pub theta: f64,
    pub top_p: f64,
    pub dx: usize,
    pub dy: usize,
    pub sweep_top_p: Vec<f64>,
    pub sweep_dx: Vec<usize>,
    pub sweep_dy: Vec<usize>,
    pub max_controls: Option<usize>,
    pub df_rule: DfRule,
    pub score_kind: ScoreKind,
    pub category_map: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            classes: None,
            models: Vec::new(),
            logs: Vec::new(),
            num_models: 2,
            train: TrainConfig::default(),
            seed: 0,
            output: PathBuf::from("report"),
            theta: DEFAULT_THETA,
            top_p: DEFAULT_TOP_P,
            dx: 7,
            dy: 7,
            sweep_top_p: vec![DEFAULT_TOP_P],
            sweep_dx: vec![3, 5, 7],
            sweep_dy: vec![3, 5, 7],
            max_controls: Some(200),
            df_rule: DfRule::Paper,
            score_kind: ScoreKind::Ratio,
            category_map: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&fs::read_to_string(path).at(path)?)?)
    }

    /// Every input path must exist before anything is written.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = std::iter::once(&self.dataset)
            .chain(&self.models)
            .chain(&self.logs)
            .chain(&self.category_map);
        for p in inputs {
            if !p.exists() {
                return Err(Error::MissingPath(p.clone()));
            }
        }
        Ok(())
    }

    fn grid(&self) -> SweepGrid {
        SweepGrid {
            top_p: self.sweep_top_p.clone(),
            dx: self.sweep_dx.clone(),
            dy: self.sweep_dy.clone(),
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// One analysed model: built-in (with parameters) or log-only.
struct ModelRun {
    model_id: String,
    records: Vec<ClassificationRecord>,
    model: Option<TrainedModel>,
    trace: Option<TrainingTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub accuracy: f64,
    pub test_images: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestEntry {
    pub model_id: String,
    pub report: Option<TTestReport>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub models: Vec<ModelSummary>,
    pub dataset_kind: String,
    pub num_classes: usize,
}

/// Runs the pipeline, staging output in a sibling directory that replaces
/// `cfg.output` only on success.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.check_paths()?;
    let parent = match cfg.output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).at(&parent)?;
    let name = cfg
        .output
        .file_name()
        .ok_or_else(|| Error::Config("output must name a directory".into()))?
        .to_string_lossy()
        .into_owned();
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).at(&staging)?;
    }
    fs::create_dir_all(&staging).at(&staging)?;
    match write_bundle(cfg, &staging) {
        Ok(summary) => {
            if cfg.output.exists() {
                fs::remove_dir_all(&cfg.output).at(&cfg.output)?;
            }
            fs::rename(&staging, &cfg.output).at(&cfg.output)?;
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).at(path)?))
}

fn obtain_models(cfg: &RunConfig, data: &DatasetBundle) -> Result<Vec<ModelRun>> {
    let c = data.num_classes();
    let mut runs = Vec::new();
    if cfg.models.is_empty() {
        let stats = compute_channel_stats(&data.train)?;
        let train_set = data
            .train
            .iter()
            .map(|img| Ok((normalize_image(&img.image, &stats)?, img.label)))
            .collect::<Result<Vec<_>>>()?;
        for k in 0..cfg.num_models {
            let seed = cfg.seed + k as u64;
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            log::info!("training model {k} (seed {seed})");
            let (params, trace) = train(&init_model(seed, c)?, &train_set, &tc)?;
            runs.push(ModelRun {
                model_id: format!("model-{k}"),
                records: Vec::new(),
                model: Some(TrainedModel {
                    model_id: format!("model-{k}"),
                    params,
                    stats,
                    seed,
                    train_config: Some(tc),
                }),
                trace: Some(trace),
            });
        }
    } else {
        for path in &cfg.models {
            let m = load_model(path)?;
            if m.params.num_classes != c {
                return Err(Error::MixedClasses {
                    first: c,
                    other: m.params.num_classes,
                });
            }
            runs.push(ModelRun {
                model_id: m.model_id.clone(),
                records: Vec::new(),
                model: Some(m),
                trace: None,
            });
        }
    }
    for run in &mut runs {
        let m = run.model.as_ref().expect("built-in model");
        let inputs = data
            .test
            .iter()
            .map(|img| normalize_image(&img.image, &m.stats))
            .collect::<Result<Vec<_>>>()?;
        let preds = predict_batch(&m.params, &inputs)?;
        run.records = data
            .test
            .iter()
            .zip(preds)
            .map(|(img, p)| {
                ClassificationRecord::from_prediction(&img.id, img.label, p, &run.model_id)
            })
            .collect();
    }
    Ok(runs)
}

fn load_logs(cfg: &RunConfig, c: usize) -> Result<Vec<ModelRun>> {
    let mut runs = Vec::new();
    for path in &cfg.logs {
        let records = load_prediction_log(path, Some(c))?;
        let model_id = records
            .first()
            .map(|r| r.model_id.clone())
            .unwrap_or_else(|| {
                path.file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            });
        runs.push(ModelRun {
            model_id,
            records,
            model: None,
            trace: None,
        });
    }
    Ok(runs)
}

/// Per-image categories from planted ground truth: a misclassification onto
/// the patch class is interference, any other is morphology.
fn planted_samples(
    records: &[ClassificationRecord],
    data: &DatasetBundle,
    kind: ScoreKind,
) -> Result<Vec<ScoreRatioSample>> {
    score_samples(records, kind, |r| {
        let truth = data.truth.get(&r.image_id)?;
        Some(match &truth.patch {
            Some(p) if p.class == r.predicted_label => Category::Interference,
            _ => Category::Morphology,
        })
    })
}

fn t_test_entry(model_id: &str, samples: &[ScoreRatioSample], rule: DfRule) -> TTestEntry {
    let (a, b) = (&samples[0], &samples[1]);
    let names = [a.category.to_string(), b.category.to_string()];
    match two_sample_t_test(&a.values, &b.values, rule) {
        Ok(r) => TTestEntry {
            model_id: model_id.to_string(),
            report: Some(TTestReport::new(&r, names)),
            note: None,
        },
        Err(e) => TTestEntry {
            model_id: model_id.to_string(),
            report: None,
            note: Some(e.to_string()),
        },
    }
}

fn write_bundle(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let data = stage(
        "load dataset",
        load_dataset_dir(&cfg.dataset, cfg.classes.as_deref()),
    )?;
    let c = data.num_classes();
    let names = &data.class_names;
    let mut runs = stage("models", obtain_models(cfg, &data))?;
    runs.extend(stage("prediction logs", load_logs(cfg, c))?);
    if runs.is_empty() {
        return Err(Error::Config("no models to analyse".into()));
    }
    let category_map = match &cfg.category_map {
        Some(p) => Some(stage("category map", CategoryMap::load(p))?),
        None if data.kind == DatasetKind::Cifar10 && c == 10 => {
            Some(CategoryMap::cifar10_default())
        }
        None => None,
    };

    let mut record = cfg.clone();
    record.output = PathBuf::new();
    write_json(&out.join("config.json"), &record)?;

    let mut networks: Vec<MisclassNetwork> = Vec::new();
    let mut miscounts = Vec::new();
    let mut summaries = Vec::new();
    let mut ttests = Vec::new();
    let models_dir = out.join("models");
    for run in &runs {
        let dir = models_dir.join(&run.model_id);
        fs::create_dir_all(&dir).at(&dir)?;
        write_prediction_log(&run.records, create(&dir.join("predictions.jsonl"))?)?;
        let counts = stage("tally", tally(&run.records, c))?;
        let rates = rate_table(&counts);
        counts.write_csv(create(&dir.join("counts.csv"))?, names)?;
        rates.u.write_csv(create(&dir.join("u.csv"))?, names)?;
        rates.v.write_csv(create(&dir.join("v.csv"))?, names)?;
        let net = stage("network", build_network(&rates, cfg.theta, &run.model_id))?;
        fs::write(dir.join("network.dot"), export_dot(&net, Some(names)))
            .at(dir.join("network.dot"))?;
        write_json(&dir.join("network.json"), &network_json(&net, names))?;
        if let Some(trace) = &run.trace {
            trace.write_csv(create(&dir.join("trace.csv"))?)?;
        }
        if let Some(m) = &run.model {
            save_model(dir.join("model.bin"), m)?;
        }

        let samples = stage(
            "score ratios",
            match (&category_map, data.kind) {
                (Some(map), _) => score_ratios(&run.records, map, cfg.score_kind),
                (None, DatasetKind::Planted) => {
                    planted_samples(&run.records, &data, cfg.score_kind)
                }
                (None, _) => score_ratios(&run.records, &CategoryMap::default(), cfg.score_kind),
            },
        )?;
        write_score_samples_csv(&samples, create(&dir.join("score_ratios.csv"))?)?;
        ttests.push(t_test_entry(&run.model_id, &samples, cfg.df_rule));

        let total = counts.total();
        summaries.push(ModelSummary {
            model_id: run.model_id.clone(),
            accuracy: if total == 0 {
                0.0
            } else {
                counts.correct() as f64 / total as f64
            },
            test_images: total as usize,
            edges: net.edges.len(),
        });
        miscounts.push(counts.misclassified_totals());
        networks.push(net);
    }
    write_json(&out.join("ttest.json"), &ttests)?;

    #[derive(Serialize)]
    struct HomogeneityFile {
        models: Vec<String>,
        result: Option<crate::stats::HomogeneityResult>,
        note: Option<String>,
    }
    let (result, note) = if miscounts.len() < 2 {
        (
            None,
            Some("homogeneity needs at least two models".to_string()),
        )
    } else {
        match chi_squared_homogeneity(&miscounts) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    write_json(
        &out.join("homogeneity.json"),
        &HomogeneityFile {
            models: runs.iter().map(|r| r.model_id.clone()).collect(),
            result,
            note,
        },
    )?;
    write_json(
        &out.join("consistency.json"),
        &stage("consistency", consistent_edges(&networks))?,
    )?;

    if let Some(run) = runs.iter().find(|r| r.model.is_some()) {
        let m = run.model.as_ref().expect("checked");
        let masks: Vec<_> = data
            .test
            .iter()
            .map(|img| data.spare_mask(&img.id))
            .collect();
        let items: Vec<SweepItem> = data
            .test
            .iter()
            .zip(&masks)
            .map(|(image, mask)| SweepItem {
                image,
                spare_mask: mask.as_ref(),
            })
            .collect();
        let options = SweepOptions {
            max_controls: cfg.max_controls,
            ..Default::default()
        };
        let rows = stage(
            "sweep",
            sweep(
                &m.params,
                &m.stats,
                &items,
                &cfg.grid(),
                &options,
                &run.model_id,
            ),
        )?;
        write_sweep_csv(&rows, create(&out.join("sweep.csv"))?)?;

        // default intervention on every misclassified test image
        let mut w = create(&out.join("interventions.jsonl"))?;
        for (item, rec) in items.iter().zip(&run.records) {
            if rec.is_correct() {
                continue;
            }
            let spec = InterventionSpec::new(cfg.top_p, cfg.dx, cfg.dy)
                .with_mask(item.spare_mask.cloned());
            let result = stage(
                "intervention",
                do_intervention(&m.params, &m.stats, item.image, &spec, &run.model_id),
            )?;
            serde_json::to_writer(&mut w, &result)?;
            w.write_all(b"\n").at(out)?;
        }
        w.flush().at(out)?;
    }

    let summary = RunSummary {
        models: summaries,
        dataset_kind: match data.kind {
            DatasetKind::Planted => "planted".into(),
            DatasetKind::Cifar10 => "cifar10".into(),
        },
        num_classes: c,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.theta, 0.3);
        assert_eq!(cfg.top_p, 0.05);
        assert_eq!((cfg.dx, cfg.dy), (7, 7));
        assert!(serde_json::from_str::<RunConfig>(r#"{"thta": 1}"#).is_err());
    }

    #[test]
    fn missing_dataset_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            dataset: dir.path().join("nope"),
            output: dir.path().join("out"),
            ..Default::default()
        };
        assert!(matches!(run_pipeline(&cfg), Err(Error::MissingPath(_))));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
