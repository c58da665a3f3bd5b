//! Subcommands of the `miscause` binary.

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use miscause::causal_test::{two_sample_t_test, DfRule, TTestReport};
use miscause::classifier::{
    init_model, load_model, load_prediction_log, predict_batch, save_model, train,
    write_prediction_log, ClassificationRecord, TrainConfig, TrainedModel,
};
use miscause::dataset::{
    compute_channel_stats, generate_planted_dataset, load_dataset_dir, normalize_image,
    DatasetBundle, Mask, PlantedConfig,
};
use miscause::intervention::{
    sweep, write_sweep_csv, ErasureSpace, SweepGrid, SweepItem, SweepOptions,
};
use miscause::netgraph::{build_network, export_dot, network_json, DEFAULT_THETA};
use miscause::pipeline::{run_pipeline, RunConfig};
use miscause::saliency::SaliencySource;
use miscause::stats::{
    chi_squared_homogeneity, rate_table, score_ratios, score_samples, tally,
    write_score_samples_csv, Category, CategoryMap, ScoreKind,
};

use crate::server::{self, to_json, InterveneRequest, Session};

#[derive(Parser, Debug)]
#[command(
    name = "miscause",
    version,
    about = "Misclassification diagnostics and erasure interventions"
)]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-interference dataset directory.
    GenPlanted(GenPlantedArgs),
    /// Train the built-in classifier.
    Train(TrainArgs),
    /// Write a prediction log for a dataset split.
    Predict(PredictArgs),
    /// Counts, rates and network files for one prediction log.
    Analyze(AnalyzeArgs),
    /// Print the misclassification network of a log.
    Network(NetworkArgs),
    /// Chi-squared homogeneity of misclassification counts across models.
    Homogeneity(HomogeneityArgs),
    /// Two-sample t-test between the score samples of two categories.
    Ttest(TtestArgs),
    /// Saliency map of one image.
    Saliency(SaliencyArgs),
    /// Erase saliency-anchored boxes in one image and reclassify.
    Intervene(InterveneArgs),
    /// Intervention grid over a dataset's test split.
    Sweep(SweepArgs),
    /// Serve the HTTP API for one model and dataset.
    Serve(ServeArgs),
    /// Run the whole pipeline and write a report directory.
    Run(RunArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Planted dataset or CIFAR-10 batch directory.
    #[arg(long)]
    pub data: PathBuf,
    /// CIFAR-10 class subset, e.g. `0,1`.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
}

impl DataArgs {
    fn load(&self) -> Result<DatasetBundle> {
        Ok(load_dataset_dir(&self.data, self.classes.as_deref())?)
    }
}

#[derive(Args, Debug)]
pub struct GenPlantedArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON generator config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub correlation: Option<f64>,
    #[arg(long)]
    pub patch_fraction: Option<f64>,
    #[arg(long)]
    pub interference_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "model")]
    pub model_id: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long)]
    pub no_shuffle: bool,
    /// Per-sample gradients in parallel (same result, fixed reduction order).
    #[arg(long)]
    pub parallel: bool,
    /// Per-epoch loss/accuracy CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Output log; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LogArgs {
    /// JSON-lines prediction log.
    #[arg(long)]
    pub log: PathBuf,
    /// Class names for the output files, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub names: Option<Vec<String>>,
}

impl LogArgs {
    fn load(&self) -> Result<(Vec<ClassificationRecord>, Vec<String>)> {
        let records = load_prediction_log(&self.log, None)?;
        let c = records
            .first()
            .map(|r| r.scores.len())
            .context("prediction log is empty")?;
        let names = match &self.names {
            Some(n) if n.len() == c => n.clone(),
            Some(n) => bail!("{} names given for {c} classes", n.len()),
            None => (0..c).map(|i| i.to_string()).collect(),
        };
        Ok((records, names))
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub log: LogArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum GraphFormat {
    Dot,
    Json,
}

#[derive(Args, Debug)]
pub struct NetworkArgs {
    #[command(flatten)]
    pub log: LogArgs,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = GraphFormat::Dot)]
    pub format: GraphFormat,
}

#[derive(Args, Debug)]
pub struct HomogeneityArgs {
    /// Logs to compare; records are grouped by model id.
    #[arg(long = "log", required = true)]
    pub logs: Vec<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DfRuleArg {
    Paper,
    Standard,
}

impl From<DfRuleArg> for DfRule {
    fn from(r: DfRuleArg) -> Self {
        match r {
            DfRuleArg::Paper => DfRule::Paper,
            DfRuleArg::Standard => DfRule::Standard,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreKindArg {
    Ratio,
    Difference,
}

impl From<ScoreKindArg> for ScoreKind {
    fn from(k: ScoreKindArg) -> Self {
        match k {
            ScoreKindArg::Ratio => ScoreKind::Ratio,
            ScoreKindArg::Difference => ScoreKind::Difference,
        }
    }
}

#[derive(Args, Debug)]
pub struct TtestArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// JSON list of `{from, to, category}` entries.
    #[arg(long)]
    pub category_map: Option<PathBuf>,
    /// Planted dataset whose ground truth categorizes each image.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DfRuleArg::Paper)]
    pub df_rule: DfRuleArg,
    #[arg(long, value_enum, default_value_t = ScoreKindArg::Ratio)]
    pub kind: ScoreKindArg,
    /// Also write the per-image samples as CSV.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelDataArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gradient,
    Occlusion,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub input: ModelDataArgs,
    #[arg(long)]
    pub id: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Gradient)]
    pub method: MethodArg,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Raw,
    Normalized,
}

impl From<SpaceArg> for ErasureSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Raw => ErasureSpace::Raw,
            SpaceArg::Normalized => ErasureSpace::Normalized,
        }
    }
}

#[derive(Args, Debug)]
pub struct InterveneArgs {
    #[command(flatten)]
    pub input: ModelDataArgs,
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value_t = 0.05)]
    pub top_p: f64,
    #[arg(long, default_value_t = 7)]
    pub dx: usize,
    #[arg(long, default_value_t = 7)]
    pub dy: usize,
    /// Spare mask: PNG (nonzero = spare) or run-length JSON.
    #[arg(long, conflicts_with = "truth_mask")]
    pub mask: Option<PathBuf>,
    /// Spare the object region recorded in the dataset's ground truth.
    #[arg(long)]
    pub truth_mask: bool,
    #[arg(long, value_enum, default_value_t = SpaceArg::Raw)]
    pub space: SpaceArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: ModelDataArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub top_p: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub dx: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub dy: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub max_controls: usize,
    /// Ignore ground-truth object masks.
    #[arg(long)]
    pub no_spare: bool,
    #[arg(long, value_enum, default_value_t = SpaceArg::Raw)]
    pub space: SpaceArg,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub input: ModelDataArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    #[arg(long = "log")]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub num_models: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub dx: Option<usize>,
    #[arg(long)]
    pub dy: Option<usize>,
    #[arg(long, value_enum)]
    pub df_rule: Option<DfRuleArg>,
    #[arg(long)]
    pub category_map: Option<PathBuf>,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.dataset = d.clone();
        }
        if self.classes.is_some() {
            cfg.classes = self.classes.clone();
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if !self.models.is_empty() {
            cfg.models = self.models.clone();
        }
        if !self.logs.is_empty() {
            cfg.logs = self.logs.clone();
        }
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {
                $(if let Some(v) = self.$field { $target = v.into(); })*
            };
        }
        set!(
            num_models => cfg.num_models,
            seed => cfg.seed,
            epochs => cfg.train.epochs,
            learning_rate => cfg.train.learning_rate,
            batch_size => cfg.train.batch_size,
            theta => cfg.theta,
            top_p => cfg.top_p,
            dx => cfg.dx,
            dy => cfg.dy,
            df_rule => cfg.df_rule
        );
        if self.category_map.is_some() {
            cfg.category_map = self.category_map.clone();
        }
        if cfg.dataset.as_os_str().is_empty() {
            bail!("no dataset given (use --data or a config file)");
        }
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json_line(value: &impl serde::Serialize) -> Vec<u8> {
    let mut bytes = to_json(value);
    bytes.push(b'\n');
    bytes
}

fn gen_planted(a: &GenPlantedArgs) -> Result<()> {
    let mut cfg: PlantedConfig = match &a.config {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => PlantedConfig::default(),
    };
    if let Some(v) = a.num_classes {
        cfg.num_classes = v;
    }
    if let Some(v) = a.train_size {
        cfg.train_size = v;
    }
    if let Some(v) = a.test_size {
        cfg.test_size = v;
    }
    if let Some(v) = a.correlation {
        cfg.correlation = v;
    }
    if let Some(v) = a.patch_fraction {
        cfg.patch_fraction = v;
    }
    if let Some(v) = a.interference_fraction {
        cfg.interference_fraction = v;
    }
    generate_planted_dataset(&cfg, a.seed)?.write(&a.out)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let data = a.data.load()?;
    let stats = compute_channel_stats(&data.train)?;
    let set = data
        .train
        .iter()
        .map(|img| Ok((normalize_image(&img.image, &stats)?, img.label)))
        .collect::<miscause::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        parallel: a.parallel,
    };
    let (params, trace) = train(&init_model(a.seed, data.num_classes())?, &set, &cfg)?;
    if let Some(t) = &a.trace {
        trace
            .write_csv(fs::File::create(t).with_context(|| format!("creating {}", t.display()))?)?;
    }
    save_model(
        &a.out,
        &TrainedModel {
            model_id: a.model_id.clone(),
            params,
            stats,
            seed: a.seed,
            train_config: Some(cfg),
        },
    )?;
    Ok(())
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let data = a.data.load()?;
    let model = load_model(&a.model)?;
    let images = match a.split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let inputs = images
        .iter()
        .map(|img| normalize_image(&img.image, &model.stats))
        .collect::<miscause::Result<Vec<_>>>()?;
    let records: Vec<_> = images
        .iter()
        .zip(predict_batch(&model.params, &inputs)?)
        .map(|(img, p)| {
            ClassificationRecord::from_prediction(&img.id, img.label, p, &model.model_id)
        })
        .collect();
    let mut buf = Vec::new();
    write_prediction_log(&records, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let (records, names) = a.log.load()?;
    let counts = tally(&records, names.len())?;
    let rates = rate_table(&counts);
    fs::create_dir_all(&a.out)?;
    let file = |n: &str| fs::File::create(a.out.join(n)).with_context(|| format!("creating {n}"));
    counts.write_csv(file("counts.csv")?, &names)?;
    rates.u.write_csv(file("u.csv")?, &names)?;
    rates.v.write_csv(file("v.csv")?, &names)?;
    let model_id = records
        .first()
        .map(|r| r.model_id.as_str())
        .unwrap_or_default();
    let net = build_network(&rates, a.theta, model_id)?;
    fs::write(a.out.join("network.dot"), export_dot(&net, Some(&names)))?;
    fs::write(
        a.out.join("network.json"),
        json_line(&network_json(&net, &names)),
    )?;
    Ok(())
}

fn network(a: &NetworkArgs) -> Result<()> {
    let (records, names) = a.log.load()?;
    let rates = rate_table(&tally(&records, names.len())?);
    let model_id = records
        .first()
        .map(|r| r.model_id.as_str())
        .unwrap_or_default();
    let net = build_network(&rates, a.theta, model_id)?;
    let bytes = match a.format {
        GraphFormat::Dot => export_dot(&net, Some(&names)).into_bytes(),
        GraphFormat::Json => json_line(&network_json(&net, &names)),
    };
    emit(None, &bytes)
}

fn homogeneity(a: &HomogeneityArgs) -> Result<()> {
    let mut models: Vec<(String, Vec<ClassificationRecord>)> = Vec::new();
    for path in &a.logs {
        for r in load_prediction_log(path, None)? {
            match models.iter_mut().find(|(id, _)| *id == r.model_id) {
                Some((_, v)) => v.push(r),
                None => models.push((r.model_id.clone(), vec![r])),
            }
        }
    }
    if models.len() < 2 {
        bail!("homogeneity needs records from at least two models");
    }
    let c = models[0].1[0].scores.len();
    let rows = models
        .iter()
        .map(|(_, recs)| Ok(tally(recs, c)?.misclassified_totals()))
        .collect::<Result<Vec<_>>>()?;
    let result = chi_squared_homogeneity(&rows)?;
    let ids: Vec<&str> = models.iter().map(|(id, _)| id.as_str()).collect();
    emit(
        None,
        &json_line(&serde_json::json!({ "models": ids, "result": result })),
    )
}

fn ttest(a: &TtestArgs) -> Result<()> {
    let records = load_prediction_log(&a.log, None)?;
    let kind = a.kind.into();
    let samples = if let Some(p) = &a.category_map {
        score_ratios(&records, &CategoryMap::load(p)?, kind)?
    } else if let Some(d) = &a.data {
        let data = load_dataset_dir(d, None)?;
        if data.truth.is_empty() {
            bail!("{} has no ground truth; pass --category-map", d.display());
        }
        score_samples(&records, kind, |r| {
            let truth = data.truth.get(&r.image_id)?;
            Some(match &truth.patch {
                Some(p) if p.class == r.predicted_label => Category::Interference,
                _ => Category::Morphology,
            })
        })?
    } else if records.first().is_some_and(|r| r.scores.len() == 10) {
        score_ratios(&records, &CategoryMap::cifar10_default(), kind)?
    } else {
        bail!("pass --category-map or --data to categorize misclassifications");
    };
    if let Some(p) = &a.samples_out {
        write_score_samples_csv(&samples, fs::File::create(p)?)?;
    }
    let r = two_sample_t_test(&samples[0].values, &samples[1].values, a.df_rule.into())?;
    let report = TTestReport::new(
        &r,
        [
            samples[0].category.to_string(),
            samples[1].category.to_string(),
        ],
    );
    emit(None, &json_line(&report))
}

fn saliency_cmd(a: &SaliencyArgs) -> Result<()> {
    let session = Session::load(&a.input.model, &a.input.data, DEFAULT_THETA)?;
    let method = match a.method {
        MethodArg::Gradient => SaliencySource::Gradient,
        MethodArg::Occlusion => SaliencySource::Occlusion,
    };
    let resp = server::saliency(&session, &a.id, method).map_err(|e| anyhow::anyhow!(e.message))?;
    if a.csv.is_some() || a.png.is_some() {
        let values = resp.grid.concat();
        let map = miscause::saliency::SaliencyMap::new(values, resp.method, resp.target_class)?;
        if let Some(p) = &a.csv {
            map.save_csv(p)?;
        }
        if let Some(p) = &a.png {
            map.save_png(p)?;
        }
        return Ok(());
    }
    emit(None, &json_line(&resp))
}

fn intervene_cmd(a: &InterveneArgs) -> Result<()> {
    let session = Session::load(&a.input.model, &a.input.data, DEFAULT_THETA)?;
    let spare_mask = a.mask.as_ref().map(Mask::load).transpose()?;
    let req = InterveneRequest {
        id: a.id.clone(),
        p: a.top_p,
        dx: a.dx,
        dy: a.dy,
        spare_mask,
        truth_mask: a.truth_mask,
        space: a.space.into(),
    };
    let result = server::intervene(&session, &req).map_err(|e| anyhow::anyhow!(e.message))?;
    emit(None, &json_line(&result))
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let model = load_model(&a.input.model)?;
    let data = load_dataset_dir(&a.input.data, None)?;
    let masks: Vec<Option<Mask>> = data
        .test
        .iter()
        .map(|img| {
            if a.no_spare {
                None
            } else {
                data.spare_mask(&img.id)
            }
        })
        .collect();
    let items: Vec<SweepItem> = data
        .test
        .iter()
        .zip(&masks)
        .map(|(image, m)| SweepItem {
            image,
            spare_mask: m.as_ref(),
        })
        .collect();
    let grid = SweepGrid {
        top_p: a.top_p.clone(),
        dx: a.dx.clone(),
        dy: a.dy.clone(),
    };
    let options = SweepOptions {
        max_controls: Some(a.max_controls),
        space: a.space.into(),
    };
    let rows = sweep(
        &model.params,
        &model.stats,
        &items,
        &grid,
        &options,
        &model.model_id,
    )?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let session = Session::load(&a.input.model, &a.input.data, a.theta)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(session, a.addr))?;
    Ok(())
}

fn run_cmd(a: &RunArgs) -> Result<()> {
    let cfg = a.to_config()?;
    let summary = run_pipeline(&cfg)?;
    for m in &summary.models {
        eprintln!(
            "{}: accuracy {:.4} on {} images, {} edges",
            m.model_id, m.accuracy, m.test_images, m.edges
        );
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenPlanted(a) => gen_planted(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Analyze(a) => analyze(a),
        Command::Network(a) => network(a),
        Command::Homogeneity(a) => homogeneity(a),
        Command::Ttest(a) => ttest(a),
        Command::Saliency(a) => saliency_cmd(a),
        Command::Intervene(a) => intervene_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Run(a) => run_cmd(a),
    }
}

/// Process exit code for an error: 2 when an input path is missing, 1
/// otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<miscause::Error>() {
            match e.root() {
                miscause::Error::MissingPath(_) => return 2,
                miscause::Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => {
                    return 2
                }
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            if e.kind() == io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}
