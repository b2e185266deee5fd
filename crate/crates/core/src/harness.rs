//! Experiment orchestration behind the `cegan` binary: run configuration,
//! the six commands, output layout and the run manifest.
//!
//! Layout under the output directory (all relative paths in a config
//! resolve against it):
//!
//! ```text
//! data/{train,val,test}.cegan
//! checkpoints/class{k}_{attribute}.ckpt
//! models/{variant}.model
//! logs/{variant}_train.csv, logs/gan_class{k}_{attribute}.csv
//! eval/{variant}.json, .csv, .txt, _predictions.csv
//! sweep/sweep.{txt,csv,json}
//! report/{accuracy,precision}.{txt,csv}
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::write_atomic;
use crate::data::{
    encode_dataset, load_dataset, single_class_subset, split, synth_generate, LabeledImageSet, SplitSpec, SynthConfig,
};
use crate::error::{Error, Result};
use crate::experts::{
    assemble_ce_model, encode_model, evaluate, load_model, sweep_ce_layers, train_supervised, CeConfig, CeModel,
    FinetuneConfig, LayerRange, Sampling, SavedModel,
};
use crate::gan::{encode_checkpoint, load_checkpoint, train_gan, GanCheckpoint, GanConfig};
use crate::metrics::{render_comparison_ordered, report_from_percentages, round_half_up, MetricsReport};
use crate::nn::spec::shipped;
use crate::nn::ArchitectureSpec;
use crate::optim::AdamConfig;
use crate::tensor::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Resample,
    Costsens,
    Baseline,
    Cegan,
    Fcegan,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Resample,
        Variant::Costsens,
        Variant::Baseline,
        Variant::Cegan,
        Variant::Fcegan,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Resample => "resample",
            Variant::Costsens => "costsens",
            Variant::Baseline => "baseline",
            Variant::Cegan => "cegan",
            Variant::Fcegan => "fcegan",
        }
    }

    /// Row label in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Resample => "Resampling CNN (simplified, inspired by bootstrapping CNN)",
            Variant::Costsens => "Cost-sensitive CNN (simplified, inspired by cost-sensitive CNN)",
            Variant::Baseline => "Baseline CNN",
            Variant::Cegan => "CE-GAN CNN",
            Variant::Fcegan => "FCE-GAN CNN",
        }
    }

    pub fn uses_experts(self) -> bool {
        matches!(self, Variant::Cegan | Variant::Fcegan)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Defaults to `models/{variant}.model`.
    pub model: Option<PathBuf>,
    /// Defaults to `{data_dir}/test.cegan`.
    pub eval_dataset: Option<PathBuf>,
    /// Inputs of `report`; defaults to every `eval/*.json`.
    pub eval_outputs: Vec<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            model: None,
            eval_dataset: None,
            eval_outputs: vec![],
        }
    }
}

/// The run configuration file (one JSON object, unknown keys rejected).
/// The top-level `seed` drives every stage, so nested `seed` keys must stay
/// at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub variant: Variant,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    /// Required semantics only for cegan/fcegan; defaults to layers 3..=6.
    pub ce_layers: Option<LayerRange>,
    pub sweep_ranges: Option<Vec<LayerRange>>,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub gan: GanConfig,
    pub paths: PathsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            seed: 0,
            variant: Variant::Baseline,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 32,
            epochs: 20,
            max_steps: None,
            ce_layers: None,
            sweep_ranges: None,
            synth: SynthConfig::default(),
            split: SplitSpec::default(),
            gan: GanConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

pub const DEFAULT_CE_LAYERS: LayerRange = LayerRange { first: 3, last: 6 };

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn ce_layers(&self) -> LayerRange {
        self.ce_layers.unwrap_or(DEFAULT_CE_LAYERS)
    }

    pub fn sweep_ranges(&self) -> Vec<LayerRange> {
        self.sweep_ranges.clone().unwrap_or_else(LayerRange::sweep_defaults)
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be >= 2 (batch norm)"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be >= 1"));
        }
        for (field, s) in [("synth.seed", self.synth.seed), ("split.seed", self.split.seed), ("gan.seed", self.gan.seed)] {
            if s != 0 {
                return Err(Error::config(field, "nested seeds are not used; set the top-level `seed`"));
            }
        }
        if self.sweep_ranges.as_ref().is_some_and(|r| r.is_empty()) {
            return Err(Error::config("sweep_ranges", "must list at least one range"));
        }
        self.synth.validate()?;
        self.split.validate()?;
        self.gan.validate()
    }

    /// Training options for the supervised stage.
    pub fn finetune(&self) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam(),
            seed: derive_seed(self.seed, SEED_TRAIN),
            max_steps: self.max_steps,
            class_weights: None,
            sampling: Sampling::Uniform,
        }
    }
}

fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "--config".into()
}

const SEED_TRAIN: u64 = 2;
const SEED_GAN: u64 = 100;

/// Independent seed for one stage of a run.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    Rng::new(master).fork(stream).next_u64()
}

/// Process exit code for an error: 2 configuration, 3 missing or invalid
/// artifact, 4 data or shape incompatibility, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Infeasible { .. } => 2,
        Error::MissingArtifact(_) | Error::Format(_) | Error::Contract(_) => 3,
        Error::Shape(_) | Error::Size(_) | Error::Input(_) => 4,
        _ => 1,
    }
}

/// A shipped spec by name (`desk_generator` or `desk_generator.json`), or
/// a JSON file relative to `base`.
pub fn resolve_spec(name: &str, base: &Path) -> Result<ArchitectureSpec> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    if let Some((_, spec)) = shipped::all().into_iter().find(|(f, _)| f.strip_suffix(".json") == Some(stem)) {
        return Ok(spec);
    }
    let path = base.join(name);
    if !path.exists() {
        return Err(Error::config("spec", format!("`{name}` is neither a shipped spec nor a file")));
    }
    ArchitectureSpec::load(&path).map_err(|e| Error::config("spec", format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Pretrain,
    Train,
    Eval,
    Sweep,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

/// One command invocation.
pub struct Run {
    pub config: TrainConfig,
    pub out: PathBuf,
    /// Directory of the config file, base for spec file paths.
    pub config_dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config: TrainConfig,
    pub finished_unix: u64,
    pub wall_clock_seconds: f64,
    /// Output path relative to the output directory → sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub formats: BTreeMap<String, u16>,
    /// Keyed by command (`train` and `eval` also by variant).
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub variant: Option<Variant>,
    pub algorithm: String,
    pub dataset: String,
    pub examples: usize,
    pub report: MetricsReport,
}

/// Percentages as printed in a results table, accepted by `report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTable {
    pub attribute_names: Vec<String>,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRow {
    pub algorithm: String,
    pub accuracy: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReportInput {
    Eval(EvalRecord),
    Table(ReferenceTable),
}

impl Run {
    pub fn new(config: TrainConfig, out: impl Into<PathBuf>, config_dir: impl Into<PathBuf>) -> Self {
        Run {
            config,
            out: out.into(),
            config_dir: config_dir.into(),
            outputs: BTreeMap::new(),
        }
    }

    /// Load `config_path`, apply the seed override and validate.
    pub fn from_args(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut config = TrainConfig::load(config_path)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        config.validate()?;
        let config_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Run::new(config, out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out")), config_dir))
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    fn data_path(&self, which: &str) -> PathBuf {
        self.path(&self.config.paths.data_dir.join(format!("{which}.cegan")))
    }

    pub fn model_path(&self) -> PathBuf {
        match &self.config.paths.model {
            Some(p) => self.path(p),
            None => self.out.join("models").join(format!("{}.model", self.config.variant.key())),
        }
    }

    pub fn eval_dataset_path(&self) -> PathBuf {
        match &self.config.paths.eval_dataset {
            Some(p) => self.path(p),
            None => self.data_path("test"),
        }
    }

    pub fn checkpoint_path(&self, class: usize, attribute: &str) -> PathBuf {
        self.path(&self.config.paths.checkpoint_dir.join(format!("class{class}_{attribute}.ckpt")))
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        let rel = path.strip_prefix(&self.out).unwrap_or(path);
        self.outputs.insert(rel.to_string_lossy().replace('\\', "/"), sha256_hex(bytes));
        Ok(())
    }

    fn specs(&self) -> Result<(ArchitectureSpec, ArchitectureSpec)> {
        Ok((
            resolve_spec(&self.config.gan.generator_spec, &self.config_dir)?,
            resolve_spec(&self.config.gan.discriminator_spec, &self.config_dir)?,
        ))
    }

    /// Execute `cmd` and merge its stage record into `manifest.json`.
    pub fn execute(&mut self, cmd: Command) -> Result<BTreeMap<String, String>> {
        let start = Instant::now();
        self.outputs.clear();
        let stage = match cmd {
            Command::GenData => {
                self.gen_data()?;
                cmd.name().to_string()
            }
            Command::Pretrain => {
                self.pretrain()?;
                cmd.name().to_string()
            }
            Command::Train => {
                self.train()?;
                format!("train:{}", self.config.variant.key())
            }
            Command::Eval => {
                self.eval()?;
                format!("eval:{}", self.config.variant.key())
            }
            Command::Sweep => {
                self.sweep()?;
                cmd.name().to_string()
            }
            Command::Report => {
                self.report()?;
                cmd.name().to_string()
            }
        };
        let record = StageRecord {
            config: self.config.clone(),
            finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
        };
        let manifest_path = self.out.join("manifest.json");
        let mut manifest: RunManifest = match std::fs::read(&manifest_path) {
            Ok(b) => serde_json::from_slice(&b).unwrap_or_default(),
            Err(_) => RunManifest::default(),
        };
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.formats = BTreeMap::from([
            ("dataset".to_string(), crate::data::DATASET_VERSION),
            ("checkpoint".to_string(), crate::gan::CHECKPOINT_VERSION),
            ("model".to_string(), crate::experts::MODEL_VERSION),
        ]);
        manifest.stages.insert(stage, record);
        write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(self.outputs.clone())
    }

    fn gen_data(&mut self) -> Result<()> {
        let mut synth = self.config.synth.clone();
        synth.seed = self.config.seed;
        let mut spec = self.config.split;
        spec.seed = self.config.seed;
        let set = synth_generate(&synth)?;
        let (train, val, test) = split(&set, &spec)?;
        for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
            let path = self.data_path(name);
            self.write(&path, &encode_dataset(part)?)?;
        }
        Ok(())
    }

    fn load_split(&self, which: &str) -> Result<LabeledImageSet> {
        load_dataset(&self.data_path(which))
    }

    fn pretrain(&mut self) -> Result<()> {
        let train = self.load_split("train")?;
        let (gen_spec, disc_spec) = self.specs()?;
        let k = train.num_attributes();
        let subsets = (0..k)
            .map(|c| {
                single_class_subset(&train, c).map_err(|_| {
                    Error::MissingArtifact(format!(
                        "class {c} (`{}`) has no positive examples in the training split",
                        train.attribute_names[c]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let results = subsets
            .par_iter()
            .enumerate()
            .map(|(c, sub)| {
                let mut cfg = self.config.gan.clone();
                cfg.seed = derive_seed(self.config.seed, SEED_GAN + c as u64);
                train_gan(sub, &cfg, &gen_spec, &disc_spec, c)
            })
            .collect::<Result<Vec<_>>>()?;
        for (c, (ckpt, log)) in results.iter().enumerate() {
            let name = &train.attribute_names[c];
            let path = self.checkpoint_path(c, name);
            self.write(&path, &encode_checkpoint(ckpt)?)?;
            let mut csv = String::from("iteration,d_loss,g_loss\n");
            for (i, (d, g)) in log.d_loss.iter().zip(&log.g_loss).enumerate() {
                writeln!(csv, "{},{d:.6},{g:.6}", i + 1).expect("string write");
            }
            let log_path = self.out.join("logs").join(format!("gan_class{c}_{name}.csv"));
            self.write(&log_path, csv.as_bytes())?;
        }
        Ok(())
    }

    pub fn load_checkpoints(&self, attribute_names: &[String]) -> Result<Vec<GanCheckpoint>> {
        attribute_names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let ckpt = load_checkpoint(&self.checkpoint_path(c, name))?;
                if ckpt.class_id != c {
                    return Err(Error::MissingArtifact(format!(
                        "checkpoint for `{name}` records class {}, expected {c}",
                        ckpt.class_id
                    )));
                }
                Ok(ckpt)
            })
            .collect()
    }

    fn train(&mut self) -> Result<()> {
        let train = self.load_split("train")?;
        let val = self.load_split("val")?;
        let (_, disc_spec) = self.specs()?;
        let variant = self.config.variant;
        let k = train.num_attributes();
        let mut ft = self.config.finetune();
        let init_seed = derive_seed(self.config.seed, SEED_TRAIN + 1);
        let (model, params) = if variant.uses_experts() {
            let ce = CeConfig {
                ce_layers: self.config.ce_layers(),
                frozen: variant == Variant::Fcegan,
                classes: k,
            };
            ce.validate(&disc_spec)?;
            let ckpts = self.load_checkpoints(&train.attribute_names)?;
            assemble_ce_model(&disc_spec, &ckpts, ce, init_seed)?
        } else {
            let model = CeModel::baseline(&disc_spec, k)?;
            let params = model.fresh_params(&mut Rng::new(init_seed))?;
            (model, params)
        };
        match variant {
            Variant::Resample => ft.sampling = Sampling::Weighted(resample_weights(&train)),
            Variant::Costsens => ft.class_weights = cost_sensitive_weights(&train),
            _ => {}
        }
        let outcome = train_supervised(&model, params, &train, &val, &ft)?;
        let saved = SavedModel {
            variant: variant.key().to_string(),
            model,
            params: outcome.best_params,
            attribute_names: train.attribute_names.clone(),
        };
        let path = self.model_path();
        self.write(&path, &encode_model(&saved)?)?;
        let mut csv = String::from("epoch,steps,mean_train_loss,val_accuracy_macro,val_precision_macro\n");
        for e in &outcome.epochs {
            writeln!(
                csv,
                "{},{},{:.6},{:.6},{:.6}",
                e.epoch, e.steps, e.mean_train_loss, e.val_accuracy_macro, e.val_precision_macro
            )
            .expect("string write");
        }
        let log = self.out.join("logs").join(format!("{}_train.csv", variant.key()));
        self.write(&log, csv.as_bytes())
    }

    fn eval(&mut self) -> Result<()> {
        let saved = load_model(&self.model_path())?;
        let data_path = self.eval_dataset_path();
        let set = load_dataset(&data_path)?;
        if set.attribute_names != saved.attribute_names {
            return Err(Error::Shape(format!(
                "dataset attributes {:?} differ from the model's {:?}",
                set.attribute_names, saved.attribute_names
            )));
        }
        if set.image_dims() != saved.model.input_dims() {
            return Err(Error::Shape(format!(
                "dataset images {:?} do not fit model input {:?}",
                set.image_dims(),
                saved.model.input_dims()
            )));
        }
        let predictions = saved.model.predict(&saved.params, &set.images)?;
        let report = evaluate(&saved.model, &saved.params, &set)?;
        let variant = Variant::ALL.iter().copied().find(|v| v.key() == saved.variant);
        let key = variant.map_or(saved.variant.as_str(), |v| v.key()).to_string();
        let record = EvalRecord {
            variant,
            algorithm: variant.map_or(saved.variant.clone(), |v| v.label().to_string()),
            dataset: data_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            examples: set.len(),
            report: report.clone(),
        };
        let dir = self.out.join("eval");
        self.write(&dir.join(format!("{key}.json")), serde_json::to_string_pretty(&record)?.as_bytes())?;
        self.write(&dir.join(format!("{key}.csv")), per_class_csv(&report).as_bytes())?;
        let (acc, prec) = render_comparison_ordered(&[(record.algorithm.clone(), report)])?;
        self.write(&dir.join(format!("{key}.txt")), format!("{}\n{}", acc.to_text(), prec.to_text()).as_bytes())?;
        let k = set.num_attributes();
        let mut csv = String::new();
        csv.push_str(&set.attribute_names.join(","));
        csv.push('\n');
        for row in predictions.data().chunks(k) {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:e}")).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        self.write(&dir.join(format!("{key}_predictions.csv")), csv.as_bytes())
    }

    fn sweep(&mut self) -> Result<()> {
        let ranges = self.config.sweep_ranges();
        let (_, disc_spec) = self.specs()?;
        let train = self.load_split("train")?;
        for r in &ranges {
            CeConfig {
                ce_layers: *r,
                frozen: false,
                classes: train.num_attributes(),
            }
            .validate(&disc_spec)?;
        }
        let val = self.load_split("val")?;
        let ckpts = self.load_checkpoints(&train.attribute_names)?;
        let table = sweep_ce_layers(&disc_spec, &ckpts, &ranges, &train, &val, &self.config.finetune())?;
        let json = serde_json::json!({
            "rows": table.rows.iter().map(|r| serde_json::json!({
                "ce_layers": r.range.to_string(),
                "val_accuracy_macro": r.result.as_ref().ok(),
                "error": r.result.as_ref().err(),
            })).collect::<Vec<_>>(),
            "argmax": table.argmax.map(|i| table.rows[i].range.to_string()),
        });
        let dir = self.out.join("sweep");
        self.write(&dir.join("sweep.txt"), table.to_text().as_bytes())?;
        self.write(&dir.join("sweep.csv"), table.to_csv().as_bytes())?;
        self.write(&dir.join("sweep.json"), serde_json::to_string_pretty(&json)?.as_bytes())
    }

    fn report_inputs(&self) -> Result<Vec<PathBuf>> {
        if !self.config.paths.eval_outputs.is_empty() {
            return Ok(self.config.paths.eval_outputs.iter().map(|p| self.path(p)).collect());
        }
        let dir = self.out.join("eval");
        let mut found = Vec::new();
        if let Ok(entries) = std::fs::read_dir(&dir) {
            for e in entries.flatten() {
                let p = e.path();
                if p.extension().is_some_and(|x| x == "json") {
                    found.push(p);
                }
            }
        }
        let rank = |p: &PathBuf| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (Variant::ALL.iter().position(|v| v.key() == stem).unwrap_or(usize::MAX), stem)
        };
        found.sort_by_key(rank);
        if found.is_empty() {
            return Err(Error::MissingArtifact(format!("no evaluation outputs under {}", dir.display())));
        }
        Ok(found)
    }

    fn report(&mut self) -> Result<()> {
        let mut rows: Vec<(String, MetricsReport)> = Vec::new();
        for path in self.report_inputs()? {
            let bytes = std::fs::read(&path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
            let input: ReportInput = serde_json::from_slice(&bytes)
                .map_err(|e| Error::Format(format!("{}: not an evaluation output ({e})", path.display())))?;
            match input {
                ReportInput::Eval(r) => rows.push((r.algorithm, r.report)),
                ReportInput::Table(t) => {
                    for row in t.rows {
                        rows.push((row.algorithm, report_from_percentages(&t.attribute_names, &row.accuracy, &row.precision)?));
                    }
                }
            }
        }
        if let Some(first) = rows.first() {
            if let Some((name, _)) = rows.iter().find(|(_, r)| r.attribute_names != first.1.attribute_names) {
                return Err(Error::Shape(format!("`{name}` has attributes different from `{}`", first.0)));
            }
        }
        let (acc, prec) = render_comparison_ordered(&rows)?;
        let dir = self.out.join("report");
        self.write(&dir.join("accuracy.txt"), acc.to_text().as_bytes())?;
        self.write(&dir.join("accuracy.csv"), acc.to_csv().as_bytes())?;
        self.write(&dir.join("precision.txt"), prec.to_text().as_bytes())?;
        self.write(&dir.join("precision.csv"), prec.to_csv().as_bytes())
    }
}

fn per_class_csv(r: &MetricsReport) -> String {
    let mut out = String::from("attribute,accuracy,precision,precision_undefined,tp,tn,fp,fn\n");
    for (k, name) in r.attribute_names.iter().enumerate() {
        let (tp, tn, fp, fn_) = r
            .counts
            .as_ref()
            .map(|c| (c.classes[k].tp, c.classes[k].tn, c.classes[k].fp, c.classes[k].fn_))
            .unwrap_or_default();
        writeln!(
            out,
            "{name},{},{},{},{tp},{tn},{fp},{fn_}",
            round_half_up(r.accuracy[k] * 100.0),
            round_half_up(r.precision[k] * 100.0),
            r.precision_undefined[k]
        )
        .expect("string write");
    }
    writeln!(out, "overall_macro,{},{},,,,,", round_half_up(r.overall_accuracy_macro * 100.0), round_half_up(r.overall_precision_macro * 100.0))
        .expect("string write");
    writeln!(out, "overall_micro,,{},,,,,", round_half_up(r.overall_precision_micro * 100.0)).expect("string write");
    out
}

/// Per-example sampling weight `1 / min_k freq_k` over the example's
/// positive attributes; examples with no positive attribute get 1.
pub fn resample_weights(set: &LabeledImageSet) -> Vec<f64> {
    let n = set.len() as f64;
    let freq: Vec<f64> = set.positive_counts().iter().map(|&c| c as f64 / n).collect();
    (0..set.len())
        .map(|i| {
            set.label_row(i)
                .iter()
                .zip(&freq)
                .filter(|(&l, _)| l == 1)
                .map(|(_, &f)| f)
                .fold(None, |m: Option<f64>, f| Some(m.map_or(f, |m| m.min(f))))
                .map_or(1.0, |f| 1.0 / f)
        })
        .collect()
}

/// `w_k = N / (2·positives_k)` scaled to mean 1; `None` (plain loss) when all
/// attributes have the same positive count. An attribute without positives
/// is counted as having one.
pub fn cost_sensitive_weights(set: &LabeledImageSet) -> Option<Vec<f64>> {
    let counts = set.positive_counts();
    if counts.windows(2).all(|w| w[0] == w[1]) {
        return None;
    }
    let n = set.len() as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| n / (2.0 * c.max(1) as f64)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Some(raw.iter().map(|w| w / mean).collect())
}
