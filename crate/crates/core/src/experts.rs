//! Multi-label classifiers: the plain discriminator-derived network and the
//! class-experts variant (shared trunk, one pretrained branch per class,
//! channel concatenation, shared head), supervised finetuning and the
//! CE-range sweep.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{is_running_stat, write_atomic, ByteReader, ByteWriter};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::gan::GanCheckpoint;
use crate::loss::bce_loss;
use crate::metrics::{aggregate, confusion, MetricsReport, DEFAULT_THRESHOLD};
use crate::nn::{ArchitectureSpec, ForwardCache, Grads, LayerKind, Network, ParamSet};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{concat_channels, Rng, Tensor};

pub const MODEL_MAGIC: &[u8; 10] = b"CEGANMODEL";
pub const MODEL_VERSION: u16 = 1;

/// Inclusive 1-based range of discriminator layers used as class experts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct LayerRange {
    pub first: usize,
    pub last: usize,
}

impl LayerRange {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || first > last {
            return Err(Error::config("ce_layers", format!("invalid range {first}..={last}")));
        }
        Ok(LayerRange { first, last })
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.first..=self.last).contains(&layer)
    }

    /// The five candidate ranges of the layer-count pre-experiment.
    pub fn sweep_defaults() -> Vec<LayerRange> {
        (2..=6).rev().map(|first| LayerRange { first, last: 6 }).collect()
    }
}

impl std::fmt::Display for LayerRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v: Vec<String> = (self.first..=self.last).map(|i| i.to_string()).collect();
        write!(f, "{}", v.join(","))
    }
}

impl TryFrom<[usize; 2]> for LayerRange {
    type Error = Error;
    fn try_from(v: [usize; 2]) -> Result<Self> {
        LayerRange::new(v[0], v[1])
    }
}

impl From<LayerRange> for [usize; 2] {
    fn from(r: LayerRange) -> Self {
        [r.first, r.last]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeConfig {
    pub ce_layers: LayerRange,
    /// `true` freezes the transferred branch weights (FCE-GAN).
    pub frozen: bool,
    pub classes: usize,
}

impl CeConfig {
    pub fn validate(&self, disc_spec: &ArchitectureSpec) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "class experts need at least 2 classes"));
        }
        let layers = &disc_spec.layers;
        if self.ce_layers.last >= layers.len() {
            return Err(Error::config(
                "ce_layers",
                format!("range {} leaves no head in `{}`", self.ce_layers, disc_spec.name),
            ));
        }
        for i in self.ce_layers.first..=self.ce_layers.last {
            if layers[i - 1].kind != LayerKind::Conv {
                return Err(Error::config("ce_layers", format!("layer {i} is not a convolution")));
            }
        }
        Ok(())
    }
}

/// A classifier. Without branches it is the plain network (trunk only, the
/// head empty); with branches it is the class-experts model.
#[derive(Clone, Debug)]
pub struct CeModel {
    /// Classifier-shaped spec, final layer width = classes.
    pub spec: ArchitectureSpec,
    pub ce: Option<CeConfig>,
    pub trunk: Network,
    pub branches: Vec<Network>,
    pub head: Network,
}

/// Caches of one [`CeModel::forward`].
#[derive(Clone, Debug)]
pub struct CeCache {
    trunk: ForwardCache<f32>,
    branches: Vec<ForwardCache<f32>>,
    head: ForwardCache<f32>,
    branch_channels: usize,
}

/// `disc_spec` with its last layer resized to `classes` units.
pub fn classifier_spec(disc_spec: &ArchitectureSpec, classes: usize) -> Result<ArchitectureSpec> {
    let mut spec = disc_spec.clone();
    let last = spec
        .layers
        .last_mut()
        .ok_or_else(|| Error::Input(format!("`{}` has no layers", disc_spec.name)))?;
    if last.kind != LayerKind::FullyConnected {
        return Err(Error::Input(format!("`{}` does not end in a fully connected layer", disc_spec.name)));
    }
    last.out_channels = classes;
    last.printed_output = None;
    Ok(spec)
}

impl CeModel {
    /// The plain classifier.
    pub fn baseline(disc_spec: &ArchitectureSpec, classes: usize) -> Result<Self> {
        let spec = classifier_spec(disc_spec, classes)?;
        let trunk = Network::from_spec(&spec, "")?;
        let head = Network::from_layers("head", "head.", trunk.output_dims(), &[], 1)?;
        Ok(CeModel {
            spec,
            ce: None,
            trunk,
            branches: vec![],
            head,
        })
    }

    /// Class-experts architecture (no weights).
    pub fn class_experts(disc_spec: &ArchitectureSpec, ce: CeConfig) -> Result<Self> {
        ce.validate(disc_spec)?;
        let spec = classifier_spec(disc_spec, ce.classes)?;
        let r = ce.ce_layers;
        let trunk = Network::from_layers(&spec.name, "trunk.", &spec.input_shape, &spec.layers[..r.first - 1], 1)?;
        let branches = (0..ce.classes)
            .map(|k| {
                Network::from_layers(
                    &spec.name,
                    &format!("branch{k}."),
                    trunk.output_dims(),
                    &spec.layers[r.first - 1..r.last],
                    r.first,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut head_in = branches[0].output_dims().to_vec();
        head_in[0] *= ce.classes;
        let head = Network::from_layers(&spec.name, "head.", &head_in, &spec.layers[r.last..], r.last + 1)?;
        Ok(CeModel {
            spec,
            ce: Some(ce),
            trunk,
            branches,
            head,
        })
    }

    pub fn classes(&self) -> usize {
        *self.output_dims().first().expect("flat output")
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.trunk.input_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        self.head.output_dims()
    }

    /// Input channels of the head (`classes × branch channels` with experts).
    pub fn head_input_dims(&self) -> &[usize] {
        &self.head.input_dims
    }

    fn networks(&self) -> impl Iterator<Item = &Network> {
        std::iter::once(&self.trunk).chain(&self.branches).chain(std::iter::once(&self.head))
    }

    pub fn fresh_params(&self, rng: &mut Rng) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        for net in self.networks() {
            net.init_params(&mut p, rng)?;
        }
        Ok(p)
    }

    /// Names of branch `k`'s entries for layer `layer`.
    pub fn branch_entries(&self, k: usize, layer: usize) -> Vec<(String, String)> {
        let Some(ce) = self.ce else { return vec![] };
        let branch = &self.branches[k];
        let l = &branch.layers[layer - ce.ce_layers.first];
        l.param_entries()
            .into_iter()
            .map(|(name, _)| {
                let source = name.strip_prefix(&format!("branch{k}.")).expect("branch prefix").to_string();
                (name, source)
            })
            .collect()
    }

    /// Branch tensors that a frozen model never updates.
    pub fn frozen_names(&self, params: &ParamSet) -> Vec<String> {
        params
            .names()
            .filter(|n| n.starts_with("branch") && !is_running_stat(n))
            .map(str::to_owned)
            .collect()
    }

    /// Inference or training forward without touching running statistics.
    pub fn forward_pure(&self, params: &ParamSet, x: &Tensor, training: bool) -> Result<(Tensor, CeCache)> {
        if x.dims().get(1..) != Some(self.input_dims()) {
            return Err(Error::Shape(format!(
                "input {} does not match model input {:?}",
                x.shape(),
                self.input_dims()
            )));
        }
        let (t, trunk) = self.trunk.forward_pure(params, x, training)?;
        if self.branches.is_empty() {
            let (y, head) = self.head.forward_pure(params, &t, training)?;
            return Ok((
                y,
                CeCache {
                    trunk,
                    branches: vec![],
                    head,
                    branch_channels: 0,
                },
            ));
        }
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward_pure(params, &t, training))
            .collect::<Result<Vec<_>>>()?;
        let merged = concat_channels(&outs.iter().map(|o| &o.0).collect::<Vec<_>>())?;
        let branch_channels = outs[0].0.dims()[1];
        let (y, head) = self.head.forward_pure(params, &merged, training)?;
        Ok((
            y,
            CeCache {
                trunk,
                branches: outs.into_iter().map(|o| o.1).collect(),
                head,
                branch_channels,
            },
        ))
    }

    /// Forward; in training mode running statistics are updated.
    pub fn forward(&self, params: &mut ParamSet, x: &Tensor, training: bool) -> Result<(Tensor, CeCache)> {
        let (y, cache) = self.forward_pure(params, x, training)?;
        if training {
            self.trunk.commit_running_stats(params, &cache.trunk)?;
            for (b, c) in self.branches.iter().zip(&cache.branches) {
                b.commit_running_stats(params, c)?;
            }
            self.head.commit_running_stats(params, &cache.head)?;
        }
        Ok((y, cache))
    }

    pub fn backward(&self, params: &ParamSet, cache: &CeCache, grad_out: &Tensor) -> Result<Grads<f32>> {
        let (g_head_in, mut grads) = self.head.backward(params, &cache.head, grad_out)?;
        let g_trunk_out = if self.branches.is_empty() {
            g_head_in
        } else {
            let mut acc: Option<Tensor> = None;
            for (k, (b, c)) in self.branches.iter().zip(&cache.branches).enumerate() {
                let g = g_head_in.slice_channels(k * cache.branch_channels, cache.branch_channels)?;
                let (gi, bg) = b.backward(params, c, &g)?;
                grads.extend(bg);
                match &mut acc {
                    Some(a) => a.add_assign(&gi)?,
                    None => acc = Some(gi),
                }
            }
            acc.expect("at least one branch")
        };
        let (_, tg) = self.trunk.backward(params, &cache.trunk, &g_trunk_out)?;
        grads.extend(tg);
        Ok(grads)
    }

    /// Inference-mode predictions in chunks.
    pub fn predict(&self, params: &ParamSet, images: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 256;
        let n = images.batch();
        let mut parts = Vec::new();
        for start in (0..n).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
            parts.push(self.forward_pure(params, &images.select(&idx)?, false)?.0);
        }
        Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())
    }
}

/// Class-experts model with branch `k`'s layers copied from checkpoint `k`.
/// Trunk and head come from `seed`. With `frozen`, branch weights, biases
/// and BN scale/shift are marked non-trainable.
pub fn assemble_ce_model(
    disc_spec: &ArchitectureSpec,
    checkpoints: &[GanCheckpoint],
    ce: CeConfig,
    seed: u64,
) -> Result<(CeModel, ParamSet)> {
    if checkpoints.len() != ce.classes {
        return Err(Error::MissingArtifact(format!(
            "{} checkpoints for {} classes",
            checkpoints.len(),
            ce.classes
        )));
    }
    let mut ordered: Vec<Option<&GanCheckpoint>> = vec![None; ce.classes];
    for c in checkpoints {
        let slot = ordered
            .get_mut(c.class_id)
            .ok_or_else(|| Error::MissingArtifact(format!("checkpoint class {} out of range", c.class_id)))?;
        if slot.is_some() {
            return Err(Error::MissingArtifact(format!("duplicate checkpoint for class {}", c.class_id)));
        }
        *slot = Some(c);
        if c.discriminator_spec != *disc_spec {
            return Err(Error::Contract(format!(
                "checkpoint for class {} was trained with discriminator `{}`, not `{}`",
                c.class_id, c.discriminator_spec.name, disc_spec.name
            )));
        }
    }
    let model = CeModel::class_experts(disc_spec, ce)?;
    let mut params = model.fresh_params(&mut Rng::new(seed))?;
    for (k, ckpt) in ordered.iter().enumerate() {
        let ckpt = ckpt.ok_or_else(|| Error::MissingArtifact(format!("no checkpoint for class {k}")))?;
        for layer in ce.ce_layers.first..=ce.ce_layers.last {
            for (dst, src) in model.branch_entries(k, layer) {
                let t = ckpt.discriminator_params.get(&src)?;
                let slot = params.get_mut(&dst)?;
                if slot.shape() != t.shape() {
                    return Err(Error::Shape(format!("`{src}` is {}, branch wants {}", t.shape(), slot.shape())));
                }
                *slot = t.clone();
            }
        }
    }
    if ce.frozen {
        for name in model.frozen_names(&params) {
            params.set_trainable(&name, false)?;
        }
    }
    Ok((model, params))
}

/// How minibatches are drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampling {
    /// Shuffle and sweep the training set once per epoch.
    Uniform,
    /// Draw `N` examples with replacement, probability ∝ weight.
    Weighted(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop after this many optimizer steps (the partial epoch is still
    /// validated).
    pub max_steps: Option<usize>,
    pub class_weights: Option<Vec<f64>>,
    pub sampling: Sampling,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            max_steps: None,
            class_weights: None,
            sampling: Sampling::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_train_loss: f64,
    pub val_accuracy_macro: f64,
    pub val_precision_macro: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_params: ParamSet,
    pub final_params: ParamSet,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
}

pub fn evaluate(model: &CeModel, params: &ParamSet, set: &LabeledImageSet) -> Result<MetricsReport> {
    if set.num_attributes() != model.classes() {
        return Err(Error::Shape(format!(
            "dataset has {} attributes, model predicts {}",
            set.num_attributes(),
            model.classes()
        )));
    }
    let p = model.predict(params, &set.images)?;
    let c = confusion(&p, &set.label_tensor(), DEFAULT_THRESHOLD)?;
    aggregate(&c, &set.attribute_names)
}

fn draw_weighted(cumulative: &[f64], rng: &mut Rng) -> usize {
    let total = *cumulative.last().expect("non-empty");
    let u = rng.uniform() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// Minimise weighted BCE with Adam; keep the parameters with the best
/// validation macro accuracy (earliest on ties).
pub fn train_supervised(
    model: &CeModel,
    initial: ParamSet,
    train: &LabeledImageSet,
    val: &LabeledImageSet,
    cfg: &FinetuneConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("empty training or validation set".into()));
    }
    for set in [train, val] {
        if set.num_attributes() != model.classes() {
            return Err(Error::Shape(format!(
                "dataset has {} attributes, model predicts {}",
                set.num_attributes(),
                model.classes()
            )));
        }
        if set.image_dims() != model.input_dims() {
            return Err(Error::Shape(format!(
                "images {:?} vs model input {:?}",
                set.image_dims(),
                model.input_dims()
            )));
        }
    }
    if cfg.batch_size < 2 {
        return Err(Error::config("batch_size", "must be >= 2 (batch norm)"));
    }
    if cfg.epochs == 0 {
        return Err(Error::config("epochs", "must be >= 1"));
    }
    let cumulative = match &cfg.sampling {
        Sampling::Uniform => None,
        Sampling::Weighted(w) => {
            if w.len() != train.len() || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Input("sampling weights must be one finite value >= 0 per example".into()));
            }
            Some(
                w.iter()
                    .scan(0.0, |acc, v| {
                        *acc += v;
                        Some(*acc)
                    })
                    .collect::<Vec<_>>(),
            )
        }
    };

    let mut params = initial;
    let mut adam = AdamState::new(cfg.adam)?;
    let mut rng = Rng::new(cfg.seed);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let n = train.len();

    'epochs: for epoch in 1..=cfg.epochs {
        let order: Vec<usize> = match &cumulative {
            None => {
                let mut idx: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut idx);
                idx
            }
            Some(c) => (0..n).map(|_| draw_weighted(c, &mut rng)).collect(),
        };
        let mut losses = Vec::new();
        let mut stop = false;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = train.batch(chunk)?;
            let (p, cache) = model.forward(&mut params, &x, true)?;
            let l = bce_loss(&p, &y, cfg.class_weights.as_deref())?;
            if !l.value.is_finite() {
                return Err(Error::Diverged {
                    iteration: step_losses.len() + 1,
                    what: format!("training loss = {}", l.value),
                });
            }
            let grads = model.backward(&params, &cache, &l.grad)?;
            adam.step(&mut params, &grads)?;
            losses.push(l.value);
            step_losses.push(l.value);
            if cfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                stop = true;
                break;
            }
        }
        let report = evaluate(model, &params, val)?;
        let acc = report.overall_accuracy_macro;
        epochs.push(EpochLog {
            epoch,
            steps: losses.len(),
            mean_train_loss: if losses.is_empty() { f64::NAN } else { losses.iter().sum::<f64>() / losses.len() as f64 },
            val_accuracy_macro: acc,
            val_precision_macro: report.overall_precision_macro,
        });
        if best.as_ref().is_none_or(|b| acc > b.0) {
            best = Some((acc, epoch, params.clone()));
        }
        if stop {
            break 'epochs;
        }
    }
    let (best_val_accuracy, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_params,
        final_params: params,
        best_epoch,
        best_val_accuracy,
        epochs,
        step_losses,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub range: LayerRange,
    /// Validation macro accuracy, or the error that stopped this range.
    pub result: std::result::Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Row with the highest accuracy (first on ties).
    pub argmax: Option<usize>,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let mut out = String::from("ce_layers            val_accuracy_macro\n");
        for (i, r) in self.rows.iter().enumerate() {
            let mark = if self.argmax == Some(i) { "  <- best" } else { "" };
            let v = match &r.result {
                Ok(a) => format!("{:>8}%", crate::metrics::round_half_up(a * 100.0)),
                Err(e) => format!("failed: {e}"),
            };
            out.push_str(&format!("{:<20} {v}{mark}\n", r.range.to_string()));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ce_layers,val_accuracy_macro,best\n");
        for (i, r) in self.rows.iter().enumerate() {
            let v = match &r.result {
                Ok(a) => format!("{:.6}", a * 100.0),
                Err(_) => "error".into(),
            };
            out.push_str(&format!("\"{}\",{v},{}\n", r.range, self.argmax == Some(i)));
        }
        out
    }
}

/// Train one unfrozen class-experts model per range under the same budget
/// and seed. A failing range is recorded, not propagated.
pub fn sweep_ce_layers(
    disc_spec: &ArchitectureSpec,
    checkpoints: &[GanCheckpoint],
    ranges: &[LayerRange],
    train: &LabeledImageSet,
    val: &LabeledImageSet,
    cfg: &FinetuneConfig,
) -> Result<SweepTable> {
    let classes = train.num_attributes();
    for r in ranges {
        CeConfig {
            ce_layers: *r,
            frozen: false,
            classes,
        }
        .validate(disc_spec)?;
    }
    let rows: Vec<SweepRow> = ranges
        .par_iter()
        .map(|&range| {
            let ce = CeConfig {
                ce_layers: range,
                frozen: false,
                classes,
            };
            let result = assemble_ce_model(disc_spec, checkpoints, ce, cfg.seed)
                .and_then(|(m, p)| train_supervised(&m, p, train, val, cfg))
                .map(|o| o.best_val_accuracy)
                .map_err(|e| e.to_string());
            SweepRow { range, result }
        })
        .collect();
    let mut argmax: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Ok(a) = r.result {
            if argmax.is_none_or(|j| a > rows[j].result.clone().unwrap_or(f64::NEG_INFINITY)) {
                argmax = Some(i);
            }
        }
    }
    Ok(SweepTable { rows, argmax })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    variant: String,
    spec: ArchitectureSpec,
    ce: Option<CeConfig>,
    attribute_names: Vec<String>,
}

/// A trained classifier as written to disk.
#[derive(Clone, Debug)]
pub struct SavedModel {
    pub variant: String,
    pub model: CeModel,
    pub params: ParamSet,
    pub attribute_names: Vec<String>,
}

pub fn encode_model(saved: &SavedModel) -> Result<Vec<u8>> {
    let meta = ModelMeta {
        variant: saved.variant.clone(),
        spec: saved.model.spec.clone(),
        ce: saved.model.ce,
        attribute_names: saved.attribute_names.clone(),
    };
    let mut w = ByteWriter::new();
    w.bytes(MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    w.u16(u16::try_from(saved.model.classes()).map_err(|_| Error::Format("too many classes".into()))?);
    w.blob(serde_json::to_string(&meta)?.as_bytes())?;
    w.tensor_table(&saved.params)?;
    Ok(w.buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<SavedModel> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MODEL_MAGIC, "model")?;
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let classes = r.u16()? as usize;
    let meta: ModelMeta = serde_json::from_slice(r.blob()?).map_err(|e| Error::Format(format!("model metadata: {e}")))?;
    let frozen = meta.ce.is_some_and(|c| c.frozen);
    let params = r.tensor_table(|n| !is_running_stat(n) && !(frozen && n.starts_with("branch")))?;
    r.finish()?;
    let model = match meta.ce {
        Some(ce) => CeModel::class_experts(&meta.spec, ce),
        None => CeModel::baseline(&meta.spec, classes),
    }
    .map_err(|e| Error::Format(format!("model spec: {e}")))?;
    let expected: usize = model.networks().flat_map(|n| &n.layers).map(|l| l.param_entries().len()).sum();
    for net in model.networks() {
        for l in &net.layers {
            for (name, dims) in l.param_entries() {
                let t = params.get(&name).map_err(|_| Error::Format(format!("model lacks `{name}`")))?;
                if t.dims() != dims.as_slice() {
                    return Err(Error::Format(format!("`{name}` has the wrong shape")));
                }
            }
        }
    }
    if expected != params.len() || model.classes() != classes || meta.attribute_names.len() != classes {
        return Err(Error::Format("model file is inconsistent with its spec".into()));
    }
    Ok(SavedModel {
        variant: meta.variant,
        model,
        params,
        attribute_names: meta.attribute_names,
    })
}

pub fn save_model(saved: &SavedModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(saved)?)
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::shipped;

    #[test]
    fn head_width_scales_with_classes() {
        for classes in [2, 3, 5] {
            let ce = CeConfig {
                ce_layers: LayerRange::new(3, 6).unwrap(),
                frozen: false,
                classes,
            };
            let m = CeModel::class_experts(&shipped::desk_discriminator(), ce).unwrap();
            assert_eq!(m.head_input_dims(), &[24 * classes, 4, 3]);
            assert_eq!(m.output_dims(), &[classes]);
            assert_eq!(m.branches.len(), classes);
        }
    }

    #[test]
    fn range_validation() {
        let d = shipped::desk_discriminator();
        let bad = |first, last| CeConfig {
            ce_layers: LayerRange { first, last },
            frozen: false,
            classes: 5,
        };
        assert!(bad(3, 8).validate(&d).is_err());
        assert!(bad(3, 9).validate(&d).is_err());
        assert!(bad(1, 7).validate(&d).is_ok());
        assert!(LayerRange::new(4, 3).is_err());
        assert_eq!(LayerRange::sweep_defaults().len(), 5);
        assert_eq!(LayerRange::sweep_defaults()[0], LayerRange { first: 6, last: 6 });
    }

    #[test]
    fn forward_backward_shapes() {
        let ce = CeConfig {
            ce_layers: LayerRange::new(3, 6).unwrap(),
            frozen: false,
            classes: 5,
        };
        let m = CeModel::class_experts(&shipped::desk_discriminator(), ce).unwrap();
        let mut p = m.fresh_params(&mut Rng::new(0)).unwrap();
        let x = Tensor::randn([3, 3, 28, 24], &mut Rng::new(1), 1.0).unwrap();
        let (y, cache) = m.forward(&mut p, &x, true).unwrap();
        assert_eq!(y.dims(), &[3, 5]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let g = m.backward(&p, &cache, &Tensor::fill([3, 5], 1.0).unwrap()).unwrap();
        for (name, t) in &g {
            assert_eq!(t.shape(), p.get(name).unwrap().shape());
        }
        assert!(g.keys().any(|k| k.starts_with("branch4.layer6")));
        assert!(g.keys().any(|k| k.starts_with("trunk.layer1")));
        assert!(g.keys().any(|k| k.starts_with("head.layer9")));
    }
}
