//! Synthetic imbalanced multi-attribute images, the dataset file format,
//! splitting and single-class subsets.
//!
//! Pixels live in `[0, 1]`. The GAN side rescales to `[−1, 1]` with
//! [`to_gan_range`]; classifiers consume `[0, 1]` directly.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub const DATASET_MAGIC: &[u8; 10] = b"CEGANDATA\0";
pub const DATASET_VERSION: u16 = 1;
const MAX_REDRAWS: usize = 1000;

pub const DEFAULT_ATTRIBUTES: [&str; 5] = [
    "five_o_clock_shadow",
    "arched_eyebrows",
    "attractive",
    "bags_under_eyes",
    "bald",
];
pub const DEFAULT_RATES: [f64; 5] = [0.11, 0.27, 0.51, 0.20, 0.02];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    /// `[N, C, H, W]`, values in `[0, 1]`.
    pub images: Tensor,
    /// Row-major `[N, K]`, entries 0 or 1.
    pub labels: Vec<u8>,
    pub attribute_names: Vec<String>,
}

impl LabeledImageSet {
    pub fn new(images: Tensor, labels: Vec<u8>, attribute_names: Vec<String>) -> Result<Self> {
        let k = attribute_names.len();
        if images.dims().len() != 4 {
            return Err(Error::Shape(format!("images must be [N,C,H,W], got {}", images.shape())));
        }
        let n = images.batch();
        if n == 0 || k == 0 {
            return Err(Error::Input("dataset needs at least one example and one attribute".into()));
        }
        if labels.len() != n * k {
            return Err(Error::Shape(format!("{} labels for {n}×{k}", labels.len())));
        }
        if let Some(i) = labels.iter().position(|&b| b > 1) {
            return Err(Error::Input(format!("label {} at {i} is not 0 or 1", labels[i])));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            attribute_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    /// `[C, H, W]`.
    pub fn image_dims(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    pub fn label_row(&self, i: usize) -> &[u8] {
        let k = self.num_attributes();
        &self.labels[i * k..(i + 1) * k]
    }

    /// Positive count per attribute.
    pub fn positive_counts(&self) -> Vec<usize> {
        let k = self.num_attributes();
        let mut counts = vec![0; k];
        for row in self.labels.chunks_exact(k) {
            for (c, &b) in counts.iter_mut().zip(row) {
                *c += b as usize;
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledImageSet> {
        let images = self.images.select(indices)?;
        let labels = indices.iter().flat_map(|&i| self.label_row(i).iter().copied()).collect();
        LabeledImageSet::new(images, labels, self.attribute_names.clone())
    }

    /// Images and `[n, K]` float targets for a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let x = self.images.select(indices)?;
        let y: Vec<f32> = indices
            .iter()
            .flat_map(|&i| self.label_row(i).iter().map(|&b| b as f32))
            .collect();
        Ok((x, Tensor::from_vec([indices.len(), self.num_attributes()], y)?))
    }

    pub fn label_tensor(&self) -> Tensor {
        let y = self.labels.iter().map(|&b| b as f32).collect();
        Tensor::from_vec([self.len(), self.num_attributes()], y).expect("validated at construction")
    }
}

/// Map `[0, 1]` pixels to `[−1, 1]`.
pub fn to_gan_range(images: &Tensor) -> Tensor {
    images.map(|v| v * 2.0 - 1.0)
}

/// Map generator output in `[−1, 1]` back to `[0, 1]`.
pub fn from_gan_range(images: &Tensor) -> Tensor {
    images.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub attribute_names: Vec<String>,
    pub positive_rates: Vec<f64>,
    pub n_examples: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_h: 28,
            image_w: 24,
            channels: 3,
            attribute_names: DEFAULT_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            positive_rates: DEFAULT_RATES.to_vec(),
            n_examples: 5000,
            noise_level: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn attributes(&self) -> usize {
        self.positive_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.attributes();
        if k == 0 || k > u8::MAX as usize {
            return Err(Error::config("positive_rates", format!("need 1..=255 attributes, got {k}")));
        }
        if self.attribute_names.len() != k {
            return Err(Error::config(
                "attribute_names",
                format!("{} names for {k} rates", self.attribute_names.len()),
            ));
        }
        if let Some(r) = self.positive_rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::config("positive_rates", format!("rate {r} outside (0, 1)")));
        }
        if self.n_examples < k {
            return Err(Error::config("n_examples", format!("must be >= {k} attributes")));
        }
        if self.n_examples > u32::MAX as usize {
            return Err(Error::config("n_examples", "too large"));
        }
        if self.image_h < 2 || self.image_w < 2 || self.image_h > u16::MAX as usize || self.image_w > u16::MAX as usize {
            return Err(Error::config("image_h", "image extents must lie in 2..=65535"));
        }
        if self.channels == 0 || self.channels > u8::MAX as usize {
            return Err(Error::config("channels", "must lie in 1..=255"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::config("noise_level", "must be a finite value >= 0"));
        }
        Ok(())
    }
}

/// Image region and grating of attribute `k`'s motif.
#[derive(Clone, Copy, Debug)]
struct Motif {
    top: usize,
    left: usize,
    h: usize,
    w: usize,
    channel: usize,
    fy: f64,
    fx: f64,
}

fn motifs(cfg: &SynthConfig) -> Vec<Motif> {
    let k = cfg.attributes();
    let cols = (k as f64).sqrt().ceil() as usize;
    let rows = k.div_ceil(cols);
    let (ch, cw) = (cfg.image_h / rows, cfg.image_w / cols);
    (0..k)
        .map(|a| {
            // Orientation and frequency both vary with the attribute.
            let angle = PI * a as f64 / k as f64;
            let period = 2.0 + (a % 3) as f64;
            Motif {
                top: (a / cols) * ch,
                left: (a % cols) * cw,
                h: ch.max(1),
                w: cw.max(1),
                channel: a % cfg.channels,
                fy: angle.sin() / period,
                fx: angle.cos() / period,
            }
        })
        .collect()
}

/// Render one image for a label row (noise drawn from `rng`).
fn render(cfg: &SynthConfig, motifs: &[Motif], row: &[u8], rng: &mut Rng, out: &mut [f32]) {
    let (c, h, w) = (cfg.channels, cfg.image_h, cfg.image_w);
    out.iter_mut().for_each(|v| *v = 0.25);
    for (m, &bit) in motifs.iter().zip(row) {
        if bit == 0 {
            continue;
        }
        for y in m.top..(m.top + m.h).min(h) {
            for x in m.left..(m.left + m.w).min(w) {
                let phase = 2.0 * PI * (m.fy * y as f64 + m.fx * x as f64);
                let v = 0.5 * (1.0 + phase.cos());
                // Strong in the motif's channel, faint in the others.
                for ci in 0..c {
                    let amp = if ci == m.channel { 0.6 } else { 0.15 };
                    out[(ci * h + y) * w + x] += (amp * v) as f32;
                }
            }
        }
    }
    if cfg.noise_level > 0.0 {
        for v in out.iter_mut() {
            *v += (cfg.noise_level * rng.normal()) as f32;
        }
    }
    for v in out.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<LabeledImageSet> {
    cfg.validate()?;
    let (n, k) = (cfg.n_examples, cfg.attributes());
    let root = Rng::new(cfg.seed);
    let mut label_rng = root.fork(0);
    let mut labels = vec![0u8; n * k];
    for i in 0..n {
        for a in 0..k {
            labels[i * k + a] = (label_rng.uniform() < cfg.positive_rates[a]) as u8;
        }
    }
    // An attribute that came out without positives is redrawn on its own
    // stream until it has one.
    for a in 0..k {
        let mut redraw = root.fork(1000 + a as u64);
        let mut tries = 0;
        while (0..n).all(|i| labels[i * k + a] == 0) {
            tries += 1;
            if tries > MAX_REDRAWS {
                return Err(Error::Input(format!(
                    "attribute {a} has no positives after {MAX_REDRAWS} redraws"
                )));
            }
            for i in 0..n {
                labels[i * k + a] = (redraw.uniform() < cfg.positive_rates[a]) as u8;
            }
        }
    }

    let ms = motifs(cfg);
    let per = cfg.channels * cfg.image_h * cfg.image_w;
    let mut pixels = vec![0f32; n * per];
    let mut noise = root.fork(1);
    for (i, img) in pixels.chunks_exact_mut(per).enumerate() {
        render(cfg, &ms, &labels[i * k..(i + 1) * k], &mut noise, img);
    }
    let images = Tensor::from_vec([n, cfg.channels, cfg.image_h, cfg.image_w], pixels)?;
    LabeledImageSet::new(images, labels, cfg.attribute_names.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, r) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::config(field, format!("ratio {r} outside (0, 1)")));
            }
        }
        if ((self.train + self.val + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::config("train", "split ratios must sum to 1"));
        }
        Ok(())
    }

    /// (train, val, test) sizes: val and test rounded half-up, remainder to
    /// train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = (n as f64 * self.val + 0.5).floor() as usize;
        let test = (n as f64 * self.test + 0.5).floor() as usize;
        (n.saturating_sub(val + test), val, test)
    }

    /// Shuffled index partition.
    pub fn partition(&self, n: usize) -> Result<[Vec<usize>; 3]> {
        self.validate()?;
        if n < 5 {
            return Err(Error::Input(format!("cannot split {n} examples (need >= 5)")));
        }
        let (tr, va, te) = self.sizes(n);
        if tr == 0 || va == 0 || te == 0 {
            return Err(Error::Input(format!("split of {n} leaves an empty part")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        Rng::new(self.seed).shuffle(&mut idx);
        let test = idx.split_off(tr + va);
        let val = idx.split_off(tr);
        Ok([idx, val, test])
    }
}

pub fn split(set: &LabeledImageSet, spec: &SplitSpec) -> Result<(LabeledImageSet, LabeledImageSet, LabeledImageSet)> {
    let [a, b, c] = spec.partition(set.len())?;
    Ok((set.subset(&a)?, set.subset(&b)?, set.subset(&c)?))
}

/// Every example whose bit `class_index` is set.
pub fn single_class_subset(set: &LabeledImageSet, class_index: usize) -> Result<LabeledImageSet> {
    let k = set.num_attributes();
    if class_index >= k {
        return Err(Error::Input(format!("class index {class_index} out of range for {k} attributes")));
    }
    let idx: Vec<usize> = (0..set.len()).filter(|&i| set.label_row(i)[class_index] == 1).collect();
    if idx.is_empty() {
        return Err(Error::Input(format!(
            "attribute {class_index} (`{}`) has no positive examples",
            set.attribute_names[class_index]
        )));
    }
    set.subset(&idx)
}

pub fn encode_dataset(set: &LabeledImageSet) -> Result<Vec<u8>> {
    let (n, c, h, w) = set.images.nchw()?;
    let k = set.num_attributes();
    let too_big = |what: &str| Error::Format(format!("{what} does not fit the dataset header"));
    let mut out = ByteWriter::new();
    out.bytes(DATASET_MAGIC);
    out.u16(DATASET_VERSION);
    out.u32(u32::try_from(n).map_err(|_| too_big("N"))?);
    out.u8(u8::try_from(c).map_err(|_| too_big("C"))?);
    out.u16(u16::try_from(h).map_err(|_| too_big("H"))?);
    out.u16(u16::try_from(w).map_err(|_| too_big("W"))?);
    out.u8(u8::try_from(k).map_err(|_| too_big("K"))?);
    for name in &set.attribute_names {
        out.short_str(name)?;
    }
    let per = c * h * w;
    for (i, img) in set.images.data().chunks_exact(per).enumerate() {
        out.f32s(img);
        out.bytes(set.label_row(i));
    }
    Ok(out.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledImageSet> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(DATASET_MAGIC, "dataset")?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n = r.u32()? as usize;
    let c = r.u8()? as usize;
    let h = r.u16()? as usize;
    let w = r.u16()? as usize;
    let k = r.u8()? as usize;
    if n == 0 || c == 0 || h == 0 || w == 0 || k == 0 {
        return Err(Error::Format("empty extent in dataset header".into()));
    }
    let names = (0..k).map(|_| r.short_str()).collect::<Result<Vec<_>>>()?;
    let per = c * h * w;
    let need = n
        .checked_mul(per * 4 + k)
        .ok_or_else(|| Error::Format("dataset size overflow".into()))?;
    if r.remaining() != need {
        return Err(Error::Format(format!("expected {need} payload bytes, found {}", r.remaining())));
    }
    let mut pixels = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n * k);
    for _ in 0..n {
        pixels.extend(r.f32s(per)?);
        labels.extend_from_slice(r.take(k)?);
    }
    r.finish()?;
    let images = Tensor::from_vec([n, c, h, w], pixels).map_err(|e| Error::Format(e.to_string()))?;
    LabeledImageSet::new(images, labels, names).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_dataset(set: &LabeledImageSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(set)?)
}

pub fn load_dataset(path: &Path) -> Result<LabeledImageSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    decode_dataset(&bytes)
}

/// Header size in bytes for `names`.
pub fn dataset_header_len(names: &[String]) -> usize {
    10 + 2 + 4 + 1 + 2 + 2 + 1 + names.iter().map(|s| 2 + s.len()).sum::<usize>()
}
