//! Per-class GAN pretraining: generator/discriminator construction, the
//! alternating training loop, sampling and checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{is_running_stat, write_atomic, ByteReader, ByteWriter};
use crate::data::{from_gan_range, to_gan_range, LabeledImageSet};
use crate::error::{Error, Result};
use crate::loss::{gan_d_loss, gan_g_loss};
use crate::nn::{Activation, ArchitectureSpec, LayerSpec, Network, ParamSet};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Rng, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"CEGANCKPT\0";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    pub generator_spec: String,
    pub discriminator_spec: String,
    pub adam: AdamConfig,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 100,
            iterations: 2000,
            batch_size: 32,
            d_steps_per_g_step: 1,
            seed: 0,
            generator_spec: "desk_generator".into(),
            discriminator_spec: "desk_discriminator".into(),
            adam: AdamConfig::default(),
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be >= 2 (batch norm)"));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::config("d_steps_per_g_step", "must be >= 1"));
        }
        self.adam.validate()
    }
}

/// Generator plus discriminator with a one-unit real/fake head.
#[derive(Clone, Debug)]
pub struct Gan {
    pub generator: Network,
    pub discriminator: Network,
    pub generator_spec: ArchitectureSpec,
    /// The classifier-shaped spec the discriminator was derived from.
    pub discriminator_spec: ArchitectureSpec,
}

/// `disc_spec` with its last layer swapped for a single sigmoid unit.
pub fn real_fake_spec(disc_spec: &ArchitectureSpec) -> Result<ArchitectureSpec> {
    let mut spec = disc_spec.clone();
    if spec.layers.is_empty() {
        return Err(Error::Input(format!("discriminator `{}` has no layers", spec.name)));
    }
    spec.layers.pop();
    spec.layers
        .push(LayerSpec::fully_connected(1).with_activation(Activation::Sigmoid));
    spec.name = format!("{}_real_fake", disc_spec.name);
    Ok(spec)
}

pub fn build_gan(gen_spec: &ArchitectureSpec, disc_spec: &ArchitectureSpec) -> Result<Gan> {
    let generator = Network::from_spec(gen_spec, "")?;
    let head = real_fake_spec(disc_spec)?;
    let discriminator = Network::from_spec(&head, "")?;
    if generator.output_dims() != discriminator.input_dims.as_slice() {
        return Err(Error::Infeasible {
            arch: format!("{} -> {}", gen_spec.name, disc_spec.name),
            layer: gen_spec.layers.len(),
            reason: format!(
                "generator output {:?} does not match discriminator input {:?}",
                generator.output_dims(),
                discriminator.input_dims
            ),
        });
    }
    Ok(Gan {
        generator,
        discriminator,
        generator_spec: gen_spec.clone(),
        discriminator_spec: disc_spec.clone(),
    })
}

impl Gan {
    pub fn latent_dim(&self) -> usize {
        self.generator.input_dims.iter().product()
    }

    pub fn latent(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let mut dims = vec![n];
        dims.extend(&self.generator.input_dims);
        Tensor::randn(dims, rng, 1.0)
    }

    /// Generator output in `[−1, 1]`, inference mode.
    pub fn generate(&self, gen_params: &ParamSet, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let z = self.latent(n, rng)?;
        self.generator.predict(gen_params, &z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanCheckpoint {
    pub class_id: usize,
    pub generator_params: ParamSet,
    pub discriminator_params: ParamSet,
    pub config: GanConfig,
    pub generator_spec: ArchitectureSpec,
    pub discriminator_spec: ArchitectureSpec,
    /// `(d_loss, g_loss)` of the last iteration.
    pub final_losses: (f64, f64),
    pub iteration: usize,
}

impl GanCheckpoint {
    pub fn gan(&self) -> Result<Gan> {
        build_gan(&self.generator_spec, &self.discriminator_spec)
    }
}

/// Per-iteration losses of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanLog {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
}

fn check_finite(v: f64, iteration: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            what: format!("{what} = {v}"),
        })
    }
}

/// Train one GAN on `dataset`, whose examples must all be positives of
/// `class_id`. Every draw comes from `config.seed`.
pub fn train_gan(
    dataset: &LabeledImageSet,
    config: &GanConfig,
    gen_spec: &ArchitectureSpec,
    disc_spec: &ArchitectureSpec,
    class_id: usize,
) -> Result<(GanCheckpoint, GanLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("empty GAN training set".into()));
    }
    if class_id >= dataset.num_attributes() {
        return Err(Error::Input(format!("class {class_id} out of range")));
    }
    if let Some(i) = (0..dataset.len()).find(|&i| dataset.label_row(i)[class_id] == 0) {
        return Err(Error::Contract(format!("example {i} is not a positive of class {class_id}")));
    }
    let gan = build_gan(gen_spec, disc_spec)?;
    if gan.latent_dim() != config.latent_dim {
        return Err(Error::config(
            "latent_dim",
            format!("{} but generator `{}` takes {}", config.latent_dim, gen_spec.name, gan.latent_dim()),
        ));
    }
    if dataset.image_dims() != gan.discriminator.input_dims.as_slice() {
        return Err(Error::Shape(format!(
            "images {:?} vs discriminator input {:?}",
            dataset.image_dims(),
            gan.discriminator.input_dims
        )));
    }

    let root = Rng::new(config.seed);
    let mut gp: ParamSet = gan.generator.fresh_params(&mut root.fork(0))?;
    let mut dp: ParamSet = gan.discriminator.fresh_params(&mut root.fork(1))?;
    let mut adam_g = AdamState::new(config.adam)?;
    let mut adam_d = AdamState::new(config.adam)?;
    let mut data_rng = root.fork(2);
    let mut noise_rng = root.fork(3);
    let real_all = to_gan_range(&dataset.images);
    let b = config.batch_size;
    let mut log = GanLog::default();

    for it in 1..=config.iterations {
        let mut d_value = 0.0;
        for _ in 0..config.d_steps_per_g_step {
            let idx: Vec<usize> = (0..b).map(|_| data_rng.below(dataset.len())).collect();
            let real = real_all.select(&idx)?;
            let z = gan.latent(b, &mut noise_rng)?;
            let (fake, _) = gan.generator.forward_pure(&gp, &z, true)?;
            let (d_real, c_real) = gan.discriminator.forward(&mut dp, &real, true)?;
            let (d_fake, c_fake) = gan.discriminator.forward(&mut dp, &fake, true)?;
            let l = gan_d_loss(&d_real, &d_fake)?;
            check_finite(l.value, it, "discriminator loss")?;
            let (_, mut grads) = gan.discriminator.backward(&dp, &c_real, &l.grad_real)?;
            let (_, g2) = gan.discriminator.backward(&dp, &c_fake, &l.grad_fake)?;
            for (name, g) in g2 {
                grads.get_mut(&name).expect("same network").add_assign(&g)?;
            }
            adam_d.step(&mut dp, &grads)?;
            d_value = l.value;
        }

        let z = gan.latent(b, &mut noise_rng)?;
        let (fake, c_gen) = gan.generator.forward(&mut gp, &z, true)?;
        let (d_fake, c_disc) = gan.discriminator.forward_pure(&dp, &fake, true)?;
        let l = gan_g_loss(&d_fake)?;
        check_finite(l.value, it, "generator loss")?;
        let (grad_img, _) = gan.discriminator.backward(&dp, &c_disc, &l.grad)?;
        let (_, grads) = gan.generator.backward(&gp, &c_gen, &grad_img)?;
        adam_g.step(&mut gp, &grads)?;

        log.d_loss.push(d_value);
        log.g_loss.push(l.value);
        if !gp.all_finite() || !dp.all_finite() {
            return Err(Error::Diverged {
                iteration: it,
                what: "non-finite parameters".into(),
            });
        }
    }

    let ckpt = GanCheckpoint {
        class_id,
        generator_params: gp,
        discriminator_params: dp,
        config: config.clone(),
        generator_spec: gen_spec.clone(),
        discriminator_spec: disc_spec.clone(),
        final_losses: (
            *log.d_loss.last().expect("iterations >= 1"),
            *log.g_loss.last().expect("iterations >= 1"),
        ),
        iteration: config.iterations,
    };
    Ok((ckpt, log))
}

/// `n` generated images mapped to `[0, 1]`, shape `[n, C, H, W]`.
pub fn sample_images(ckpt: &GanCheckpoint, n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Input("n must be >= 1".into()));
    }
    let gan = ckpt.gan()?;
    let raw = gan.generate(&ckpt.generator_params, n, &mut Rng::new(seed))?;
    Ok(from_gan_range(&raw))
}

/// Fraction of `real` (pixels in `[0, 1]`) scored ≥ 0.5 plus fraction of
/// `n_fake` generated images scored < 0.5, over the combined count.
/// The discriminator runs in training mode (batch statistics), once on the
/// real batch and once on the fake batch, as during training.
pub fn discriminator_accuracy(ckpt: &GanCheckpoint, real: &Tensor, n_fake: usize, seed: u64) -> Result<f64> {
    let gan = ckpt.gan()?;
    let mut rng = Rng::new(seed);
    let z = gan.latent(n_fake, &mut rng)?;
    let (fake, _) = gan.generator.forward_pure(&ckpt.generator_params, &z, true)?;
    let (d_real, _) = gan.discriminator.forward_pure(&ckpt.discriminator_params, &to_gan_range(real), true)?;
    let (d_fake, _) = gan.discriminator.forward_pure(&ckpt.discriminator_params, &fake, true)?;
    let hits = d_real.data().iter().filter(|&&p| p >= 0.5).count() + d_fake.data().iter().filter(|&&p| p < 0.5).count();
    Ok(hits as f64 / (d_real.len() + d_fake.len()) as f64)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: GanConfig,
    generator_spec: ArchitectureSpec,
    discriminator_spec: ArchitectureSpec,
    final_losses: (f64, f64),
    iteration: usize,
}

const GEN_PREFIX: &str = "generator.";
const DISC_PREFIX: &str = "discriminator.";

pub fn encode_checkpoint(ckpt: &GanCheckpoint) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        config: ckpt.config.clone(),
        generator_spec: ckpt.generator_spec.clone(),
        discriminator_spec: ckpt.discriminator_spec.clone(),
        final_losses: ckpt.final_losses,
        iteration: ckpt.iteration,
    };
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u16(u16::try_from(ckpt.class_id).map_err(|_| Error::Format("class id too large".into()))?);
    w.blob(serde_json::to_string(&meta)?.as_bytes())?;
    let mut all = ParamSet::new();
    for (prefix, set) in [(GEN_PREFIX, &ckpt.generator_params), (DISC_PREFIX, &ckpt.discriminator_params)] {
        for (name, t) in set.iter() {
            all.insert(format!("{prefix}{name}"), t.clone(), set.is_trainable(name));
        }
    }
    w.tensor_table(&all)?;
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<GanCheckpoint> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC, "GAN checkpoint")?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let class_id = r.u16()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.blob()?).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let all = r.tensor_table(|n| !is_running_stat(n))?;
    r.finish()?;
    let mut gp = ParamSet::new();
    let mut dp = ParamSet::new();
    for (name, t) in all.iter() {
        let trainable = all.is_trainable(name);
        if let Some(n) = name.strip_prefix(GEN_PREFIX) {
            gp.insert(n, t.clone(), trainable);
        } else if let Some(n) = name.strip_prefix(DISC_PREFIX) {
            dp.insert(n, t.clone(), trainable);
        } else {
            return Err(Error::Format(format!("unexpected tensor `{name}`")));
        }
    }
    let ckpt = GanCheckpoint {
        class_id,
        generator_params: gp,
        discriminator_params: dp,
        config: meta.config,
        generator_spec: meta.generator_spec,
        discriminator_spec: meta.discriminator_spec,
        final_losses: meta.final_losses,
        iteration: meta.iteration,
    };
    verify_shapes(&ckpt)?;
    Ok(ckpt)
}

/// Every parameter the specs call for is present with the right shape.
fn verify_shapes(ckpt: &GanCheckpoint) -> Result<()> {
    let gan = ckpt.gan().map_err(|e| Error::Format(format!("checkpoint specs: {e}")))?;
    for (net, set) in [(&gan.generator, &ckpt.generator_params), (&gan.discriminator, &ckpt.discriminator_params)] {
        let mut expected = 0;
        for layer in &net.layers {
            for (name, dims) in layer.param_entries() {
                expected += 1;
                let t = set.get(&name).map_err(|_| Error::Format(format!("checkpoint lacks `{name}`")))?;
                if t.dims() != dims.as_slice() {
                    return Err(Error::Format(format!("`{name}` is {}, spec wants {dims:?}", t.shape())));
                }
            }
        }
        if expected != set.len() {
            return Err(Error::Format("checkpoint has tensors its specs do not name".into()));
        }
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &GanCheckpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<GanCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
