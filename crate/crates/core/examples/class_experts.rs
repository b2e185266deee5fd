//! Assemble class-expert classifiers from per-class GAN discriminators and
//! finetune them next to the plain baseline.
//!
//!     cargo run --release --example class_experts

use cegan::data::{single_class_subset, split, synth_generate, SplitSpec, SynthConfig};
use cegan::experts::{assemble_ce_model, evaluate, train_supervised, CeConfig, CeModel, FinetuneConfig, LayerRange};
use cegan::gan::{train_gan, GanConfig};
use cegan::nn::spec::shipped;
use cegan::Rng;

fn main() -> cegan::Result<()> {
    let set = synth_generate(&SynthConfig { n_examples: 1500, ..Default::default() })?;
    let (train, val, test) = split(&set, &SplitSpec::default())?;
    let (gen, disc) = (shipped::desk_generator(), shipped::desk_discriminator());
    let k = train.num_attributes();

    let gan_cfg = GanConfig { iterations: 60, batch_size: 16, ..Default::default() };
    let mut ckpts = Vec::new();
    for c in 0..k {
        let (ckpt, _) = train_gan(&single_class_subset(&train, c)?, &GanConfig { seed: c as u64, ..gan_cfg.clone() }, &gen, &disc, c)?;
        ckpts.push(ckpt);
    }

    let ft = FinetuneConfig { epochs: 3, ..Default::default() };
    let ce_layers = LayerRange::new(3, 6)?;

    let baseline = CeModel::baseline(&disc, k)?;
    let p = baseline.fresh_params(&mut Rng::new(1))?;
    let base = train_supervised(&baseline, p, &train, &val, &ft)?;
    let base_report = evaluate(&baseline, &base.best_params, &test)?;

    for frozen in [false, true] {
        let (model, params) = assemble_ce_model(&disc, &ckpts, CeConfig { ce_layers, frozen, classes: k }, 1)?;
        println!(
            "{} head input {:?}, {} frozen tensors",
            if frozen { "FCE-GAN" } else { "CE-GAN" },
            model.head_input_dims(),
            params.names().filter(|n| !params.is_trainable(n)).count()
        );
        let out = train_supervised(&model, params, &train, &val, &ft)?;
        let r = evaluate(&model, &out.best_params, &test)?;
        println!(
            "  test accuracy {:.4} (baseline {:.4}); precision on `{}` {:.3} (baseline {:.3})",
            r.overall_accuracy_macro,
            base_report.overall_accuracy_macro,
            r.attribute_names[4],
            r.precision[4],
            base_report.precision[4]
        );
    }
    Ok(())
}
