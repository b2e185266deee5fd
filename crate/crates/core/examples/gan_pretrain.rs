//! Pretrain one single-class GAN, save the checkpoint and sample from it.
//!
//!     cargo run --release --example gan_pretrain -- [iterations]

use cegan::data::{single_class_subset, synth_generate, SynthConfig};
use cegan::gan::{decode_checkpoint, discriminator_accuracy, encode_checkpoint, sample_images, train_gan, GanConfig};
use cegan::nn::spec::shipped;

fn main() -> cegan::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let set = synth_generate(&SynthConfig { n_examples: 2000, ..Default::default() })?;
    let class = 4;
    let subset = single_class_subset(&set, class)?;
    println!("class `{}`: {} real examples", set.attribute_names[class], subset.len());

    let cfg = GanConfig { iterations, ..Default::default() };
    let t = std::time::Instant::now();
    let (ckpt, log) = train_gan(&subset, &cfg, &shipped::desk_generator(), &shipped::desk_discriminator(), class)?;
    println!("{iterations} iterations in {:.1?}", t.elapsed());
    for i in (0..iterations).step_by((iterations / 10).max(1)) {
        println!("  it {:>5}  d {:.3}  g {:.3}", i + 1, log.d_loss[i], log.g_loss[i]);
    }

    let real = subset.images.select(&(0..subset.len().min(64)).collect::<Vec<_>>())?;
    println!("discriminator real-vs-fake accuracy {:.3}", discriminator_accuracy(&ckpt, &real, 64, 1)?);

    let bytes = encode_checkpoint(&ckpt)?;
    let back = decode_checkpoint(&bytes)?;
    assert_eq!(back.discriminator_params, ckpt.discriminator_params);
    println!("checkpoint: {} bytes", bytes.len());

    let samples = sample_images(&ckpt, 4, 7)?;
    println!("samples {:?}, pixel mean {:.3}", samples.dims(), samples.data().iter().sum::<f32>() / samples.len() as f32);
    Ok(())
}
