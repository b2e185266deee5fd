//! Generate the imbalanced multi-label image set, split it 6:2:2 and round
//! trip it through the dataset file format.
//!
//!     cargo run --example synthetic_data

use cegan::data::{decode_dataset, encode_dataset, single_class_subset, split, synth_generate, SplitSpec, SynthConfig};

fn main() -> cegan::Result<()> {
    let cfg = SynthConfig::default();
    let set = synth_generate(&cfg)?;
    println!("{} images of {:?}", set.len(), set.image_dims());
    for (name, count) in set.attribute_names.iter().zip(set.positive_counts()) {
        println!("  {name:<22} {count:>5} positives ({:.1}%)", 100.0 * count as f64 / set.len() as f64);
    }

    let (train, val, test) = split(&set, &SplitSpec::default())?;
    println!("split {} / {} / {}", train.len(), val.len(), test.len());

    let rarest = single_class_subset(&train, 4)?;
    println!("single-class subset for `{}`: {} examples", train.attribute_names[4], rarest.len());

    let bytes = encode_dataset(&test)?;
    assert_eq!(decode_dataset(&bytes)?, test);
    println!("test split file: {} bytes", bytes.len());

    // ascii view of a noiseless example's first channel
    let clean = synth_generate(&SynthConfig { n_examples: 20, noise_level: 0.0, ..cfg.clone() })?;
    let i = (0..clean.len()).find(|&i| clean.label_row(i)[0] == 1).unwrap_or(0);
    let plane = cfg.image_h * cfg.image_w;
    let img = &clean.images.data()[i * plane * cfg.channels..][..plane];
    for row in img.chunks(cfg.image_w).step_by(2) {
        let line: String = row.iter().map(|&v| b" .:-=+*#%@"[((v * 9.99) as usize).min(9)] as char).collect();
        println!("  {line}");
    }
    println!("labels: {:?}", clean.label_row(i));
    Ok(())
}
