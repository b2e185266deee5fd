//! The whole experiment through the harness, in a temporary directory:
//! data, pretraining, all five variants, evaluation, the layer sweep and the
//! comparison report.
//!
//!     cargo run --release --example pipeline -- [out_dir]

use cegan::harness::{Command, Run, TrainConfig, Variant};

fn main() -> cegan::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| tmp.path().to_path_buf());

    let mut cfg = TrainConfig::from_json(
        r#"{
            "seed": 3,
            "epochs": 2,
            "synth": { "n_examples": 1000 },
            "gan": { "iterations": 40, "batch_size": 16 }
        }"#,
    )?;
    cfg.validate()?;

    Run::new(cfg.clone(), &out, ".").execute(Command::GenData)?;
    Run::new(cfg.clone(), &out, ".").execute(Command::Pretrain)?;
    for v in Variant::ALL {
        cfg.variant = v;
        let mut run = Run::new(cfg.clone(), &out, ".");
        run.execute(Command::Train)?;
        run.execute(Command::Eval)?;
        println!("trained and evaluated {}", v.label());
    }
    Run::new(cfg.clone(), &out, ".").execute(Command::Sweep)?;
    Run::new(cfg, &out, ".").execute(Command::Report)?;

    for f in ["sweep/sweep.txt", "report/accuracy.txt", "report/precision.txt"] {
        println!("\n{}", std::fs::read_to_string(out.join(f))?);
    }
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(())
}
