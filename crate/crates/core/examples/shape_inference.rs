//! Infer per-layer output sizes of the shipped architectures and lint them
//! against the sizes printed next to each layer.
//!
//!     cargo run --example shape_inference

use cegan::nn::spec::{lint, shipped, table_order};

fn main() {
    for (file, arch) in shipped::all() {
        let report = lint(&arch);
        println!("{file}  input {:?}", table_order(&arch.input_shape));
        for (i, (layer, inferred)) in arch.layers.iter().zip(&report.inferred).enumerate() {
            let shown = match inferred {
                Some(d) => format!("{:?}", table_order(d)),
                None => "-".into(),
            };
            let printed = layer.printed_output.as_ref().map(|p| format!("{p:?}")).unwrap_or_default();
            println!("  layer {:>2} {:?} {:<14} printed {printed}", i + 1, layer.kind, shown);
        }
        for d in &report.diagnostics {
            println!("  ! {d}");
        }
        println!();
    }
}
