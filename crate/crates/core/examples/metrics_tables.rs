//! Confusion counts, accuracy and precision, and the comparison tables.
//!
//!     cargo run --example metrics_tables

use std::collections::BTreeMap;

use cegan::metrics::{aggregate, confusion, render_comparison_ordered, report_from_percentages, DEFAULT_THRESHOLD};
use cegan::Tensor;

fn main() -> cegan::Result<()> {
    let names: Vec<String> = ["smile", "hat"].iter().map(|s| s.to_string()).collect();
    let p = Tensor::from_vec([4, 2], vec![0.9, 0.2, 0.4, 0.7, 0.6, 0.1, 0.2, 0.3])?;
    let t = Tensor::from_vec([4, 2], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0])?;
    let counts = confusion(&p, &t, DEFAULT_THRESHOLD)?;
    for (name, c) in names.iter().zip(&counts.classes) {
        println!("{name}: tp {} tn {} fp {} fn {}", c.tp, c.tn, c.fp, c.fn_);
    }
    let model_a = aggregate(&counts, &names)?;

    // a second row given directly as percentages
    let model_b = report_from_percentages(&names, &[75.0, 50.0], &[100.0, 0.0])?;

    let (acc, prec) = render_comparison_ordered(&[("model A".into(), model_a), ("model B".into(), model_b.clone())])?;
    println!("\n{}\n{}", acc.to_text(), prec.to_text());
    print!("{}", acc.to_csv());

    let by_name: BTreeMap<String, _> = [("only".to_string(), model_b)].into();
    let (single, _) = cegan::metrics::render_comparison(&by_name)?;
    println!("\n{}", single.to_text());
    Ok(())
}
