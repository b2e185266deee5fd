//! Finite-difference check of one layer's analytic gradients in f64.
//!
//!     cargo run --example gradient_check

use cegan::nn::gradcheck::{gradient_check, TOLERANCE};
use cegan::nn::{Activation, LayerSpec, Padding};

fn main() {
    let specs = [
        LayerSpec::conv(4, 3, 2, Padding::Same).with_bn().with_activation(Activation::Relu),
        LayerSpec::deconv(4, 2, 2, Padding::Same).with_activation(Activation::Tanh),
        LayerSpec::fully_connected(4).with_bn().with_activation(Activation::Sigmoid),
    ];
    for spec in &specs {
        let r = gradient_check(spec, 0);
        println!(
            "{:?} bn={} {:?}: max rel err {:.2e} over {} coords ({} skipped) worst {} -> {}",
            spec.kind,
            spec.batch_norm,
            spec.activation,
            r.max_rel_error,
            r.checked,
            r.skipped,
            r.worst,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    println!("tolerance {TOLERANCE:e}");
}
