//! Build a small network from layer specs and fit it with Adam and BCE.
//!
//!     cargo run --example tiny_network

use cegan::loss::bce_loss;
use cegan::nn::{Activation, LayerSpec, Network, Padding};
use cegan::optim::{AdamConfig, AdamState};
use cegan::{Rng, Tensor};

fn main() -> cegan::Result<()> {
    let layers = [
        LayerSpec::conv(3, 4, 1, Padding::Same).with_bn().with_activation(Activation::Relu),
        LayerSpec::conv(3, 4, 2, Padding::Same).with_activation(Activation::Relu),
        LayerSpec::fully_connected(1).with_activation(Activation::Sigmoid),
    ];
    let net = Network::from_layers("tiny", "", &[1, 6, 6], &layers, 1)?;
    let mut rng = Rng::new(0);
    let mut params = net.fresh_params::<f32>(&mut rng)?;
    println!("{} parameters in {} tensors", params.numel(), params.len());

    // bright top half vs bright bottom half
    let n = 16;
    let mut x = vec![0.0f32; n * 36];
    let mut y = vec![0.0f32; n];
    for i in 0..n {
        let top = i % 2 == 0;
        y[i] = if top { 1.0 } else { 0.0 };
        for r in 0..6 {
            for c in 0..6 {
                let lit = (r < 3) == top;
                x[i * 36 + r * 6 + c] = if lit { 1.0 } else { 0.0 } + 0.1 * rng.normal() as f32;
            }
        }
    }
    let x = Tensor::from_vec([n, 1, 6, 6], x)?;
    let y = Tensor::from_vec([n, 1], y)?;

    let mut adam = AdamState::new(AdamConfig { learning_rate: 0.01, ..Default::default() })?;
    for step in 0..=60 {
        let (p, cache) = net.forward(&mut params, &x, true)?;
        let loss = bce_loss(&p, &y, None)?;
        let (_, grads) = net.backward(&params, &cache, &loss.grad)?;
        adam.step(&mut params, &grads)?;
        if step % 10 == 0 {
            println!("step {step:>3} loss {:.4}", loss.value);
        }
    }
    let p = net.predict(&params, &x)?;
    let correct = p.data().iter().zip(y.data()).filter(|(p, t)| (**p >= 0.5) == (**t == 1.0)).count();
    println!("inference accuracy {correct}/{n}");
    Ok(())
}
