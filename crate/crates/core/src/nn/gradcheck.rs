//! Central-difference verification of analytic layer gradients (64-bit).

use crate::nn::layer::Layer;
use crate::nn::params::ParamSet;
use crate::nn::spec::{Activation, LayerSpec};
use crate::tensor::{Rng, Tensor};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Fraction of coordinates allowed to be skipped because the difference
/// stencil straddles a ReLU kink.
pub const MAX_SKIPPED_FRACTION: f64 = 0.1;
pub const MAX_ATTEMPTS: u64 = 16;

/// Scales of the random instance a check runs on.
#[derive(Clone, Copy, Debug)]
pub struct Instance {
    pub step: f64,
    pub input_stddev: f64,
}

impl Default for Instance {
    fn default() -> Self {
        Instance {
            step: STEP,
            input_stddev: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose ±step evaluation changed the ReLU activation pattern.
    pub skipped: usize,
    /// Instances drawn before one had few enough skipped coordinates.
    pub attempts: u64,
    /// Coordinate with the largest error, e.g. `layer1.conv.weight[7]`.
    pub worst: String,
}

/// Fourth-order central difference from `f(x−2h), f(x−h), f(x+h), f(x+2h)`.
/// The plain two-point rule leaves an `h²·f'''/6` truncation term that, at
/// `h = 1e-3`, exceeds the tolerance on coordinates whose gradient nearly
/// cancels; this one is exact for quartics.
pub fn central_difference(f: [f64; 4], h: f64) -> f64 {
    (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Check `spec` on a small random instance: 5×5 two-channel images for conv,
/// 3×3 for deconv, six features for fully connected; batch of two, or four
/// with batch norm (two samples normalise to exactly ±1 and leave the
/// weights almost without influence).
pub fn gradient_check(spec: &LayerSpec, seed: u64) -> GradCheckReport {
    let in_dims: &[usize] = match spec.kind {
        crate::nn::spec::LayerKind::Conv => &[2, 5, 5],
        crate::nn::spec::LayerKind::Deconv => &[2, 3, 3],
        crate::nn::spec::LayerKind::FullyConnected => &[6],
    };
    let batch = if spec.batch_norm { 4 } else { 2 };
    gradient_check_at(spec, in_dims, batch, seed)
}

fn failed(worst: String) -> GradCheckReport {
    GradCheckReport {
        max_rel_error: f64::INFINITY,
        pass: false,
        checked: 0,
        skipped: 0,
        attempts: 0,
        worst,
    }
}

/// Compare analytic and central-difference gradients of
/// `L = Σ r ⊙ layer(x)` (random `r`) for every trainable entry and the input.
pub fn gradient_check_at(spec: &LayerSpec, in_dims: &[usize], batch: usize, seed: u64) -> GradCheckReport {
    gradient_check_with(spec, in_dims, batch, seed, Instance::default())
}

pub fn gradient_check_with(spec: &LayerSpec, in_dims: &[usize], batch: usize, seed: u64, inst: Instance) -> GradCheckReport {
    let step = inst.step;
    let layer = match Layer::new("layer1", spec.clone(), in_dims) {
        Ok(l) => l,
        Err(e) => return failed(format!("layer construction failed: {e}")),
    };
    let mut rng = Rng::new(seed);
    let mut params = ParamSet::<f64>::new();
    if let Err(e) = layer.init_params(&mut params, &mut rng) {
        return failed(format!("init failed: {e}"));
    }
    // Move gamma/beta/bias off their neutral init values.
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in &names {
        if params.is_trainable(name) && !name.ends_with(".weight") {
            let t = params.get_mut(name).expect("listed");
            for v in t.data_mut() {
                *v += 0.5 * rng.normal();
            }
        }
    }
    let mut x_dims = vec![batch];
    x_dims.extend(in_dims);
    let training = spec.batch_norm;
    let run = |attempt: u64| -> crate::error::Result<GradCheckReport> {
        let mut x = Tensor::<f64>::randn(x_dims.clone(), &mut rng.fork(1 + 2 * attempt), inst.input_stddev)?;
        let (y, cache) = layer.forward(&params, &x, training)?;
        let r = Tensor::<f64>::randn(y.dims().to_vec(), &mut rng.fork(2 + 2 * attempt), 1.0)?;
        let (gx, grads) = layer.backward(&params, &cache, &r)?;

        let relu = spec.activation == Activation::Relu;
        let mask = |pre: &Tensor<f64>| -> Vec<bool> { pre.data().iter().map(|&v| v > 0.0).collect() };
        let base_mask = mask(&cache.pre_activation);

        let mut params = params.clone();
        let mut worst = (0.0f64, String::new());
        let mut checked = 0;
        let mut skipped = 0;

        let probe = |params: &ParamSet<f64>, x: &Tensor<f64>| -> crate::error::Result<(f64, bool)> {
            let (y, c) = layer.forward(params, x, training)?;
            let same = !relu || mask(&c.pre_activation) == base_mask;
            Ok((y.dot(&r)?, same))
        };

        let mut record = |analytic: f64, f: [(f64, bool); 4], label: String| {
            if f.iter().any(|p| !p.1) {
                skipped += 1;
                return;
            }
            let numeric = central_difference([f[0].0, f[1].0, f[2].0, f[3].0], step);
            let err = relative_error(analytic, numeric);
            checked += 1;
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, label);
            }
        };

        for name in &names {
            let Some(g) = grads.get(name) else { continue };
            for i in 0..g.len() {
                let orig = params.get(name)?.data()[i];
                let mut at = |offset: f64| -> crate::error::Result<(f64, bool)> {
                    params.get_mut(name)?.data_mut()[i] = orig + offset;
                    probe(&params, &x)
                };
                let stencil = [at(-2.0 * step)?, at(-step)?, at(step)?, at(2.0 * step)?];
                params.get_mut(name)?.data_mut()[i] = orig;
                record(g.data()[i], stencil, format!("{name}[{i}]"));
            }
        }
        for i in 0..x.len() {
            let orig = x.data()[i];
            let mut at = |offset: f64| -> crate::error::Result<(f64, bool)> {
                x.data_mut()[i] = orig + offset;
                probe(&params, &x)
            };
            let stencil = [at(-2.0 * step)?, at(-step)?, at(step)?, at(2.0 * step)?];
            x.data_mut()[i] = orig;
            record(gx.data()[i], stencil, format!("input[{i}]"));
        }

        let total = checked + skipped;
        let pass = checked > 0
            && worst.0 < TOLERANCE
            && (skipped as f64) <= MAX_SKIPPED_FRACTION * total as f64;
        Ok(GradCheckReport {
            max_rel_error: worst.0,
            pass,
            checked,
            skipped,
            attempts: attempt + 1,
            worst: worst.1,
        })
    };
    // An instance with too many stencils straddling a ReLU kink is redrawn.
    let mut report = failed(String::new());
    for attempt in 0..MAX_ATTEMPTS {
        report = match run(attempt) {
            Ok(r) => r,
            Err(e) => return failed(format!("evaluation failed: {e}")),
        };
        if report.skipped as f64 <= MAX_SKIPPED_FRACTION * (report.checked + report.skipped) as f64 {
            break;
        }
    }
    report
}
