//! Forward and backward passes for one layer: linear op (conv, deconv or
//! fully connected), optional batch norm, activation.

use crate::error::{Error, Result};
use crate::nn::conv::ConvGeometry;
use crate::nn::params::{Grads, ParamSet};
use crate::nn::spec::{Activation, LayerKind, LayerSpec};
use crate::tensor::{gemm, Real, Rng, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
struct ParamKeys {
    weight: String,
    bias: Option<String>,
    gamma: Option<String>,
    beta: Option<String>,
    running_mean: Option<String>,
    running_var: Option<String>,
}

/// A layer instantiated at fixed per-example input dims.
#[derive(Clone, Debug)]
pub struct Layer {
    /// Parameter-name stem, e.g. `layer3` or `branch1.layer3`.
    pub name: String,
    pub spec: LayerSpec,
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    geometry: Option<ConvGeometry>,
    keys: ParamKeys,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    training: bool,
}

/// What [`Layer::backward`] needs from the matching forward call.
#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    batch: usize,
    /// Layer input (deconv, fully connected).
    input: Option<Tensor<T>>,
    /// Column matrix `[patch, N·grid]` (conv).
    cols: Option<Vec<T>>,
    bn: Option<BnCache<T>>,
    /// Values entering the activation.
    pub pre_activation: Tensor<T>,
    pub output: Tensor<T>,
}

/// `[N, C, P]` → `[C, N·P]`.
fn to_channel_major<T: Real>(data: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &data[(b * c + ch) * p..(b * c + ch + 1) * p];
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[C, N·P]` → `[N, C, P]`.
fn to_batch_major<T: Real>(data: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            let dst = &mut out[(b * c + ch) * p..(b * c + ch + 1) * p];
            dst.copy_from_slice(&data[ch * n * p + b * p..ch * n * p + (b + 1) * p]);
        }
    }
    out
}

impl Layer {
    pub fn new(name: impl Into<String>, spec: LayerSpec, in_dims: &[usize]) -> Result<Self> {
        let name = name.into();
        let out_dims = spec.output_dims(in_dims).map_err(|reason| Error::Infeasible {
            arch: name.clone(),
            layer: 0,
            reason,
        })?;
        let geometry = spec
            .is_spatial()
            .then(|| ConvGeometry::for_layer(&spec, in_dims, &out_dims));
        let op = match spec.kind {
            LayerKind::Conv => "conv",
            LayerKind::Deconv => "deconv",
            LayerKind::FullyConnected => "fc",
        };
        let bn = |what: &str| spec.batch_norm.then(|| format!("{name}.bn.{what}"));
        let keys = ParamKeys {
            weight: format!("{name}.{op}.weight"),
            // Batch norm's shift makes a bias redundant.
            bias: (!spec.batch_norm).then(|| format!("{name}.{op}.bias")),
            gamma: bn("gamma"),
            beta: bn("beta"),
            running_mean: bn("running_mean"),
            running_var: bn("running_var"),
        };
        Ok(Layer {
            name,
            spec,
            in_dims: in_dims.to_vec(),
            out_dims,
            geometry,
            keys,
        })
    }

    fn in_features(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_channels(&self) -> usize {
        self.spec.out_channels
    }

    /// Elements per output channel per example.
    fn out_plane(&self) -> usize {
        self.out_dims[1..].iter().product()
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        let [kh, kw] = self.spec.kernel;
        match self.spec.kind {
            LayerKind::Conv => vec![self.out_channels(), self.in_dims[0], kh, kw],
            LayerKind::Deconv => vec![self.in_dims[0], self.out_channels(), kh, kw],
            LayerKind::FullyConnected => vec![self.out_channels(), self.in_features()],
        }
    }

    fn fan_in(&self) -> usize {
        let [kh, kw] = self.spec.kernel;
        match self.spec.kind {
            LayerKind::Conv | LayerKind::Deconv => self.in_dims[0] * kh * kw,
            LayerKind::FullyConnected => self.in_features(),
        }
    }

    /// Names and dims of every entry this layer owns.
    pub fn param_entries(&self) -> Vec<(String, Vec<usize>)> {
        let c = vec![self.out_channels()];
        let mut out = vec![(self.keys.weight.clone(), self.weight_dims())];
        for key in [
            &self.keys.bias,
            &self.keys.gamma,
            &self.keys.beta,
            &self.keys.running_mean,
            &self.keys.running_var,
        ]
        .into_iter()
        .flatten()
        {
            out.push((key.clone(), c.clone()));
        }
        out
    }

    /// Weights ~ N(0, 2/fan_in); bias and beta 0; gamma 1; running stats
    /// (0, 1) and never trainable.
    pub fn init_params<T: Real>(&self, params: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        params.insert(&self.keys.weight, Tensor::randn(self.weight_dims(), rng, std)?, true);
        let c = self.out_channels();
        if let Some(k) = &self.keys.bias {
            params.insert(k, Tensor::zeros([c])?, true);
        }
        if let (Some(g), Some(b), Some(m), Some(v)) = (
            &self.keys.gamma,
            &self.keys.beta,
            &self.keys.running_mean,
            &self.keys.running_var,
        ) {
            params.insert(g, Tensor::fill([c], T::one())?, true);
            params.insert(b, Tensor::zeros([c])?, true);
            params.insert(m, Tensor::zeros([c])?, false);
            params.insert(v, Tensor::fill([c], T::one())?, false);
        }
        Ok(())
    }

    fn check_input<T: Real>(&self, input: &Tensor<T>) -> Result<usize> {
        let ok = match self.spec.kind {
            LayerKind::FullyConnected => input.row_len() == self.in_features(),
            _ => input.dims()[1..] == self.in_dims[..],
        };
        if !ok || input.dims().len() < 2 {
            return Err(Error::Shape(format!(
                "{}: expected per-example input {:?}, got {}",
                self.name,
                self.in_dims,
                input.shape()
            )));
        }
        Ok(input.batch())
    }

    fn output_shape(&self, n: usize) -> Vec<usize> {
        let mut dims = vec![n];
        dims.extend(&self.out_dims);
        dims
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamSet<T>,
        input: &Tensor<T>,
        training: bool,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        let n = self.check_input(input)?;
        let c = self.out_channels();
        let plane = self.out_plane();
        let weight = params.get(&self.keys.weight)?;

        let mut cache = LayerCache {
            batch: n,
            input: None,
            cols: None,
            bn: None,
            pre_activation: Tensor::zeros([1])?,
            output: Tensor::zeros([1])?,
        };

        let mut z = match self.spec.kind {
            LayerKind::Conv => {
                let g = self.geometry.expect("spatial layer");
                let grid = g.grid_len();
                let ld = n * grid;
                let mut cols = vec![T::zero(); g.patch_len() * ld];
                let img = g.image_len();
                for b in 0..n {
                    g.im2col(&input.data()[b * img..(b + 1) * img], &mut cols, ld, b * grid);
                }
                let mut zc = vec![T::zero(); c * ld];
                gemm(c, g.patch_len(), ld, T::one(), weight.data(), false, &cols, false, T::zero(), &mut zc);
                cache.cols = Some(cols);
                to_batch_major(&zc, n, c, grid)
            }
            LayerKind::Deconv => {
                let g = self.geometry.expect("spatial layer");
                let cin = self.in_dims[0];
                let hw = g.grid_len();
                let x = to_channel_major(input.data(), n, cin, hw);
                let ld = n * hw;
                let mut cols = vec![T::zero(); g.patch_len() * ld];
                gemm(g.patch_len(), cin, ld, T::one(), weight.data(), true, &x, false, T::zero(), &mut cols);
                let img = g.image_len();
                let mut z = vec![T::zero(); n * img];
                for b in 0..n {
                    g.col2im(&cols, &mut z[b * img..(b + 1) * img], ld, b * hw);
                }
                cache.input = Some(input.clone());
                z
            }
            LayerKind::FullyConnected => {
                let fin = self.in_features();
                let mut z = vec![T::zero(); n * c];
                gemm(n, fin, c, T::one(), input.data(), false, weight.data(), true, T::zero(), &mut z);
                cache.input = Some(input.clone());
                z
            }
        };

        if let Some(k) = &self.keys.bias {
            let bias = params.get(k)?.data();
            for (i, v) in z.iter_mut().enumerate() {
                *v += bias[(i / plane) % c];
            }
        }

        if self.spec.batch_norm {
            let (y, bn) = self.bn_forward(params, &z, n, training)?;
            z = y;
            cache.bn = Some(bn);
        }

        let pre = Tensor::from_vec(self.output_shape(n), z)?;
        let out = match self.spec.activation {
            Activation::None => pre.clone(),
            Activation::Relu => pre.map(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Sigmoid => pre.map(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Tanh => pre.map(|v| v.tanh()),
        };
        cache.pre_activation = pre;
        cache.output = out.clone();
        Ok((out, cache))
    }

    fn bn_forward<T: Real>(
        &self,
        params: &ParamSet<T>,
        z: &[T],
        n: usize,
        training: bool,
    ) -> Result<(Vec<T>, BnCache<T>)> {
        let c = self.out_channels();
        let plane = self.out_plane();
        let gamma = params.get(self.keys.gamma.as_ref().expect("bn"))?.data();
        let beta = params.get(self.keys.beta.as_ref().expect("bn"))?.data();
        let eps = T::of(BN_EPSILON);
        let m = T::of((n * plane) as f64);

        let (mean, var) = if training {
            if n < 2 {
                return Err(Error::Input(format!(
                    "{}: batch norm in training mode needs batch ≥ 2, got {n}",
                    self.name
                )));
            }
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let s = &z[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    mean[ch] += s.iter().copied().sum();
                }
            }
            mean.iter_mut().for_each(|v| *v = *v / m);
            for b in 0..n {
                for ch in 0..c {
                    let s = &z[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    var[ch] += s.iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum();
                }
            }
            var.iter_mut().for_each(|v| *v = *v / m);
            (mean, var)
        } else {
            (
                params.get(self.keys.running_mean.as_ref().expect("bn"))?.data().to_vec(),
                params.get(self.keys.running_var.as_ref().expect("bn"))?.data().to_vec(),
            )
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); z.len()];
        let mut y = vec![T::zero(); z.len()];
        for (i, (&v, (xh, out))) in z.iter().zip(xhat.iter_mut().zip(y.iter_mut())).enumerate() {
            let ch = (i / plane) % c;
            *xh = (v - mean[ch]) * inv_std[ch];
            *out = gamma[ch] * *xh + beta[ch];
        }
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                training,
            },
        ))
    }

    /// Fold the batch statistics of a training-mode forward into the running
    /// estimates (`running = momentum·running + (1 − momentum)·batch`, with
    /// the unbiased batch variance).
    pub fn commit_running_stats<T: Real>(&self, params: &mut ParamSet<T>, cache: &LayerCache<T>) -> Result<()> {
        let (Some(bn), Some(mk), Some(vk)) = (&cache.bn, &self.keys.running_mean, &self.keys.running_var) else {
            return Ok(());
        };
        if !bn.training {
            return Ok(());
        }
        let count = (cache.batch * self.out_plane()) as f64;
        let unbias = T::of(count / (count - 1.0));
        let mom = T::of(BN_MOMENTUM);
        let rest = T::one() - mom;
        for (r, &b) in params.get_mut(mk)?.data_mut().iter_mut().zip(&bn.batch_mean) {
            *r = mom * *r + rest * b;
        }
        for (r, &b) in params.get_mut(vk)?.data_mut().iter_mut().zip(&bn.batch_var) {
            *r = mom * *r + rest * b * unbias;
        }
        Ok(())
    }

    /// Gradient with respect to the layer input, plus gradients of every
    /// trainable entry this layer owns.
    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        cache: &LayerCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Grads<T>)> {
        let n = cache.batch;
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::Shape(format!(
                "{}: gradient {} does not match output {}",
                self.name,
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        let c = self.out_channels();
        let plane = self.out_plane();
        let mut grads = Grads::new();

        // Through the activation.
        let out = cache.output.data();
        let mut dz: Vec<T> = match self.spec.activation {
            Activation::None => grad_out.data().to_vec(),
            Activation::Relu => grad_out
                .data()
                .iter()
                .zip(cache.pre_activation.data())
                .map(|(&g, &z)| if z > T::zero() { g } else { T::zero() })
                .collect(),
            Activation::Sigmoid => grad_out
                .data()
                .iter()
                .zip(out)
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect(),
            Activation::Tanh => grad_out
                .data()
                .iter()
                .zip(out)
                .map(|(&g, &t)| g * (T::one() - t * t))
                .collect(),
        };

        // Through batch norm.
        if let Some(bn) = &cache.bn {
            let gamma = params.get(self.keys.gamma.as_ref().expect("bn"))?.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut sum_dxhat = vec![T::zero(); c];
            let mut sum_dxhat_xhat = vec![T::zero(); c];
            for (i, (&g, &xh)) in dz.iter().zip(&bn.xhat).enumerate() {
                let ch = (i / plane) % c;
                dgamma[ch] += g * xh;
                dbeta[ch] += g;
                let dxh = g * gamma[ch];
                sum_dxhat[ch] += dxh;
                sum_dxhat_xhat[ch] += dxh * xh;
            }
            if bn.training {
                let m = T::of((n * plane) as f64);
                for (i, (g, &xh)) in dz.iter_mut().zip(&bn.xhat).enumerate() {
                    let ch = (i / plane) % c;
                    let dxh = *g * gamma[ch];
                    *g = bn.inv_std[ch] / m * (m * dxh - sum_dxhat[ch] - xh * sum_dxhat_xhat[ch]);
                }
            } else {
                for (i, g) in dz.iter_mut().enumerate() {
                    let ch = (i / plane) % c;
                    *g = *g * gamma[ch] * bn.inv_std[ch];
                }
            }
            grads.insert(self.keys.gamma.clone().expect("bn"), Tensor::from_vec([c], dgamma)?);
            grads.insert(self.keys.beta.clone().expect("bn"), Tensor::from_vec([c], dbeta)?);
        }

        if let Some(k) = &self.keys.bias {
            let mut db = vec![T::zero(); c];
            for (i, &g) in dz.iter().enumerate() {
                db[(i / plane) % c] += g;
            }
            grads.insert(k.clone(), Tensor::from_vec([c], db)?);
        }

        let weight = params.get(&self.keys.weight)?;
        let mut in_shape = vec![n];
        in_shape.extend(&self.in_dims);
        let (dx, dw) = match self.spec.kind {
            LayerKind::Conv => {
                let g = self.geometry.expect("spatial layer");
                let cols = cache
                    .cols
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("{}: cache lacks columns", self.name)))?;
                let grid = g.grid_len();
                let ld = n * grid;
                let k = g.patch_len();
                let dzc = to_channel_major(&dz, n, c, grid);
                let mut dw = vec![T::zero(); c * k];
                gemm(c, ld, k, T::one(), &dzc, false, cols, true, T::zero(), &mut dw);
                let mut dcols = vec![T::zero(); k * ld];
                gemm(k, c, ld, T::one(), weight.data(), true, &dzc, false, T::zero(), &mut dcols);
                let img = g.image_len();
                let mut dx = vec![T::zero(); n * img];
                for b in 0..n {
                    g.col2im(&dcols, &mut dx[b * img..(b + 1) * img], ld, b * grid);
                }
                (dx, dw)
            }
            LayerKind::Deconv => {
                let g = self.geometry.expect("spatial layer");
                let x = cache
                    .input
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("{}: cache lacks input", self.name)))?;
                let cin = self.in_dims[0];
                let hw = g.grid_len();
                let ld = n * hw;
                let k = g.patch_len();
                let img = g.image_len();
                let mut dcols = vec![T::zero(); k * ld];
                for b in 0..n {
                    g.im2col(&dz[b * img..(b + 1) * img], &mut dcols, ld, b * hw);
                }
                let mut dxc = vec![T::zero(); cin * ld];
                gemm(cin, k, ld, T::one(), weight.data(), false, &dcols, false, T::zero(), &mut dxc);
                let xc = to_channel_major(x.data(), n, cin, hw);
                let mut dw = vec![T::zero(); cin * k];
                gemm(cin, ld, k, T::one(), &xc, false, &dcols, true, T::zero(), &mut dw);
                (to_batch_major(&dxc, n, cin, hw), dw)
            }
            LayerKind::FullyConnected => {
                let x = cache
                    .input
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("{}: cache lacks input", self.name)))?;
                let fin = self.in_features();
                let mut dw = vec![T::zero(); c * fin];
                gemm(c, n, fin, T::one(), &dz, true, x.data(), false, T::zero(), &mut dw);
                let mut dx = vec![T::zero(); n * fin];
                gemm(n, c, fin, T::one(), &dz, false, weight.data(), false, T::zero(), &mut dx);
                in_shape = x.dims().to_vec();
                (dx, dw)
            }
        };
        grads.insert(self.keys.weight.clone(), Tensor::from_vec(self.weight_dims(), dw)?);
        Ok((Tensor::from_vec(in_shape, dx)?, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Padding;

    fn single(spec: LayerSpec, in_dims: &[usize], seed: u64) -> (Layer, ParamSet<f64>) {
        let layer = Layer::new("layer1", spec, in_dims).unwrap();
        let mut params = ParamSet::new();
        layer.init_params(&mut params, &mut Rng::new(seed)).unwrap();
        (layer, params)
    }

    #[test]
    fn identity_conv_passes_input_through() {
        let (layer, mut params) = single(LayerSpec::conv(1, 1, 1, Padding::Valid), &[1, 1, 1], 0);
        params.get_mut("layer1.conv.weight").unwrap().data_mut()[0] = 1.0;
        let x = Tensor::from_vec([1, 1, 1, 1], vec![3.25]).unwrap();
        let (y, _) = layer.forward(&params, &x, false).unwrap();
        assert_eq!(y.data(), &[3.25]);
    }

    #[test]
    fn ones_kernel_sums_windows() {
        let (layer, mut params) = single(LayerSpec::conv(2, 1, 1, Padding::Valid), &[1, 3, 3], 0);
        params.get_mut("layer1.conv.weight").unwrap().data_mut().fill(1.0);
        let x = Tensor::fill([1, 1, 3, 3], 1.0).unwrap();
        let (y, _) = layer.forward(&params, &x, false).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        // direct summation: each 2×2 window of ones
        let mut want = [0.0; 4];
        for (i, w) in want.iter_mut().enumerate() {
            let (r, c) = (i / 2, i % 2);
            for dr in 0..2 {
                for dc in 0..2 {
                    *w += x.data()[(r + dr) * 3 + c + dc];
                }
            }
        }
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn activations() {
        let spec = LayerSpec::fully_connected(3).with_activation(Activation::Relu);
        let (layer, mut params) = single(spec, &[3], 0);
        let w = params.get_mut("layer1.fc.weight").unwrap().data_mut();
        w.fill(0.0);
        w[0] = 1.0;
        w[4] = 1.0;
        w[8] = 1.0;
        let x = Tensor::from_vec([1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, cache) = layer.forward(&params, &x, false).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);

        let g = Tensor::from_vec([1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let (gx, _) = layer.backward(&params, &cache, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0]);

        let spec = LayerSpec::fully_connected(1).with_activation(Activation::Sigmoid);
        let (layer, mut params) = single(spec, &[1], 0);
        params.get_mut("layer1.fc.weight").unwrap().data_mut()[0] = 1.0;
        let (y, _) = layer
            .forward(&params, &Tensor::from_vec([1, 1], vec![0.0]).unwrap(), false)
            .unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        for spec in [
            LayerSpec::conv(3, 2, 2, Padding::Same).with_bn().with_activation(Activation::Relu),
            LayerSpec::deconv(3, 2, 2, Padding::Valid).with_activation(Activation::Tanh),
            LayerSpec::fully_connected(3).with_bn().with_activation(Activation::Sigmoid),
        ] {
            let in_dims = if spec.is_spatial() { vec![2, 4, 4] } else { vec![5] };
            let (layer, params) = single(spec, &in_dims, 1);
            let mut dims = vec![3];
            dims.extend(&in_dims);
            let x = Tensor::randn(dims, &mut Rng::new(2), 1.0).unwrap();
            let (y, cache) = layer.forward(&params, &x, true).unwrap();
            let (gx, grads) = layer.backward(&params, &cache, &Tensor::zeros_like(&y)).unwrap();
            assert!(gx.data().iter().all(|&v| v == 0.0));
            assert!(grads.values().all(|g| g.data().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn batch_norm_training_needs_two_examples() {
        let spec = LayerSpec::conv(3, 2, 1, Padding::Same).with_bn();
        let (layer, params) = single(spec, &[1, 4, 4], 0);
        let x = Tensor::fill([1, 1, 4, 4], 1.0).unwrap();
        assert!(matches!(layer.forward(&params, &x, true), Err(Error::Input(_))));
        assert!(layer.forward(&params, &x, false).is_ok());
    }

    #[test]
    fn batch_norm_normalizes_per_channel() {
        let spec = LayerSpec::conv(3, 3, 1, Padding::Same).with_bn();
        let (layer, mut params) = single(spec, &[2, 5, 5], 4);
        let gamma = [0.5, 2.0, 1.5];
        let beta = [-1.0, 0.25, 3.0];
        params.get_mut("layer1.bn.gamma").unwrap().data_mut().copy_from_slice(&gamma);
        params.get_mut("layer1.bn.beta").unwrap().data_mut().copy_from_slice(&beta);
        let x = Tensor::randn([4, 2, 5, 5], &mut Rng::new(5), 2.0).unwrap();
        let (y, _) = layer.forward(&params, &x, true).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 3 + ch) * 25..(b * 3 + ch + 1) * 25].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((m - beta[ch]).abs() < 1e-5);
            // epsilon in the denominator shrinks the variance very slightly
            assert!((v - gamma[ch] * gamma[ch]).abs() < 1e-5 * gamma[ch] * gamma[ch] + 1e-5);
        }
    }

    #[test]
    fn running_stats_move_only_when_committed_in_training() {
        let spec = LayerSpec::fully_connected(2).with_bn();
        let (layer, mut params) = single(spec, &[3], 0);
        let x = Tensor::randn([4, 3], &mut Rng::new(1), 1.0).unwrap();
        let before = params.clone();
        let (_, cache) = layer.forward(&params, &x, false).unwrap();
        layer.commit_running_stats(&mut params, &cache).unwrap();
        assert_eq!(params, before);
        let (_, cache) = layer.forward(&params, &x, true).unwrap();
        layer.commit_running_stats(&mut params, &cache).unwrap();
        assert_ne!(
            params.get("layer1.bn.running_mean").unwrap(),
            before.get("layer1.bn.running_mean").unwrap()
        );
    }

    #[test]
    fn conv_adjoint_property() {
        let spec = LayerSpec::conv(4, 3, 2, Padding::Same);
        let (layer, mut params) = single(spec, &[2, 7, 6], 3);
        params.get_mut("layer1.conv.bias").unwrap().data_mut().fill(0.0);
        let mut rng = Rng::new(11);
        let x = Tensor::randn([2, 2, 7, 6], &mut rng, 1.0).unwrap();
        let (lx, cache) = layer.forward(&params, &x, false).unwrap();
        let y = Tensor::randn(lx.dims().to_vec(), &mut rng, 1.0).unwrap();
        let (lty, _) = layer.backward(&params, &cache, &y).unwrap();
        let lhs = lx.dot(&y).unwrap();
        let rhs = x.dot(&lty).unwrap();
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn deconv_forward_is_conv_input_gradient() {
        // A deconv with weight W applied to x equals the input-gradient map of
        // the matching conv (same W) applied to x.
        let deconv = LayerSpec::deconv(4, 3, 2, Padding::Same);
        let (dlayer, dparams) = single(deconv, &[2, 3, 4], 8);
        let conv = LayerSpec::conv(4, 2, 2, Padding::Same);
        let (clayer, mut cparams) = single(conv, &[3, 6, 8], 0);
        *cparams.get_mut("layer1.conv.weight").unwrap() = dparams.get("layer1.deconv.weight").unwrap().clone();
        cparams.get_mut("layer1.conv.bias").unwrap().data_mut().fill(0.0);

        let mut rng = Rng::new(12);
        let x = Tensor::randn([2, 2, 3, 4], &mut rng, 1.0).unwrap();
        let (y, _) = dlayer.forward(&dparams, &x, false).unwrap();
        let probe = Tensor::zeros([2, 3, 6, 8]).unwrap();
        let (_, ccache) = clayer.forward(&cparams, &probe, false).unwrap();
        let (want, _) = clayer.backward(&cparams, &ccache, &x).unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let (layer, params) = single(LayerSpec::conv(3, 2, 1, Padding::Same), &[2, 4, 4], 0);
        let x = Tensor::zeros([1, 3, 4, 4]).unwrap();
        assert!(matches!(layer.forward(&params, &x, false), Err(Error::Shape(_))));
    }
}
