use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerCache};
use crate::nn::params::{Grads, ParamSet};
use crate::nn::spec::{ArchitectureSpec, LayerSpec};
use crate::tensor::{Real, Rng, Tensor};

/// A feed-forward stack of [`Layer`]s sharing one parameter namespace.
#[derive(Clone, Debug)]
pub struct Network {
    pub name: String,
    pub input_dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Per-layer caches of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub layers: Vec<LayerCache<T>>,
    pub training: bool,
}

impl Network {
    /// Instantiate `specs` in order. Layer `i` of the slice gets the parameter
    /// stem `{prefix}layer{first_index + i}`.
    pub fn from_layers(
        name: impl Into<String>,
        prefix: &str,
        input_dims: &[usize],
        specs: &[LayerSpec],
        first_index: usize,
    ) -> Result<Self> {
        let name = name.into();
        let mut dims = input_dims.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let index = first_index + i;
            let layer = Layer::new(format!("{prefix}layer{index}"), spec.clone(), &dims).map_err(|e| match e {
                Error::Infeasible { reason, .. } => Error::Infeasible {
                    arch: name.clone(),
                    layer: index,
                    reason,
                },
                other => other,
            })?;
            dims = layer.out_dims.clone();
            layers.push(layer);
        }
        Ok(Network {
            name,
            input_dims: input_dims.to_vec(),
            layers,
        })
    }

    pub fn from_spec(arch: &ArchitectureSpec, prefix: &str) -> Result<Self> {
        Self::from_layers(&arch.name, prefix, &arch.input_shape, &arch.layers, 1)
    }

    pub fn output_dims(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.out_dims.as_slice())
            .unwrap_or(&self.input_dims)
    }

    pub fn init_params<T: Real>(&self, params: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        for layer in &self.layers {
            layer.init_params(params, rng)?;
        }
        Ok(())
    }

    pub fn fresh_params<T: Real>(&self, rng: &mut Rng) -> Result<ParamSet<T>> {
        let mut params = ParamSet::new();
        self.init_params(&mut params, rng)?;
        Ok(params)
    }

    /// Forward pass without touching the parameters.
    pub fn forward_pure<T: Real>(
        &self,
        params: &ParamSet<T>,
        input: &Tensor<T>,
        training: bool,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(params, &x, training)?;
            caches.push(cache);
            x = y;
        }
        Ok((
            x,
            ForwardCache {
                layers: caches,
                training,
            },
        ))
    }

    /// Forward pass; in training mode batch-norm running statistics are
    /// updated afterwards.
    pub fn forward<T: Real>(
        &self,
        params: &mut ParamSet<T>,
        input: &Tensor<T>,
        training: bool,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (out, cache) = self.forward_pure(params, input, training)?;
        if training {
            self.commit_running_stats(params, &cache)?;
        }
        Ok((out, cache))
    }

    pub fn commit_running_stats<T: Real>(&self, params: &mut ParamSet<T>, cache: &ForwardCache<T>) -> Result<()> {
        for (layer, c) in self.layers.iter().zip(&cache.layers) {
            layer.commit_running_stats(params, c)?;
        }
        Ok(())
    }

    /// Inference-mode forward.
    pub fn predict<T: Real>(&self, params: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_pure(params, input, false)?.0)
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        cache: &ForwardCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Grads<T>)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "{}: cache has {} layers, network has {}",
                self.name,
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut grad = grad_out.clone();
        let mut grads = Grads::new();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (g, lg) = layer.backward(params, c, &grad)?;
            grads.extend(lg);
            grad = g;
        }
        Ok((grad, grads))
    }
}
