//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Grads, ParamSet};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// Moment estimates for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step_count: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    /// One update of every trainable entry. Gradients for non-trainable
    /// entries are accepted and ignored; a trainable entry without a
    /// gradient, or a gradient for an unknown entry, is an error.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Grads<T>) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` is {}, parameter is {}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        let trainable: Vec<String> = params
            .names()
            .filter(|n| params.is_trainable(n))
            .map(str::to_owned)
            .collect();
        if let Some(missing) = trainable.iter().find(|n| !grads.contains_key(*n)) {
            return Err(Error::Contract(format!("no gradient for trainable `{missing}`")));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let correction1 = T::of(1.0 - c.beta1.powi(t));
        let correction2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);

        for name in trainable {
            let g = &grads[&name];
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros_like(g));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros_like(g));
            let p = params.get_mut(&name)?;
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / correction1;
                let v_hat = *vv / correction2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64, trainable: bool) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec([1], vec![value]).unwrap(), trainable);
        p
    }

    fn grad(value: f64) -> Grads<f64> {
        let mut g = Grads::new();
        g.insert("w".into(), Tensor::from_vec([1], vec![value]).unwrap());
        g
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar(0.0, true);
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        adam.step(&mut p, &grad(1.0)).unwrap();
        let got = p.get("w").unwrap().data()[0];
        // -α·1/(1+ε) evaluated by hand
        assert!((got - -0.000999999990).abs() < 1e-12, "{got}");
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.3, true);
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        for _ in 0..5 {
            adam.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data()[0], 0.3);
        assert_eq!(adam.step_count, 5);
    }

    #[test]
    fn frozen_entry_is_bit_identical() {
        let mut p = scalar(0.123456789, false);
        p.insert("u", Tensor::from_vec([1], vec![1.0]).unwrap(), true);
        let mut g = grad(5.0);
        g.insert("u".into(), Tensor::from_vec([1], vec![1.0]).unwrap());
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0].to_bits(), 0.123456789f64.to_bits());
        assert_ne!(p.get("u").unwrap().data()[0], 1.0);
    }

    #[test]
    fn repeated_gradient_gives_stable_update() {
        let mut p = scalar(0.0, true);
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        adam.step(&mut p, &grad(0.7)).unwrap();
        let first = p.get("w").unwrap().data()[0];
        adam.step(&mut p, &grad(0.7)).unwrap();
        let second = p.get("w").unwrap().data()[0] - first;
        assert!((second.abs() - first.abs()).abs() < 0.01 * first.abs());
    }

    #[test]
    fn errors() {
        let mut p = scalar(0.0, true);
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        let mut bad = Grads::new();
        bad.insert("w".into(), Tensor::from_vec([2], vec![1.0, 1.0]).unwrap());
        assert!(matches!(adam.step(&mut p, &bad), Err(Error::Shape(_))));
        assert!(matches!(adam.step(&mut p, &Grads::new()), Err(Error::Contract(_))));
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::<f32>::new(cfg).is_err());
    }
}
