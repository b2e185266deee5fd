//! Declarative layer tables and shape inference.
//!
//! A table entry printed as `H×W×C` is stored here as `[C, H, W]`; fully
//! connected outputs are flat `[F]`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Deconv,
    FullyConnected,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding; conv output `ceil(in/stride)`, deconv output `in·stride`.
    Same,
    #[default]
    Valid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    #[default]
    None,
}

fn one() -> usize {
    1
}

fn unit_kernel() -> [usize; 2] {
    [1, 1]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default = "unit_kernel")]
    pub kernel: [usize; 2],
    /// Output channels, or neuron count for fully connected layers.
    pub out_channels: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub activation: Activation,
    /// Output size as printed in a source table (`H, W, C` or `F, 1`);
    /// only consulted by [`lint`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub printed_output: Option<Vec<usize>>,
}

impl LayerSpec {
    pub fn conv(kernel: usize, out_channels: usize, stride: usize, padding: Padding) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel: [kernel, kernel],
            out_channels,
            stride,
            padding,
            batch_norm: false,
            activation: Activation::None,
            printed_output: None,
        }
    }

    pub fn deconv(kernel: usize, out_channels: usize, stride: usize, padding: Padding) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            ..Self::conv(kernel, out_channels, stride, padding)
        }
    }

    pub fn fully_connected(neurons: usize) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            ..Self::conv(1, neurons, 1, Padding::Valid)
        }
    }

    pub fn with_bn(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn is_spatial(&self) -> bool {
        self.kind != LayerKind::FullyConnected
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.out_channels == 0 {
            return Err("out_channels must be ≥ 1".into());
        }
        if self.is_spatial() {
            if self.stride == 0 {
                return Err("stride must be ≥ 1".into());
            }
            if self.kernel.contains(&0) {
                return Err("kernel extents must be ≥ 1".into());
            }
        }
        Ok(())
    }

    /// Per-example output dims for per-example input dims.
    pub fn output_dims(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        self.validate()?;
        match self.kind {
            LayerKind::FullyConnected => Ok(vec![self.out_channels]),
            LayerKind::Conv | LayerKind::Deconv => {
                let &[_, h, w] = input else {
                    return Err(format!(
                        "{:?} layer needs a C×H×W input, got {input:?}",
                        self.kind
                    ));
                };
                let oh = self.spatial_out(h, self.kernel[0], "height")?;
                let ow = self.spatial_out(w, self.kernel[1], "width")?;
                Ok(vec![self.out_channels, oh, ow])
            }
        }
    }

    fn spatial_out(&self, n: usize, k: usize, axis: &str) -> std::result::Result<usize, String> {
        let s = self.stride;
        match (self.kind, self.padding) {
            (LayerKind::Conv, Padding::Same) => Ok(n.div_ceil(s)),
            (LayerKind::Conv, Padding::Valid) => {
                if n < k {
                    Err(format!(
                        "{k}-wide valid convolution on {axis} {n} gives non-positive {axis} ({})",
                        n as i64 - k as i64 + 1
                    ))
                } else {
                    Ok((n - k) / s + 1)
                }
            }
            (LayerKind::Deconv, Padding::Same) => Ok(n * s),
            (LayerKind::Deconv, Padding::Valid) => Ok((n - 1) * s + k),
            (LayerKind::FullyConnected, _) => unreachable!(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Per-example input `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Per-example output dims of every layer, or the first infeasible layer
    /// (1-based).
    pub fn layer_dims(&self) -> Result<Vec<Vec<usize>>> {
        let mut current = self.input_shape.clone();
        if current.is_empty() || current.contains(&0) {
            return Err(Error::Infeasible {
                arch: self.name.clone(),
                layer: 0,
                reason: format!("input shape {current:?} has a non-positive extent"),
            });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer
                .output_dims(&current)
                .map_err(|reason| Error::Infeasible {
                    arch: self.name.clone(),
                    layer: i + 1,
                    reason,
                })?;
            out.push(current.clone());
        }
        Ok(out)
    }

    pub fn output_dims(&self) -> Result<Vec<usize>> {
        Ok(self
            .layer_dims()?
            .pop()
            .unwrap_or_else(|| self.input_shape.clone()))
    }
}

/// Batch-prefixed output shape of every layer.
pub fn infer_shapes(arch: &ArchitectureSpec, batch: usize) -> Result<Vec<Shape>> {
    arch.layer_dims()?
        .into_iter()
        .map(|dims| {
            let mut full = vec![batch];
            full.extend(dims);
            Shape::new(full)
        })
        .collect()
}

/// Table order for display: `H×W×C` for spatial outputs, `F×1` for flat ones.
pub fn table_order(dims: &[usize]) -> Vec<usize> {
    match *dims {
        [c, h, w] => vec![h, w, c],
        [f] => vec![f, 1],
        _ => dims.to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based layer index.
    pub layer: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: {}", self.layer, self.message)
    }
}

/// Outcome of checking a spec against its own printed output sizes.
#[derive(Clone, Debug)]
pub struct LintReport {
    /// Inferred per-example dims for each layer; `None` from the first
    /// infeasible layer on.
    pub inferred: Vec<Option<Vec<usize>>>,
    pub diagnostics: Vec<Diagnostic>,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }

    /// Layers whose printed size matches the inferred one.
    pub fn matching_layers(&self, arch: &ArchitectureSpec) -> Vec<usize> {
        arch.layers
            .iter()
            .zip(&self.inferred)
            .enumerate()
            .filter_map(|(i, (layer, inferred))| match (&layer.printed_output, inferred) {
                (Some(p), Some(d)) if *p == table_order(d) => Some(i + 1),
                _ => None,
            })
            .collect()
    }
}

/// Infer every layer's shape and compare with `printed_output` where given.
/// Inference stops at the first infeasible layer, which is reported rather
/// than raised.
pub fn lint(arch: &ArchitectureSpec) -> LintReport {
    let mut inferred = Vec::with_capacity(arch.layers.len());
    let mut diagnostics = Vec::new();
    let mut current = Some(arch.input_shape.clone());
    for (i, layer) in arch.layers.iter().enumerate() {
        let idx = i + 1;
        current = match current {
            None => None,
            Some(input) => match layer.output_dims(&input) {
                Ok(dims) => Some(dims),
                Err(reason) => {
                    let printed = layer
                        .printed_output
                        .as_ref()
                        .map(|p| format!("; printed output {}", join_x(p)))
                        .unwrap_or_default();
                    diagnostics.push(Diagnostic {
                        layer: idx,
                        message: format!("infeasible on input {}: {reason}{printed}", join_x(&table_order(&input))),
                    });
                    None
                }
            },
        };
        if let (Some(dims), Some(printed)) = (&current, &layer.printed_output) {
            let got = table_order(dims);
            if &got != printed {
                diagnostics.push(Diagnostic {
                    layer: idx,
                    message: format!(
                        "inferred output {} differs from printed {}",
                        join_x(&got),
                        join_x(printed)
                    ),
                });
            }
        }
        inferred.push(current.clone());
    }
    LintReport { inferred, diagnostics }
}

fn join_x(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

macro_rules! shipped {
    ($($fn_name:ident => $file:literal),* $(,)?) => {
        $(
            pub fn $fn_name() -> ArchitectureSpec {
                ArchitectureSpec::from_json(include_str!(concat!("../../specs/", $file)))
                    .expect(concat!("shipped spec ", $file, " parses"))
            }
        )*

        /// Every shipped spec, by file name.
        pub fn all() -> Vec<(&'static str, ArchitectureSpec)> {
            vec![$(($file, $fn_name())),*]
        }
    };
}

/// Architecture specs shipped with the crate (also under `specs/`).
pub mod shipped {
    use super::ArchitectureSpec;

    shipped! {
        table1_generator => "table1_generator.json",
        table2_discriminator => "table2_discriminator.json",
        table2_discriminator_runnable => "table2_discriminator_runnable.json",
        desk_generator => "desk_generator.json",
        desk_discriminator => "desk_discriminator.json",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_same_and_valid_rules() {
        let same = LayerSpec::conv(4, 24, 2, Padding::Same);
        assert_eq!(same.output_dims(&[3, 218, 178]).unwrap(), vec![24, 109, 89]);
        let unit = LayerSpec::conv(3, 5, 1, Padding::Same);
        assert_eq!(unit.output_dims(&[2, 13, 7]).unwrap(), vec![5, 13, 7]);
        let valid = LayerSpec::conv(4, 3, 1, Padding::Valid);
        assert!(valid.output_dims(&[192, 4, 3]).is_err());
    }

    #[test]
    fn deconv_rules() {
        let valid = LayerSpec::deconv(4, 24, 2, Padding::Valid);
        assert_eq!(valid.output_dims(&[48, 108, 88]).unwrap(), vec![24, 218, 178]);
        let same = LayerSpec::deconv(4, 192, 5, Padding::Same);
        assert_eq!(same.output_dims(&[192, 5, 4]).unwrap(), vec![192, 25, 20]);
    }

    #[test]
    fn fc_ignores_kernel_and_flattens() {
        let fc = LayerSpec::fully_connected(200);
        assert_eq!(fc.output_dims(&[3, 2, 1]).unwrap(), vec![200]);
        assert_eq!(fc.output_dims(&[7]).unwrap(), vec![200]);
    }

    #[test]
    fn spatial_after_flat_is_infeasible() {
        let arch = ArchitectureSpec {
            name: "bad".into(),
            input_shape: vec![1, 4, 4],
            layers: vec![
                LayerSpec::fully_connected(4),
                LayerSpec::conv(1, 1, 1, Padding::Same),
            ],
        };
        match arch.layer_dims() {
            Err(Error::Infeasible { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn json_rejects_unknown_keys_and_round_trips() {
        let arch = shipped::desk_discriminator();
        assert_eq!(ArchitectureSpec::from_json(&arch.to_json()).unwrap(), arch);
        let bad = r#"{"name":"x","input_shape":[1,2,2],"layers":[],"extra":1}"#;
        assert!(ArchitectureSpec::from_json(bad).is_err());
    }

    #[test]
    fn shipped_specs_parse() {
        assert_eq!(shipped::all().len(), 5);
        for (file, arch) in shipped::all() {
            assert!(!arch.layers.is_empty(), "{file}");
        }
    }

    #[test]
    fn infer_shapes_prefixes_batch() {
        let shapes = infer_shapes(&shipped::desk_discriminator(), 4).unwrap();
        assert!(shapes.iter().all(|s| s.dims()[0] == 4));
    }
}
