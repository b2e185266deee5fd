//! Layers, architecture tables, shape inference and gradient checking.

pub mod conv;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod params;
pub mod spec;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use layer::Layer;
pub use network::{ForwardCache, Network};
pub use params::{Grads, ParamSet};
pub use spec::{infer_shapes, lint, Activation, ArchitectureSpec, LayerKind, LayerSpec, Padding};
