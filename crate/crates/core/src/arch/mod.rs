//! Network descriptions, builders for the material nets, and their runtime form.

mod builders;
mod freeze;
mod network;
mod spec;

pub use builders::{
    build_branched, build_branched_with, build_deep, build_deep_with, build_vanilla,
    build_vanilla_with, DeepConfig, Fusion, VanillaConfig, NUM_CLASSES,
};
pub use freeze::{freeze_stages, FreezeMask};
pub use network::Network;
pub use spec::{LayerKind, LayerSpec, NetworkSpec, Shape, ShapeTrace, Tower};
