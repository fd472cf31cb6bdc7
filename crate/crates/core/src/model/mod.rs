//! Network descriptors, parameters, and the forward/backward passes.

mod descriptor;
mod network;
mod pretrained;
mod state;

pub use descriptor::{
    build_toy_descriptor, build_vggf_descriptor, build_vggface_descriptor, ArchitectureDescriptor,
    ConvSpec, HeadSpec, LayerGeometry, PoolSpec,
};
pub use network::{
    argmax, backprop, forward, forward_one, head_forward, loss, loss_and_gradients, mix_seed,
    Backprop, ForwardCache, Mode,
};
pub use pretrained::{load_pretrained_backbone, parse_name_map};
pub use state::{ModelState, Preprocessing, HEAD_INIT_STD};

#[cfg(test)]
mod tests;
