//! Network definitions.

pub mod discriminator;
pub mod generator;
pub mod init;
pub mod spec;

pub use discriminator::{discriminator_backward, discriminator_forward, discriminator_forward_recorded, DiscriminatorParams};
pub use generator::{deblur, generator_backward, generator_forward, generator_forward_recorded, GeneratorParams};
pub use init::Init;
pub use spec::{DiscriminatorSpec, GeneratorSpec, LayerInfo, LayerKind};
