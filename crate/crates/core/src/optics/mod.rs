//! Geometric photon optics: parabolic mirror, thin lens, mask.

pub mod mask;
pub mod mirror;
pub mod system;

pub use mask::{transmit, Grating, Mask, MaskError};
pub use mirror::{reflect, ParabolicMirror, Ray, ReflectError, Vec3};
pub use system::{
    back_project, effective_magnification, jacobian, trace_to_image, OpticalSystem, OpticsError,
    OpticsPreset,
};
