//! Texture super-resolution for PBR material sets by multi-view
//! differentiable rendering against super-resolved pseudo ground truth.

pub mod camera;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod image;
pub mod lighting;
pub mod math;
pub mod metrics;
pub mod optimizer;
pub mod oracle;
pub mod renderer;
pub mod synth;
pub mod texture;

pub use camera::{build_rig, Camera, CameraRig, RigPreset};
pub use error::{Error, Result};
pub use geometry::Mesh;
pub use lighting::{DirectionalLight, EnvironmentLight, Light};
pub use optimizer::{optimize, OptimConfig, OptimResult};
pub use oracle::{OracleError, OracleSpec, SrOracle, SrRequest};
pub use renderer::{rasterize, shade, GBuffer, RenderImage};
pub use texture::{TextureMap, TextureSet};
