//! Voxel radiance fields trained with a depth-supervised ray termination loss.

pub mod camera;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod field;
pub mod image;
pub mod loss;
pub mod render;
pub mod scene;
pub mod sfm;
pub mod train;

pub use camera::{quat_to_rotation, Camera, CameraError, Projection, Ray};
pub use field::{FieldGrad, FieldSample, VoxelField};
pub use loss::{DepthMode, DepthTarget, LossReport};
pub use render::{
    render_ray, render_ray_backward, stratified_samples, RayRender, RaySamples, SamplingMode,
};
