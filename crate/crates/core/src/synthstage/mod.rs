//! Synthetic light stage: an animated sphere-assembly subject rendered flat-lit
//! (albedo only) and relit under HDR environment maps by an exact analytic renderer.

pub mod capture;
pub mod degrade;
pub mod lights;
pub mod render;
pub mod scene;

pub use capture::{
    make_capture, mask_centroid, read_capture, ring_cameras, synth_capture, write_capture,
    CaptureConfig, CaptureSet, FramePair, ManifestRow, Role,
};
pub use degrade::degrade;
pub use lights::{make_light_pool, LightKind};
pub use render::{render_flat, render_relit, render_relit_radiance};
pub use scene::{make_subject, Background, MotionState, SceneSpec};
