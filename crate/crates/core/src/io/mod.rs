//! Scene container, block stitching and synthetic scenes.

mod container;
mod stitch;
pub mod synth;

pub use container::{read_scene, write_scene, FormatError, MAGIC, VERSION};
pub use stitch::{stitch_blocks, Stitched, DEFAULT_MAX_BLOCKS};
pub use synth::{generate_synthetic, SynthSpec};

use std::path::Path;

use crate::error::Result;
use crate::scene::SceneFrame;

pub fn read_scene_file(path: impl AsRef<Path>) -> Result<SceneFrame> {
    let bytes = std::fs::read(path)?;
    Ok(read_scene(&bytes)?)
}

pub fn write_scene_file(frame: &SceneFrame, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_scene(frame))?;
    Ok(())
}
