//! Click-driven open-world segmentation of point clouds.
//!
//! A [`session::Session`] clusters a scene's backbone features into
//! prototypes, labels them with a CRF seeded by closed-world votes, and refines
//! labels and prototypes as annotation clicks arrive. Novel classes are named
//! by the annotator at click time.

pub mod annotator;
pub mod clustering;
pub mod crf;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod prototype;
pub mod scene;
pub mod session;

pub use error::{Error, Result};
pub use scene::{LabelId, LabelSpace, SceneFrame};
pub use session::{ClickRequest, Session, SessionConfig};
