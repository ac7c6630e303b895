pub mod connectome;
pub mod derivatives;
pub mod error;
pub mod models;
pub mod nifti;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod volume;

pub use error::{Error, ErrorCategory, Result};
pub use volume::{MaskVolume, Volume3D, Volume4D};
