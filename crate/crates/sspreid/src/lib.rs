//! File formats and command line for saliency and semantic-parsing guided
//! person re-identification, on top of `sspreid-core`.
//!
//! * [`pnm`]: P5 guidance maps and P6 images.
//! * [`gallery`]: SSPF feature files.
//! * [`checkpoint`]: SSPM stream checkpoints.
//! * [`csvfmt`]: loss curves, split listings, distance matrices.
//! * [`dataset`]: dataset directories.
//! * [`manifest`]: per-run manifests.
//! * [`cli`]: the `sspreid` commands.

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod csvfmt;
pub mod dataset;
pub mod error;
mod fsutil;
pub mod gallery;
pub mod manifest;
pub mod pnm;

pub use error::{DecodeError, Error, ExitCode, Result};
pub use gallery::GalleryFile;
pub use manifest::RunManifest;
