//! Pan-sharpening toolkit built around the MESSFN fusion network.
//!
//! * [`raster`]: multi-band rasters, native file format, previews
//! * [`wald`]: reduced-resolution dataset simulation
//! * [`net`]: the three-stream fusion network
//! * [`baselines`]: IHS, PCA, Gram-Schmidt and MTF-GLP-HPM fusion
//! * [`metrics`]: reference and no-reference quality indices, diagnostic maps
//! * [`trainer`]: training loop and evaluation
//! * [`checkpoint`]: weight and optimizer-state container
//! * [`synthetic`]: seeded test scenes

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod filter;
pub mod metrics;
pub mod net;
pub mod raster;
pub mod synthetic;
pub mod trainer;
pub mod wald;

pub use error::{CoreError, Result};
