pub mod cli;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}
    #[doc = include_str!("../../../book/src/signals.md")]
    pub mod signals {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    pub mod scenes {}
    #[doc = include_str!("../../../book/src/speakers.md")]
    pub mod speakers {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
