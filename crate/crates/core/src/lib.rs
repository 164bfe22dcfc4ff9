//! Over-the-air federated learning on an OFDM uplink.
//!
//! UEs train locally, map their model updates onto OFDM resource grids,
//! pre-equalize the channel and transmit simultaneously; the gNB receives
//! the superposition, which is the sum of the updates.

pub mod accounting;
pub mod channel;
pub mod codec;
pub mod csi;
pub mod error;
pub mod fl;
pub mod grid;
pub mod ota;
pub mod precode;
pub mod rng;
pub mod scenario;
pub mod sync;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/precoding.md")]
    mod precoding {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/sync.md")]
    mod sync {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/accounting.md")]
    mod accounting {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
