pub mod analysis;
pub mod cli;
pub mod collocation;
pub mod comm;
pub mod controller;
pub mod error;
pub mod harness;
pub mod problems;
pub mod sweeper;
pub mod trace;
pub mod transfer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/collocation.md")]
    mod collocation {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/pfasst.md")]
    mod pfasst {}
    #[doc = include_str!("../../../book/src/traces.md")]
    mod traces {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
}
