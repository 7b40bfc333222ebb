//! The guide in `book/`, compiled so that every listing runs as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quantile.md")]
pub mod quantile {}
#[doc = include_str!("../../../book/src/es.md")]
pub mod es {}
#[doc = include_str!("../../../book/src/huber.md")]
pub mod huber {}
#[doc = include_str!("../../../book/src/inference.md")]
pub mod inference {}
#[doc = include_str!("../../../book/src/noncrossing.md")]
pub mod noncrossing {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
