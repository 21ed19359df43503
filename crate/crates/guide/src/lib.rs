//! The adaflow guide, built with mdbook from `book/`.
//!
//! mdbook cannot resolve crate dependencies when it tests code blocks, so each
//! chapter is pulled in here as module documentation and its snippets run as
//! ordinary doc-tests under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/spectra.md")]
pub mod spectra {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/rules.md")]
pub mod rules {}
#[doc = include_str!("../../../book/src/mode-flow.md")]
pub mod mode_flow {}
#[doc = include_str!("../../../book/src/volterra.md")]
pub mod volterra {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/asymptotics.md")]
pub mod asymptotics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/cookbook.md")]
pub mod cookbook {}
