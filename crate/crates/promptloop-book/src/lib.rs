//! Keeps the guide honest: every chapter under `book/src/` is included here
//! as module documentation, so each of its Rust snippets compiles and runs
//! as a doc-test in `cargo test --workspace`. A book edit that breaks an
//! example breaks the build, not a reader.
//!
//! The crate exports nothing; build the rendered guide with
//! `mdbook build book`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}

#[doc = include_str!("../../../book/src/rewards.md")]
pub mod rewards {}

#[doc = include_str!("../../../book/src/interaction-loop.md")]
pub mod interaction_loop {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/theory.md")]
pub mod theory {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
