//! The guide's chapters, compiled as doc-tests so that every snippet in the
//! book runs against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/templates.md")]
pub mod templates {}
#[doc = include_str!("../../../book/src/ensembles.md")]
pub mod ensembles {}
#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}
#[doc = include_str!("../../../book/src/closed_loop.md")]
pub mod closed_loop {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
