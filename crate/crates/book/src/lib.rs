//! mdbook cannot run snippets that depend on workspace crates, so every
//! chapter is pulled in here as a doc comment and `cargo test` runs its code
//! blocks. One module per chapter keeps failures attributable.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/quickstart.md")]
mod quickstart {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/grid.md")]
mod grid {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/privacy.md")]
mod privacy {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sliced_ot.md")]
mod sliced_ot {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/projection.md")]
mod projection {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/engine.md")]
mod engine {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/constraints.md")]
mod constraints {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/reproducibility.md")]
mod reproducibility {}
