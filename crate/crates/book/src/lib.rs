//! Compiles and runs the Rust snippets of the guide in book/ as doc-tests.

#[doc = include_str!("../../../book/src/ch1-laminar.md")]
pub mod chapter1 {}

#[doc = include_str!("../../../book/src/ch2-bifurcation.md")]
pub mod chapter2 {}

#[doc = include_str!("../../../book/src/ch3-branch.md")]
pub mod chapter3 {}

#[doc = include_str!("../../../book/src/ch4-reconstruct.md")]
pub mod chapter4 {}

#[doc = include_str!("../../../book/src/ch5-cli.md")]
pub mod chapter5 {}
