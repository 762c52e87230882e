//! Compiles the code blocks of the guide in `book/src` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/randomness.md")]
pub mod randomness {}
#[doc = include_str!("../../../book/src/differentiation.md")]
pub mod differentiation {}
#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}
#[doc = include_str!("../../../book/src/optimization.md")]
pub mod optimization {}
#[doc = include_str!("../../../book/src/bayes.md")]
pub mod bayes {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
