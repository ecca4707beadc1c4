//! A deterministic runtime for a cognitive architecture with a serial central
//! production system, activation-ranked Middle Memory, and per-module shadow
//! production systems that gate what reaches working memory.
//!
//! Load a [`model::Model`] (or one of the bundled [`demos`]), run it with
//! [`runtime::Runtime`] or [`runtime::run`], and read the resulting
//! [`runtime::Trace`].
//!
//! ```
//! use mm_arch::{demos, runtime};
//!
//! let trace = runtime::run(demos::QUERY.model()?, runtime::Mode::Mm, 0, 50)?;
//! assert_eq!(runtime::metrics(&trace).seriality_violations, 0);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod chunk;
pub mod codec;
pub mod demos;
pub mod memory;
pub mod model;
pub mod predictor;
pub mod production;
pub mod runtime;
pub mod shadow;
pub mod time;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/chunks.md")]
    mod chunks {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/productions.md")]
    mod productions {}
    #[doc = include_str!("../../../book/src/shadow-systems.md")]
    mod shadow_systems {}
    #[doc = include_str!("../../../book/src/predictors.md")]
    mod predictors {}
    #[doc = include_str!("../../../book/src/runtime.md")]
    mod runtime {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
}
