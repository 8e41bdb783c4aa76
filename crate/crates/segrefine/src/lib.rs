//! File formats, batch pipeline and command-line plumbing around
//! [`segrefine_core`].

pub mod bundle;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod stages;
