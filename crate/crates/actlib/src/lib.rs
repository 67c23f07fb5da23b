//! Action-library runtime: HTML distillation, script generation, a site
//! simulator and WebDriver executor, the persistent library and the CLI.

pub mod cli;
pub mod distill;
pub mod evalkit;
pub mod executor;
pub mod gateway;
pub mod generation;
pub mod html;
pub mod library;
pub mod pipeline;
pub mod runtime;
pub mod sim;
pub mod webdriver;
