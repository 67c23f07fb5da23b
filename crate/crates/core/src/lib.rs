//! Allocation-only core of the action library.
//!
//! Everything in here is pure data and arithmetic: the portable action
//! language ([`dsl`]), its well-formedness rules ([`validate`]), slot
//! substitution ([`params`]), structural signatures ([`signature`]), the
//! parameterization completeness check ([`synth`]), staleness bookkeeping
//! ([`staleness`]), and the evaluation arithmetic ([`metrics`], [`tokens`]).
//! IO, HTML, HTTP and the simulator live in the `actlib` companion crate.

#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod dsl;
pub mod metrics;
pub mod params;
pub mod signature;
pub mod staleness;
pub mod synth;
pub mod tokens;
pub mod validate;

pub use dsl::{
    ActionApi, ActionScript, ActionStep, Locator, LocatorChain, ParamSpec, StepKind, Strategy, ValueExpr, ValueType,
};
pub use params::{substitute_params, Bindings, SubstituteError};
pub use signature::{script_signature, Signature};
pub use validate::{validate_api, validate_script, Rule, ValidationReport, Violation};

/// Current version of every serialized document produced by this crate family.
pub const SCHEMA_VERSION: u32 = 1;
