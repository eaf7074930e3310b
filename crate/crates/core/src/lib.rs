//! Core of the compile-and-execute toolkit.
//!
//! Everything here is a pure function of its inputs and only needs `alloc`:
//! the blueprint intermediate representation, the inference cost model, the
//! review state machine, and the deterministic interpreter that drives any
//! [`engine::BrowserBackend`]. IO, parsing of HTML, HTTP and the CLI live in
//! the `agentc` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod blueprint;
pub mod cost;
pub mod engine;
pub mod review;

pub use blueprint::{
    apply_patch, serialize, structural_fingerprint, validate, Blueprint, Fingerprint, SelectorPatch, SelectorSpec,
    Step, ValidationError,
};
pub use cost::{account_cost, CostModelParams, Price};
pub use engine::{BrowserBackend, Engine, HaltReport, RunOutcome, RunPolicy};
