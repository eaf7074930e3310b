//! Compile-and-execute web automation.
//!
//! A page is sanitized into a compact skeleton ([`dom`]), compiled once into
//! a blueprint by a model ([`gateway`]), reviewed by a human ([`hitl`]), and
//! then executed any number of times by the zero-inference interpreter from
//! `agentc-core` against a simulated ([`fixture`]) or real ([`cdp`]) browser.
//! When a run halts, [`replan`] heals the one broken selector and resumes.

pub mod cdp;
pub mod dom;
pub mod fixture;
pub mod gateway;
pub mod hitl;
pub mod replan;
