//! Desk-scale laboratory for multi-agent route choice on road networks.
//!
//! The crate bundles a deterministic junction-level traffic simulator, small
//! per-agent policy networks trained with clipped policy optimization, and an
//! instruction pipeline in which a planner (scripted or an HTTP language
//! model endpoint) steers selected agents through a tiny navigation DSL to
//! produce expert demonstrations. Demonstration quality is scored with
//! trajectory analytics (dynamic time warping, reward volatility, policy
//! divergence) and folded back into training through a confidence-weighted
//! hybrid objective.

pub mod config;
pub mod oracle;
pub mod policy;
pub mod roadnet;
pub mod run;
pub mod sed;
pub mod trainer;
pub mod trajectory;
