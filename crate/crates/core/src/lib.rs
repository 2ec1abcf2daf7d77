//! Adaptive discrete sliding-mode control with online prediction and
//! compensation of sampling/quantization error.
//!
//! * [`adc`]: quantizer and per-step measurement uncertainty.
//! * [`dsmc`]: scalar control law, uncertainty propagation, compensated law.
//! * [`adaptation`]: additive/multiplicative estimate updates and a
//!   Lyapunov-difference monitor.
//! * [`engine`]: four-state engine model and the four-loop controller.
//! * [`harness`]: scenarios, runner, metrics and export.

pub mod adaptation;
pub mod adc;
pub mod dsmc;
pub mod engine;
pub mod harness;
