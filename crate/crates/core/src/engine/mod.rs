//! Engine truth model and the four-loop adaptive controller built on it.

pub mod control;
pub mod plant;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::AdaptError;
use crate::adc::AdcError;
use crate::dsmc::DsmcError;

/// One of the four state/input loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopId {
    TExh,
    MdotF,
    OmegaE,
    MA,
}

impl LoopId {
    pub const ALL: [LoopId; 4] = [LoopId::TExh, LoopId::MdotF, LoopId::OmegaE, LoopId::MA];

    /// Speed first: it produces the air-mass reference.
    pub const EXECUTION_ORDER: [LoopId; 4] = [LoopId::OmegaE, LoopId::MA, LoopId::TExh, LoopId::MdotF];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn state_name(self) -> &'static str {
        match self {
            LoopId::TExh => "t_exh",
            LoopId::MdotF => "mdot_f",
            LoopId::OmegaE => "omega_e",
            LoopId::MA => "m_a",
        }
    }

    pub fn control_name(self) -> &'static str {
        match self {
            LoopId::TExh => "delta_spark",
            LoopId::MdotF => "mdot_fc",
            LoopId::OmegaE => "m_a_d",
            LoopId::MA => "mdot_ai",
        }
    }
}

impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.state_name())
    }
}

/// Per-loop container, keyed by state name in config files. Missing keys
/// take the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineLoops<T> {
    #[serde(default)]
    pub t_exh: T,
    #[serde(default)]
    pub mdot_f: T,
    #[serde(default)]
    pub omega_e: T,
    #[serde(default)]
    pub m_a: T,
}

impl<T> EngineLoops<T> {
    pub fn get(&self, id: LoopId) -> &T {
        match id {
            LoopId::TExh => &self.t_exh,
            LoopId::MdotF => &self.mdot_f,
            LoopId::OmegaE => &self.omega_e,
            LoopId::MA => &self.m_a,
        }
    }

    pub fn get_mut(&mut self, id: LoopId) -> &mut T {
        match id {
            LoopId::TExh => &mut self.t_exh,
            LoopId::MdotF => &mut self.mdot_f,
            LoopId::OmegaE => &mut self.omega_e,
            LoopId::MA => &mut self.m_a,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("engine parameter: {0}")]
    Param(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{id} loop: {msg}")]
    Loop { id: LoopId, msg: String },
    #[error("{id} sensor: {source}")]
    Adc { id: LoopId, source: AdcError },
    #[error("{id} loop: {source}")]
    Dsmc { id: LoopId, source: DsmcError },
    #[error("{id} loop: {source}")]
    Adapt { id: LoopId, source: AdaptError },
    #[error("trajectory: {0}")]
    Trajectory(String),
}
