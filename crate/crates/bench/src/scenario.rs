use std::fmt;
use std::str::FromStr;

use lm2m_core::ledger::ChainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioName {
    /// Bootstrap plus registration of one device with `size` records stored.
    RegisterVsStored,
    /// Confirmation latency of alternating addClient and removeClient.
    ClientAddRemove,
    /// Successful login with `size` users stored.
    LoginVsUsers,
    /// Reading every anomaly with `size` stored.
    AnomalyQueryVsCount,
    /// Confirmation latency of addAnomaly with `size` stored.
    AnomalyAdd,
    /// `RegisterVsStored` against a plain in-memory map.
    InMemoryBaseline,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::RegisterVsStored,
        ScenarioName::ClientAddRemove,
        ScenarioName::LoginVsUsers,
        ScenarioName::AnomalyQueryVsCount,
        ScenarioName::AnomalyAdd,
        ScenarioName::InMemoryBaseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::RegisterVsStored => "RegisterVsStored",
            ScenarioName::ClientAddRemove => "ClientAddRemove",
            ScenarioName::LoginVsUsers => "LoginVsUsers",
            ScenarioName::AnomalyQueryVsCount => "AnomalyQueryVsCount",
            ScenarioName::AnomalyAdd => "AnomalyAdd",
            ScenarioName::InMemoryBaseline => "InMemoryBaseline",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScenarioError::UnknownScenario(s.to_owned()))
    }
}

/// Chain timing used while measuring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    PaperEmulation,
}

impl Profile {
    pub fn chain_config(self) -> ChainConfig {
        match self {
            Profile::Desk => ChainConfig::desk(),
            Profile::PaperEmulation => ChainConfig::paper_emulation(),
        }
    }
}

impl FromStr for Profile {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "desk" => Ok(Profile::Desk),
            "paper-emulation" => Ok(Profile::PaperEmulation),
            _ => Err(ScenarioError::UnknownProfile(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown chain profile {0:?}")]
    UnknownProfile(String),
    #[error("sizes must be non-empty and strictly ascending")]
    BadSizes,
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchScenario {
    pub name: ScenarioName,
    pub sizes: Vec<u64>,
    pub repetitions: u32,
    pub profile: Profile,
}

impl BenchScenario {
    pub const DEFAULT_REPETITIONS: u32 = 100;

    pub fn new(name: ScenarioName, sizes: Vec<u64>, repetitions: u32, profile: Profile) -> Result<Self, ScenarioError> {
        if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScenarioError::BadSizes);
        }
        if repetitions == 0 {
            return Err(ScenarioError::NoRepetitions);
        }
        Ok(Self {
            name,
            sizes,
            repetitions,
            profile,
        })
    }
}

/// Parses `100,200,300`.
pub fn parse_sizes(s: &str) -> Result<Vec<u64>, ScenarioError> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| ScenarioError::BadSizes))
        .collect()
}
