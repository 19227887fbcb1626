use std::path::Path;
use std::time::Duration;

use crate::contracts::GasSchedule;
use crate::settings::{Settings, SettingsError};

pub const ENV_PREFIX: &str = "LM2M_CHAIN_";

/// Default transaction gas limit.
pub const DEFAULT_GAS_LIMIT: u64 = 4_712_388;
/// Default gas price, in gwei per gas unit.
pub const DEFAULT_GAS_PRICE: u64 = 40;

const KEYS: &[&str] = &[
    "profile",
    "difficulty_bits",
    "block_interval_ms",
    "gas_base",
    "gas_per_stored_byte",
    "gas_per_read_byte",
    "call_latency_ms",
    "call_bytes_per_ms",
    "gas_limit",
    "gas_price",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainConfig {
    /// Leading zero bits required of every block hash (at most 32).
    pub difficulty_bits: u32,
    /// Minimum wall time of one `mine_block`, modelling confirmation latency.
    pub block_interval_ms: u64,
    pub gas_base: u64,
    pub gas_per_stored_byte: u64,
    pub gas_per_read_byte: u64,
    /// Delay applied to asynchronous read queries, modelling the round trip to
    /// a remote node.
    pub call_latency_ms: u64,
    /// Response transfer rate of read queries; 0 means unlimited.
    pub call_bytes_per_ms: u64,
    pub gas_limit: u64,
    pub gas_price: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ChainConfig {
    pub fn desk() -> Self {
        Self {
            difficulty_bits: 12,
            block_interval_ms: 500,
            gas_base: 21_000,
            gas_per_stored_byte: 625,
            gas_per_read_byte: 3,
            call_latency_ms: 1,
            call_bytes_per_ms: 10_000,
            gas_limit: DEFAULT_GAS_LIMIT,
            gas_price: DEFAULT_GAS_PRICE,
        }
    }

    /// Public-chain confirmation times of roughly half a minute.
    pub fn paper_emulation() -> Self {
        Self {
            block_interval_ms: 30_000,
            ..Self::desk()
        }
    }

    /// Fast settings for unit tests.
    pub fn instant() -> Self {
        Self {
            difficulty_bits: 4,
            block_interval_ms: 0,
            call_latency_ms: 0,
            call_bytes_per_ms: 0,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper-emulation" | "paper_emulation" => Some(Self::paper_emulation()),
            "instant" => Some(Self::instant()),
            _ => None,
        }
    }

    pub fn gas_schedule(&self) -> GasSchedule {
        GasSchedule {
            base: self.gas_base,
            per_stored_byte: self.gas_per_stored_byte,
            per_read_byte: self.gas_per_read_byte,
        }
    }

    pub fn block_interval(&self) -> Duration {
        Duration::from_millis(self.block_interval_ms)
    }

    pub fn call_latency(&self) -> Duration {
        Duration::from_millis(self.call_latency_ms)
    }

    /// Round trip plus transfer time of a `len`-byte query response.
    pub fn query_delay(&self, len: usize) -> Duration {
        let transfer = match self.call_bytes_per_ms {
            0 => Duration::ZERO,
            rate => Duration::from_micros(len as u64 * 1000 / rate),
        };
        self.call_latency() + transfer
    }

    /// Builds a config from settings. `profile` selects the base values and
    /// every other key overrides one field.
    pub fn from_settings(s: &Settings) -> Result<Self, SettingsError> {
        s.check_known(KEYS)?;
        let mut cfg = match s.get("profile") {
            None => Self::desk(),
            Some(p) => Self::profile(p).ok_or_else(|| SettingsError::Value {
                key: "profile".into(),
                value: p.into(),
            })?,
        };
        if let Some(v) = s.get_parsed("difficulty_bits")? {
            cfg.difficulty_bits = v;
        }
        let fields: [(&str, &mut u64); 8] = [
            ("block_interval_ms", &mut cfg.block_interval_ms),
            ("gas_base", &mut cfg.gas_base),
            ("gas_per_stored_byte", &mut cfg.gas_per_stored_byte),
            ("gas_per_read_byte", &mut cfg.gas_per_read_byte),
            ("call_latency_ms", &mut cfg.call_latency_ms),
            ("call_bytes_per_ms", &mut cfg.call_bytes_per_ms),
            ("gas_limit", &mut cfg.gas_limit),
            ("gas_price", &mut cfg.gas_price),
        ];
        for (key, slot) in fields {
            if let Some(v) = s.get_parsed(key)? {
                *slot = v;
            }
        }
        if cfg.difficulty_bits > 32 {
            return Err(SettingsError::Value {
                key: "difficulty_bits".into(),
                value: cfg.difficulty_bits.to_string(),
            });
        }
        if cfg.gas_limit == 0 {
            return Err(SettingsError::Value {
                key: "gas_limit".into(),
                value: "0".into(),
            });
        }
        Ok(cfg)
    }

    /// Reads an optional config file, then applies `LM2M_CHAIN_*` variables.
    pub fn load(path: Option<&Path>) -> Result<Self, SettingsError> {
        let base = match path {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        Self::from_settings(&base.with_env(ENV_PREFIX, KEYS))
    }
}
