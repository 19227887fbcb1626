use std::collections::HashMap;

use super::block::{Block, Receipt, ReceiptStatus, Transaction};
use super::config::ChainConfig;
use crate::contracts::{Abort, ContractState, GasMeter};
use crate::hash::Hash32;

/// Why a block fails validation against its predecessor.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockFault {
    #[error("height {found}, expected {expected}")]
    Height { expected: u64, found: u64 },
    #[error("prev_hash does not match predecessor")]
    PrevLink,
    #[error("stored hash does not match contents")]
    HashMismatch,
    #[error("hash has fewer than {0} leading zero bits")]
    Difficulty(u32),
    #[error("timestamp earlier than predecessor")]
    Timestamp,
    #[error("transaction {0} id does not recompute")]
    TxId(usize),
    #[error("transaction {0} has gas_limit 0")]
    ZeroGas(usize),
    #[error("transaction {0} nonce out of sequence")]
    Nonce(usize),
}

/// Runs one transaction against `state`. A non-applied outcome leaves
/// `state` untouched.
pub fn execute_tx(state: &mut ContractState, tx: &Transaction, height: u64, config: &ChainConfig) -> Receipt {
    let mut gas = GasMeter::new(config.gas_schedule(), tx.gas_limit);
    let (status, gas_used, revert_reason) =
        match state.execute(&tx.contract, &tx.function, &tx.args, &mut gas) {
            Ok(()) => (ReceiptStatus::Applied, gas.used(), None),
            Err(Abort::Revert(reason)) => (ReceiptStatus::Reverted, gas.used(), Some(reason)),
            Err(Abort::OutOfGas) => (ReceiptStatus::OutOfGas, tx.gas_limit, None),
        };
    Receipt {
        tx_id: tx.tx_id,
        status,
        gas_used,
        block_height: height,
        revert_reason,
    }
}

/// Confirmed chain state built by applying blocks in order.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    pub state: ContractState,
    pub nonces: HashMap<String, u64>,
    pub tip: Option<Tip>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tip {
    pub height: u64,
    pub hash: Hash32,
    pub timestamp_ms: u64,
}

impl Replay {
    pub fn next_height(&self) -> u64 {
        self.tip.map_or(0, |t| t.height + 1)
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.tip.map_or(Hash32::ZERO, |t| t.hash)
    }

    pub fn last_nonce(&self, caller: &str) -> u64 {
        self.nonces.get(caller).copied().unwrap_or(0)
    }

    /// Checks every block invariant against the current tip without
    /// executing anything.
    pub fn check(&self, block: &Block, config: &ChainConfig) -> Result<(), BlockFault> {
        let expected = self.next_height();
        if block.height != expected {
            return Err(BlockFault::Height {
                expected,
                found: block.height,
            });
        }
        if block.prev_hash != self.tip_hash() {
            return Err(BlockFault::PrevLink);
        }
        if block.compute_hash() != block.hash {
            return Err(BlockFault::HashMismatch);
        }
        if block.hash.leading_zero_bits() < config.difficulty_bits {
            return Err(BlockFault::Difficulty(config.difficulty_bits));
        }
        if let Some(tip) = self.tip {
            if block.timestamp_ms < tip.timestamp_ms {
                return Err(BlockFault::Timestamp);
            }
        }
        let mut nonces: HashMap<&str, u64> = HashMap::new();
        for (i, tx) in block.txs.iter().enumerate() {
            if tx.compute_id() != tx.tx_id {
                return Err(BlockFault::TxId(i));
            }
            if tx.gas_limit == 0 {
                return Err(BlockFault::ZeroGas(i));
            }
            let last = nonces
                .get(tx.caller.as_str())
                .copied()
                .unwrap_or_else(|| self.last_nonce(&tx.caller));
            if tx.nonce != last + 1 {
                return Err(BlockFault::Nonce(i));
            }
            nonces.insert(&tx.caller, tx.nonce);
        }
        Ok(())
    }

    /// Validates and executes `block`, returning one receipt per transaction.
    pub fn apply(&mut self, block: &Block, config: &ChainConfig) -> Result<Vec<Receipt>, BlockFault> {
        self.check(block, config)?;
        Ok(self.apply_unchecked(block, config))
    }

    pub(crate) fn apply_unchecked(&mut self, block: &Block, config: &ChainConfig) -> Vec<Receipt> {
        let receipts = block
            .txs
            .iter()
            .map(|tx| {
                self.nonces.insert(tx.caller.clone(), tx.nonce);
                execute_tx(&mut self.state, tx, block.height, config)
            })
            .collect();
        self.tip = Some(Tip {
            height: block.height,
            hash: block.hash,
            timestamp_ms: block.timestamp_ms,
        });
        receipts
    }
}

/// Result of a full chain verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainVerdict {
    pub valid: bool,
    pub first_bad_height: Option<u64>,
}

impl ChainVerdict {
    pub fn ok() -> Self {
        Self {
            valid: true,
            first_bad_height: None,
        }
    }

    pub fn bad(height: u64) -> Self {
        Self {
            valid: false,
            first_bad_height: Some(height),
        }
    }
}

/// Replays `blocks` from genesis. Returns the rebuilt state or the first
/// height whose block is invalid.
pub fn replay_blocks(blocks: &[Block], config: &ChainConfig) -> Result<Replay, (u64, BlockFault)> {
    let mut replay = Replay::default();
    for (i, block) in blocks.iter().enumerate() {
        replay.apply(block, config).map_err(|f| (i as u64, f))?;
    }
    Ok(replay)
}
