//! Single-node, hash-chained proof-of-work ledger.
//!
//! One writer mines blocks; any number of threads may submit transactions
//! and run read-only calls concurrently with mining. Reads observe only
//! confirmed state: a block's effects become visible atomically once it is
//! sealed and journaled.
//!
//! ```
//! use lm2m_core::contracts::{ClientRecord, ContractCall};
//! use lm2m_core::ledger::{ChainConfig, Ledger, ReceiptStatus};
//!
//! let ledger = Ledger::in_memory(ChainConfig::instant());
//! let record = ClientRecord {
//!     endpoint: "dev-1".into(),
//!     bootstrap_uri: "coap://127.0.0.1:5783".into(),
//!     server_uri: "coap://127.0.0.1:5683".into(),
//!     bootstrap_psk_identity: "dev-1-bs".into(),
//!     bootstrap_psk_secret: vec![1; 16],
//!     server_psk_identity: "dev-1-dm".into(),
//!     server_psk_secret: vec![2; 16],
//! };
//! let tx_id = ledger.submit_call("admin", ContractCall::add_client(&record)).unwrap();
//! ledger.mine_block().unwrap();
//! let receipt = ledger.receipt(tx_id).unwrap().mined().unwrap();
//! assert_eq!(receipt.status, ReceiptStatus::Applied);
//! assert_eq!(ledger.get_client("dev-1").unwrap(), record);
//! ```

mod block;
mod config;
pub mod journal;
mod replay;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Condvar, Mutex, RwLock};
use tokio::sync::watch;

pub use block::{Block, Receipt, ReceiptStatus, Transaction};
pub use config::{ChainConfig, DEFAULT_GAS_LIMIT, DEFAULT_GAS_PRICE, ENV_PREFIX};
pub use replay::{execute_tx, replay_blocks, BlockFault, ChainVerdict, Replay, Tip};

use crate::canon::{CanonError, Canonical};
use crate::contracts::{
    AnomalyRecord, ClientRecord, ContractCall, ContractError, ContractState, UserRecord,
};
use crate::hash::Hash32;
use journal::Journal;

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("malformed transaction: {0}")]
    MalformedTransaction(&'static str),
    #[error("unknown contract {0:?}")]
    UnknownContract(String),
    #[error("contract error: {0}")]
    Contract(ContractError),
    #[error("not found")]
    NotFound,
    #[error("ledger is a read-only follower")]
    ReadOnly,
    #[error("timed out waiting for receipt")]
    Timeout,
    #[error("journal corrupt at height {height}: {reason}")]
    CorruptJournal { height: u64, reason: String },
    #[error("malformed result: {0}")]
    Decode(#[from] CanonError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ContractError> for LedgerError {
    fn from(e: ContractError) -> Self {
        match e {
            ContractError::UnknownContract(c) => LedgerError::UnknownContract(c),
            other => LedgerError::Contract(other),
        }
    }
}

impl LedgerError {
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            LedgerError::NotFound | LedgerError::Contract(ContractError::NotFound)
        )
    }
}

/// Where a transaction is in its lifecycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxStatus {
    Pending,
    Mined(Receipt),
}

impl TxStatus {
    pub fn mined(self) -> Option<Receipt> {
        match self {
            TxStatus::Mined(r) => Some(r),
            TxStatus::Pending => None,
        }
    }
}

#[derive(Debug, Default)]
struct Confirmed {
    blocks: Vec<Block>,
    replay: Replay,
    receipts: HashMap<Hash32, Receipt>,
    /// Total fee paid per caller, in gwei.
    fees: HashMap<String, u128>,
}

impl Confirmed {
    fn commit(&mut self, block: Block, replay: Replay, receipts: Vec<Receipt>) {
        for (tx, r) in block.txs.iter().zip(&receipts) {
            *self.fees.entry(tx.caller.clone()).or_default() +=
                u128::from(r.gas_used) * u128::from(tx.gas_price);
        }
        self.receipts.extend(receipts.into_iter().map(|r| (r.tx_id, r)));
        self.replay = replay;
        self.blocks.push(block);
    }
}

#[derive(Debug, Default)]
struct Pending {
    txs: Vec<Transaction>,
    /// Queued or currently being mined.
    ids: HashSet<Hash32>,
    /// Highest nonce seen per caller, confirmed or queued.
    nonces: HashMap<String, u64>,
}

enum Mode {
    Memory,
    Writer(Mutex<Journal>),
    Follower { path: PathBuf, offset: Mutex<u64> },
}

pub struct Ledger {
    config: ChainConfig,
    mode: Mode,
    confirmed: RwLock<Confirmed>,
    pending: Mutex<Pending>,
    pending_cv: Condvar,
    mining: Mutex<()>,
    height_tx: watch::Sender<u64>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("config", &self.config)
            .field("blocks", &self.block_count())
            .finish_non_exhaustive()
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Ledger {
    fn with_mode(config: ChainConfig, mode: Mode) -> Self {
        Self {
            config,
            mode,
            confirmed: RwLock::new(Confirmed::default()),
            pending: Mutex::new(Pending::default()),
            pending_cv: Condvar::new(),
            mining: Mutex::new(()),
            height_tx: watch::channel(0).0,
        }
    }

    /// A ledger with no persistence.
    pub fn in_memory(config: ChainConfig) -> Self {
        Self::with_mode(config, Mode::Memory)
    }

    fn load_blocks(&self, bytes: &[u8]) -> Result<usize, LedgerError> {
        let decoded = journal::decode_journal(bytes);
        let mut confirmed = self.confirmed.write();
        let base = confirmed.blocks.len() as u64;
        for block in decoded.blocks {
            let mut replay = confirmed.replay.clone();
            let receipts = replay
                .apply(&block, &self.config)
                .map_err(|f| LedgerError::CorruptJournal {
                    height: block.height,
                    reason: f.to_string(),
                })?;
            confirmed.commit(block, replay, receipts);
        }
        if let Some(Some(e)) = decoded.stopped {
            return Err(LedgerError::CorruptJournal {
                height: confirmed.blocks.len() as u64,
                reason: e.to_string(),
            });
        }
        let nonces = confirmed.replay.nonces.clone();
        let added = confirmed.blocks.len() as u64 - base;
        let height = confirmed.blocks.len() as u64;
        drop(confirmed);
        self.pending.lock().nonces = nonces;
        if added > 0 {
            self.height_tx.send_replace(height);
        }
        Ok(decoded.consumed)
    }

    /// Opens the journal at `path` as the single writer, replaying and
    /// verifying every stored block.
    pub fn open(path: impl AsRef<Path>, config: ChainConfig) -> Result<Self, LedgerError> {
        let (journal, existing) = Journal::open(path)?;
        let ledger = Self::with_mode(config, Mode::Writer(Mutex::new(journal)));
        let consumed = ledger.load_blocks(&existing)?;
        if consumed != existing.len() {
            return Err(LedgerError::CorruptJournal {
                height: ledger.block_count(),
                reason: "truncated trailing frame".into(),
            });
        }
        Ok(ledger)
    }

    /// Opens a read-only view of a journal written by another process. New
    /// blocks are picked up by [`Ledger::refresh`].
    pub fn open_follower(path: impl AsRef<Path>, config: ChainConfig) -> Result<Self, LedgerError> {
        let ledger = Self::with_mode(
            config,
            Mode::Follower {
                path: path.as_ref().to_path_buf(),
                offset: Mutex::new(0),
            },
        );
        ledger.refresh()?;
        Ok(ledger)
    }

    /// Follower: applies blocks appended to the journal since the last
    /// refresh. No-op for other modes.
    pub fn refresh(&self) -> Result<(), LedgerError> {
        let Mode::Follower { path, offset } = &self.mode else {
            return Ok(());
        };
        let mut offset = offset.lock();
        let fresh = journal::read_from(path, *offset)?;
        if fresh.is_empty() {
            return Ok(());
        }
        let consumed = self.load_blocks(&fresh)?;
        *offset += consumed as u64;
        Ok(())
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn is_writer(&self) -> bool {
        !matches!(self.mode, Mode::Follower { .. })
    }

    /// Next nonce the caller should use, counting queued transactions.
    pub fn next_nonce(&self, caller: &str) -> u64 {
        self.pending.lock().nonces.get(caller).copied().unwrap_or(0) + 1
    }

    /// Queues a transaction for the next block.
    pub fn submit_transaction(&self, tx: Transaction) -> Result<Hash32, LedgerError> {
        if !self.is_writer() {
            return Err(LedgerError::ReadOnly);
        }
        let mut pending = self.pending.lock();
        self.enqueue(&mut pending, tx)
    }

    fn enqueue(&self, pending: &mut Pending, tx: Transaction) -> Result<Hash32, LedgerError> {
        if tx.gas_limit == 0 {
            return Err(LedgerError::MalformedTransaction("gas_limit must be positive"));
        }
        if tx.caller.is_empty() {
            return Err(LedgerError::MalformedTransaction("empty caller"));
        }
        if tx.compute_id() != tx.tx_id {
            return Err(LedgerError::MalformedTransaction("tx_id does not match contents"));
        }
        let expected = pending.nonces.get(&tx.caller).copied().unwrap_or(0) + 1;
        // a resubmitted transaction necessarily carries a stale nonce
        if tx.nonce != expected || pending.ids.contains(&tx.tx_id) {
            return Err(LedgerError::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        let id = tx.tx_id;
        pending.nonces.insert(tx.caller.clone(), tx.nonce);
        pending.ids.insert(id);
        pending.txs.push(tx);
        self.pending_cv.notify_all();
        Ok(id)
    }

    /// Builds a transaction with the next nonce and default gas settings and
    /// submits it. Nonce allocation and queueing happen under one lock.
    pub fn submit_call(&self, caller: &str, call: ContractCall) -> Result<Hash32, LedgerError> {
        self.submit_call_with_gas(caller, call, self.config.gas_limit)
    }

    pub fn submit_call_with_gas(
        &self,
        caller: &str,
        call: ContractCall,
        gas_limit: u64,
    ) -> Result<Hash32, LedgerError> {
        if !self.is_writer() {
            return Err(LedgerError::ReadOnly);
        }
        let mut pending = self.pending.lock();
        let nonce = pending.nonces.get(caller).copied().unwrap_or(0) + 1;
        let tx = Transaction::new(call, caller, nonce, gas_limit, self.config.gas_price);
        self.enqueue(&mut pending, tx)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.lock().txs.len()
    }

    /// Mines every queued transaction into one block. Takes at least
    /// `block_interval_ms` of wall time.
    pub fn mine_block(&self) -> Result<Block, LedgerError> {
        if !self.is_writer() {
            return Err(LedgerError::ReadOnly);
        }
        let _writer = self.mining.lock();
        let started = Instant::now();
        let txs = std::mem::take(&mut self.pending.lock().txs);

        let (mut replay, prev_ts) = {
            let c = self.confirmed.read();
            (c.replay.clone(), c.replay.tip.map_or(0, |t| t.timestamp_ms))
        };
        let height = replay.next_height();
        let prev_hash = replay.tip_hash();
        let timestamp_ms = now_ms().max(prev_ts);
        let block = Block::mine(height, prev_hash, timestamp_ms, txs, self.config.difficulty_bits);
        let receipts = replay.apply_unchecked(&block, &self.config);

        let floor = self.config.block_interval();
        let elapsed = started.elapsed();
        if elapsed < floor {
            std::thread::sleep(floor - elapsed);
        }

        if let Mode::Writer(journal) = &self.mode {
            journal.lock().append(&block)?;
        }
        let ids: Vec<Hash32> = block.txs.iter().map(|t| t.tx_id).collect();
        self.confirmed.write().commit(block.clone(), replay, receipts);
        {
            let mut pending = self.pending.lock();
            for id in &ids {
                pending.ids.remove(id);
            }
        }
        self.height_tx.send_replace(height + 1);
        tracing::debug!(height, txs = ids.len(), hash = %block.hash, "mined block");
        Ok(block)
    }

    /// Runs a read-only contract function against confirmed state.
    pub fn call(&self, contract: &str, function: &str, args: &[u8]) -> Result<Vec<u8>, LedgerError> {
        Ok(self.confirmed.read().replay.state.query(contract, function, args)?)
    }

    pub fn call_contract(&self, call: &ContractCall) -> Result<Vec<u8>, LedgerError> {
        self.call(&call.contract, &call.function, &call.args)
    }

    /// Read-only call as seen by a remote service: refreshes a follower,
    /// reads, then waits the round trip plus the response transfer time.
    pub async fn query(&self, call: &ContractCall) -> Result<Vec<u8>, LedgerError> {
        self.refresh()?;
        let out = self.call_contract(call);
        let len = out.as_ref().map_or(0, Vec::len);
        let delay = self.config.query_delay(len);
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        out
    }

    pub async fn query_as<T: Canonical>(&self, call: &ContractCall) -> Result<T, LedgerError> {
        Ok(T::from_canonical(&self.query(call).await?)?)
    }

    fn call_as<T: Canonical>(&self, call: &ContractCall) -> Result<T, LedgerError> {
        Ok(T::from_canonical(&self.call_contract(call)?)?)
    }

    pub fn get_client(&self, endpoint: &str) -> Result<ClientRecord, LedgerError> {
        self.call_as(&ContractCall::get_client(endpoint))
    }

    pub fn get_all_clients(&self) -> Result<Vec<(String, ClientRecord)>, LedgerError> {
        self.call_as(&ContractCall::get_all_clients())
    }

    pub fn get_all_anomalies(&self) -> Result<Vec<AnomalyRecord>, LedgerError> {
        self.call_as(&ContractCall::get_all_anomalies())
    }

    pub fn get_all_users(&self) -> Result<Vec<(String, UserRecord)>, LedgerError> {
        self.call_as(&ContractCall::get_all_users())
    }

    pub fn validate_login(&self, wildcard: &str) -> Result<UserRecord, LedgerError> {
        self.call_as(&ContractCall::validate_login(wildcard))
    }

    /// Looks up a transaction: mined, queued, or unknown.
    pub fn receipt(&self, tx_id: Hash32) -> Result<TxStatus, LedgerError> {
        // pending first: commit publishes the receipt before clearing the id
        if self.pending.lock().ids.contains(&tx_id) {
            return Ok(TxStatus::Pending);
        }
        self.confirmed
            .read()
            .receipts
            .get(&tx_id)
            .cloned()
            .map(TxStatus::Mined)
            .ok_or(LedgerError::NotFound)
    }

    /// Waits until `tx_id` is mined.
    pub async fn wait_for_receipt(&self, tx_id: Hash32, timeout: Duration) -> Result<Receipt, LedgerError> {
        let mut heights = self.height_tx.subscribe();
        let wait = async {
            loop {
                self.refresh()?;
                match self.receipt(tx_id) {
                    Ok(TxStatus::Mined(r)) => return Ok(r),
                    Ok(TxStatus::Pending) => {}
                    Err(LedgerError::NotFound) if !self.is_writer() => {}
                    Err(e) => return Err(e),
                }
                if self.is_writer() {
                    if heights.changed().await.is_err() {
                        return Err(LedgerError::Timeout);
                    }
                } else {
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            }
        };
        tokio::time::timeout(timeout, wait)
            .await
            .map_err(|_| LedgerError::Timeout)?
    }

    /// Height watch: the value is the number of confirmed blocks.
    pub fn subscribe_blocks(&self) -> watch::Receiver<u64> {
        self.height_tx.subscribe()
    }

    pub fn block_count(&self) -> u64 {
        self.confirmed.read().blocks.len() as u64
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.confirmed.read().blocks.clone()
    }

    pub fn tip(&self) -> Option<Tip> {
        self.confirmed.read().replay.tip
    }

    /// Canonical bytes of the confirmed contract state.
    pub fn state_snapshot(&self) -> Vec<u8> {
        self.confirmed.read().replay.state.snapshot()
    }

    pub fn with_state<R>(&self, f: impl FnOnce(&ContractState) -> R) -> R {
        f(&self.confirmed.read().replay.state)
    }

    /// Total fees paid by `caller`, in gwei.
    pub fn fees_paid(&self, caller: &str) -> u128 {
        self.confirmed.read().fees.get(caller).copied().unwrap_or(0)
    }

    /// Checks every block invariant and that replaying from genesis
    /// reproduces the current contract state.
    pub fn verify_chain(&self) -> ChainVerdict {
        let c = self.confirmed.read();
        verify_against(&c.blocks, &self.config, Some(&c.replay.state))
    }

    /// Spawns the background miner: it mines whenever transactions are
    /// queued. Dropping the handle stops it.
    pub fn spawn_miner(self: &Arc<Self>) -> MinerHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let ledger = Arc::clone(self);
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new()
            .name("lm2m-miner".into())
            .spawn(move || loop {
                {
                    let mut pending = ledger.pending.lock();
                    while pending.txs.is_empty() && !flag.load(Ordering::Acquire) {
                        ledger
                            .pending_cv
                            .wait_for(&mut pending, Duration::from_millis(200));
                    }
                }
                if flag.load(Ordering::Acquire) {
                    return;
                }
                if let Err(e) = ledger.mine_block() {
                    tracing::error!(error = %e, "mining failed");
                    std::thread::sleep(Duration::from_millis(100));
                }
            })
            .expect("spawn miner thread");
        MinerHandle {
            stop,
            ledger: Arc::clone(self),
            thread: Some(thread),
        }
    }
}

/// Verifies `blocks` and, when `state` is given, that replay reproduces it.
pub fn verify_against(blocks: &[Block], config: &ChainConfig, state: Option<&ContractState>) -> ChainVerdict {
    match replay_blocks(blocks, config) {
        Err((height, _)) => ChainVerdict::bad(height),
        Ok(replay) => match state {
            Some(s) if replay.state != *s => ChainVerdict::bad(blocks.len().saturating_sub(1) as u64),
            _ if blocks.is_empty() => ChainVerdict::bad(0),
            _ => ChainVerdict::ok(),
        },
    }
}

/// Verifies a raw journal image. A frame that fails to decode is reported at
/// its height.
pub fn verify_journal_bytes(bytes: &[u8], config: &ChainConfig) -> ChainVerdict {
    let decoded = journal::decode_journal(bytes);
    let verdict = verify_against(&decoded.blocks, config, None);
    if !verdict.valid {
        return verdict;
    }
    if decoded.stopped.is_some() {
        return ChainVerdict::bad(decoded.blocks.len() as u64);
    }
    verdict
}

pub struct MinerHandle {
    stop: Arc<AtomicBool>,
    ledger: Arc<Ledger>,
    thread: Option<JoinHandle<()>>,
}

impl MinerHandle {
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.ledger.pending_cv.notify_all();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MinerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
