use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canon::{CanonError, Canonical, Decoder, Encoder};
use crate::contracts::ContractCall;
use crate::hash::Hash32;

/// One signed-off unit of state change, addressed to a contract function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Hash32,
    pub contract: String,
    pub function: String,
    pub args: Vec<u8>,
    pub caller: String,
    pub gas_limit: u64,
    pub gas_price: u64,
    pub nonce: u64,
}

impl Transaction {
    pub fn new(call: ContractCall, caller: &str, nonce: u64, gas_limit: u64, gas_price: u64) -> Self {
        let mut tx = Self {
            tx_id: Hash32::ZERO,
            contract: call.contract,
            function: call.function,
            args: call.args,
            caller: caller.to_owned(),
            gas_limit,
            gas_price,
            nonce,
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.str(&self.contract)
            .str(&self.function)
            .bytes(&self.args)
            .str(&self.caller)
            .u64(self.gas_limit)
            .u64(self.gas_price)
            .u64(self.nonce);
    }

    /// Digest of the canonical serialization without the id field.
    pub fn compute_id(&self) -> Hash32 {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        Hash32::digest(&enc.finish())
    }
}

impl Canonical for Transaction {
    fn encode_into(&self, enc: &mut Encoder) {
        self.tx_id.encode_into(enc);
        self.encode_body(enc);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Self {
            tx_id: Hash32::decode_from(dec)?,
            contract: dec.string()?,
            function: dec.string()?,
            args: dec.bytes()?.to_vec(),
            caller: dec.string()?,
            gas_limit: dec.u64()?,
            gas_price: dec.u64()?,
            nonce: dec.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub timestamp_ms: u64,
    pub txs: Vec<Transaction>,
    pub pow_nonce: u64,
    pub hash: Hash32,
}

impl Block {
    /// Everything the hash covers except the trailing proof-of-work nonce.
    fn hash_prefix(height: u64, prev_hash: &Hash32, timestamp_ms: u64, txs: &[Transaction]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(height);
        prev_hash.encode_into(&mut enc);
        enc.u64(timestamp_ms);
        enc.u32(txs.len() as u32);
        for tx in txs {
            tx.encode_into(&mut enc);
        }
        enc.finish()
    }

    /// SHA-256 over `(height, prev_hash, timestamp_ms, txs, pow_nonce)`.
    pub fn compute_hash(&self) -> Hash32 {
        let mut h = Sha256::new();
        h.update(Self::hash_prefix(self.height, &self.prev_hash, self.timestamp_ms, &self.txs));
        h.update(self.pow_nonce.to_be_bytes());
        Hash32(h.finalize().into())
    }

    /// Searches nonces from zero until the hash has `difficulty_bits`
    /// leading zero bits.
    pub fn mine(
        height: u64,
        prev_hash: Hash32,
        timestamp_ms: u64,
        txs: Vec<Transaction>,
        difficulty_bits: u32,
    ) -> Self {
        let mut block = Self {
            height,
            prev_hash,
            timestamp_ms,
            txs,
            pow_nonce: 0,
            hash: Hash32::ZERO,
        };
        block.reseal(difficulty_bits);
        block
    }

    /// Recomputes the proof of work for the current contents.
    pub fn reseal(&mut self, difficulty_bits: u32) {
        // the nonce is the last hashed field, so the prefix state is reusable
        let mut midstate = Sha256::new();
        midstate.update(Self::hash_prefix(self.height, &self.prev_hash, self.timestamp_ms, &self.txs));
        for nonce in 0u64.. {
            let mut h = midstate.clone();
            h.update(nonce.to_be_bytes());
            let hash = Hash32(h.finalize().into());
            if hash.leading_zero_bits() >= difficulty_bits {
                self.pow_nonce = nonce;
                self.hash = hash;
                return;
            }
        }
    }
}

/// Journal form: the hashed fields followed by the stored hash.
impl Canonical for Block {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.raw(&Self::hash_prefix(self.height, &self.prev_hash, self.timestamp_ms, &self.txs));
        enc.u64(self.pow_nonce);
        self.hash.encode_into(enc);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Self {
            height: dec.u64()?,
            prev_hash: Hash32::decode_from(dec)?,
            timestamp_ms: dec.u64()?,
            txs: Vec::decode_from(dec)?,
            pow_nonce: dec.u64()?,
            hash: Hash32::decode_from(dec)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceiptStatus {
    Applied,
    Reverted,
    OutOfGas,
}

/// Outcome of a mined transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: Hash32,
    pub status: ReceiptStatus,
    pub gas_used: u64,
    pub block_height: u64,
    pub revert_reason: Option<String>,
}
