//! Core of a ledger-backed LwM2M device-management suite.
//!
//! - [`ledger`]: an embedded hash-chained, proof-of-work ledger with gas
//!   accounting, receipts, atomic revert and an append-only journal.
//! - [`contracts`]: the `ClientStore`, `AnomalyStore` and `UserStore`
//!   contracts executed by the ledger.
//! - [`wire`]: the mini-CoAP codec, object addressing, the PSK handshake and
//!   the integrity seal used on every device link.
//! - [`auth`]: password hashing and HS256 bearer tokens.
//! - [`directory`]: credential lookup used by the bootstrap and device
//!   management servers, backed by the ledger or by a plain map.

pub mod auth;
pub mod canon;
pub mod contracts;
pub mod directory;
pub mod hash;
pub mod ledger;
pub mod settings;
pub mod wire;

pub use hash::Hash32;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/contracts.md")]
    mod contracts {}
    #[doc = include_str!("../../../book/src/wire.md")]
    mod wire {}
    #[doc = include_str!("../../../book/src/handshake.md")]
    mod handshake {}
    #[doc = include_str!("../../../book/src/tokens.md")]
    mod tokens {}
}
