use std::path::Path;
use std::time::Duration;

use lm2m_core::auth::make_user;
use lm2m_core::contracts::{ContractCall, Role};
use lm2m_core::ledger::{Ledger, LedgerError};
use lm2m_core::settings::{Settings, SettingsError};

pub const SEED_CALLER: &str = "seed";

/// First-run administrator credentials.
#[derive(Clone, PartialEq, Eq)]
pub struct SeedAdmin {
    pub username: String,
    pub email: String,
    pub password: String,
}

impl std::fmt::Debug for SeedAdmin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SeedAdmin")
            .field("username", &self.username)
            .field("email", &self.email)
            .finish_non_exhaustive()
    }
}

impl SeedAdmin {
    /// Reads `username`, `email` and `password` from a key=value file.
    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let s = Settings::load(path)?;
        s.check_known(&["username", "email", "password"])?;
        let field = |k: &str| {
            s.get(k)
                .filter(|v| !v.is_empty())
                .map(str::to_owned)
                .ok_or_else(|| SettingsError::Value {
                    key: k.to_owned(),
                    value: String::new(),
                })
        };
        Ok(Self {
            username: field("username")?,
            email: field("email")?,
            password: field("password")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedOutcome {
    Created,
    AlreadySeeded,
}

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error("user store already holds other users; refusing to seed")]
    StoreNotEmpty,
    #[error("seed transaction was not applied: {0}")]
    Rejected(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Creates the first Admin when `UserStore` is empty. Running it again with
/// the same username is a no-op; any other populated store is refused.
pub async fn bootstrap_admin(ledger: &Ledger, seed: &SeedAdmin, timeout: Duration) -> Result<SeedOutcome, SeedError> {
    let users = ledger.get_all_users()?;
    if !users.is_empty() {
        let seeded = users
            .iter()
            .any(|(_, u)| u.username == seed.username && u.role == Role::Admin);
        return if seeded {
            Ok(SeedOutcome::AlreadySeeded)
        } else {
            Err(SeedError::StoreNotEmpty)
        };
    }
    let user = make_user(&seed.username, &seed.email, &seed.password, Role::Admin);
    let tx = ledger.submit_call(SEED_CALLER, ContractCall::add_user(&user))?;
    let receipt = ledger.wait_for_receipt(tx, timeout).await?;
    match receipt.revert_reason {
        None if receipt.status == lm2m_core::ledger::ReceiptStatus::Applied => {
            tracing::info!(username = %seed.username, "seeded administrator");
            Ok(SeedOutcome::Created)
        }
        reason => Err(SeedError::Rejected(
            reason.unwrap_or_else(|| format!("{:?}", receipt.status)),
        )),
    }
}
