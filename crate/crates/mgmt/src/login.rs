use std::sync::OnceLock;
use std::time::Duration;

use lm2m_core::auth::{make_user, verify_password, TokenKey};
use lm2m_core::contracts::{ContractCall, Role, UserRecord};
use lm2m_core::ledger::Ledger;
use tokio::time::Instant;

/// Every login attempt takes at least this long.
pub const LOGIN_FLOOR: Duration = Duration::from_millis(20);

// hashed against on the unknown-user path so both paths do the same work
fn dummy() -> &'static UserRecord {
    static DUMMY: OnceLock<UserRecord> = OnceLock::new();
    DUMMY.get_or_init(|| make_user("-", "-", "dummy-password", Role::User))
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LoginError {
    #[error("invalid credentials")]
    InvalidCredentials,
    #[error("ledger unavailable")]
    Ledger,
}

/// Validates `wildcard` (username or email) and `password` against
/// `UserStore` and issues a token carrying the stored role.
pub async fn login(
    ledger: &Ledger,
    tokens: &TokenKey,
    ttl: Duration,
    wildcard: &str,
    password: &str,
) -> Result<(String, UserRecord), LoginError> {
    let started = Instant::now();
    let found = match ledger
        .query_as::<UserRecord>(&ContractCall::validate_login(wildcard))
        .await
    {
        Ok(u) => Some(u),
        Err(e) if e.is_not_found() => None,
        Err(e) => {
            tracing::error!(error = %e, "validateLogin failed");
            tokio::time::sleep_until(started + LOGIN_FLOOR).await;
            return Err(LoginError::Ledger);
        }
    };
    let verified = match found {
        Some(u) if verify_password(&u, password) => Some(u),
        Some(_) => None,
        None => {
            verify_password(dummy(), password);
            None
        }
    };
    tokio::time::sleep_until(started + LOGIN_FLOOR).await;
    let user = verified.ok_or(LoginError::InvalidCredentials)?;
    let token = tokens.issue(&user.username, user.role, ttl);
    Ok((token, user))
}
