//! Management service.
//!
//! Every mutation is one ledger transaction: the handler answers
//! `202 Accepted` with the transaction id and the caller polls
//! `GET /mgmt/tx/{id}` until the receipt is in. Reads go to confirmed
//! ledger state; the service keeps nothing of its own.

mod login;
mod routes;
mod seed;

use std::sync::Arc;
use std::time::Duration;

use axum::http::{HeaderValue, Method};
use axum::Router;
use lm2m_core::auth::TokenKey;
use lm2m_core::ledger::Ledger;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use login::{login, LoginError, LOGIN_FLOOR};
pub use routes::{ApiError, Caller};
pub use seed::{bootstrap_admin, SeedAdmin, SeedError, SeedOutcome};

#[derive(Clone)]
pub struct MgmtState {
    pub ledger: Arc<Ledger>,
    pub tokens: TokenKey,
    pub token_ttl: Duration,
}

/// Allowed browser origins for the management UI.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum CorsOrigins {
    #[default]
    Any,
    List(Vec<String>),
}

impl CorsOrigins {
    /// `*` or a comma-separated list of origins.
    pub fn parse(s: &str) -> Self {
        if s.trim() == "*" {
            return CorsOrigins::Any;
        }
        CorsOrigins::List(
            s.split(',')
                .map(|o| o.trim().to_owned())
                .filter(|o| !o.is_empty())
                .collect(),
        )
    }

    fn layer(&self) -> CorsLayer {
        let base = CorsLayer::new()
            .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
            .allow_headers(Any);
        match self {
            CorsOrigins::Any => base.allow_origin(Any),
            CorsOrigins::List(list) => base.allow_origin(AllowOrigin::list(
                list.iter().filter_map(|o| HeaderValue::from_str(o).ok()),
            )),
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/management.md")]
mod book {}

pub fn router(state: MgmtState, cors: &CorsOrigins) -> Router {
    routes::routes(state).layer(cors.layer())
}
