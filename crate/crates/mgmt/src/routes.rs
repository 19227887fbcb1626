use axum::extract::{FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use lm2m_core::auth::{hash_password, make_user};
use lm2m_core::contracts::{AnomalyRecord, ClientRecord, ContractCall, Role, UserRecord};
use lm2m_core::hash::Hash32;
use lm2m_core::ledger::{now_ms, LedgerError, ReceiptStatus, TxStatus};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::login::{login, LoginError};
use crate::MgmtState;

pub(crate) fn routes(state: MgmtState) -> Router {
    Router::new()
        .route("/mgmt/login", post(do_login))
        .route("/mgmt/devices", get(list_devices).post(add_device))
        .route("/mgmt/devices/{endpoint}", delete(remove_device))
        .route("/mgmt/users", get(list_users).post(add_user))
        .route("/mgmt/users/{username}", put(update_user))
        .route("/mgmt/anomalies", get(list_anomalies).post(add_anomaly))
        .route("/mgmt/tx/{tx_id}", get(tx_status))
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    Unauthenticated,
    InvalidCredentials,
    Forbidden,
    BadRequest(String),
    NotFound,
    Ledger(LedgerError),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::Unauthenticated => (StatusCode::UNAUTHORIZED, "missing or invalid token".to_owned()),
            ApiError::InvalidCredentials => (StatusCode::UNAUTHORIZED, "invalid credentials".to_owned()),
            ApiError::Forbidden => (StatusCode::FORBIDDEN, "role not permitted".to_owned()),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound => (StatusCode::NOT_FOUND, "not found".to_owned()),
            ApiError::Ledger(e) => {
                tracing::error!(error = %e, "ledger error");
                (StatusCode::SERVICE_UNAVAILABLE, "ledger unavailable".to_owned())
            }
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        ApiError::Ledger(e)
    }
}

/// Token holder of a request.
#[derive(Debug, Clone)]
pub struct Caller {
    pub sub: String,
    pub role: Role,
}

impl Caller {
    fn require(&self, allowed: &[Role]) -> Result<(), ApiError> {
        if allowed.contains(&self.role) {
            Ok(())
        } else {
            Err(ApiError::Forbidden)
        }
    }
}

impl FromRequestParts<MgmtState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &MgmtState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthenticated)?;
        let claims = state.tokens.verify(token.trim()).map_err(|_| ApiError::Unauthenticated)?;
        Ok(Caller {
            sub: claims.sub,
            role: claims.role,
        })
    }
}

fn accepted(tx_id: Hash32) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "tx_id": tx_id }))).into_response()
}

fn submit(state: &MgmtState, caller: &Caller, call: ContractCall) -> Result<Response, ApiError> {
    let tx = state.ledger.submit_call(&caller.sub, call)?;
    tracing::info!(caller = %caller.sub, %tx, "transaction submitted");
    Ok(accepted(tx))
}

#[derive(Deserialize)]
struct LoginBody {
    #[serde(alias = "username", alias = "email")]
    wildcard: String,
    password: String,
}

async fn do_login(State(s): State<MgmtState>, Json(body): Json<LoginBody>) -> Result<Response, ApiError> {
    match login(&s.ledger, &s.tokens, s.token_ttl, &body.wildcard, &body.password).await {
        Ok((token, user)) => Ok(Json(json!({
            "token": token,
            "username": user.username,
            "role": user.role,
            "expires_in": s.token_ttl.as_secs(),
        }))
        .into_response()),
        Err(LoginError::InvalidCredentials) => Err(ApiError::InvalidCredentials),
        Err(LoginError::Ledger) => Err(ApiError::Ledger(LedgerError::Timeout)),
    }
}

async fn list_devices(c: Caller, State(s): State<MgmtState>) -> Result<Json<Vec<ClientRecord>>, ApiError> {
    c.require(&[Role::Admin])?;
    let all: Vec<(String, ClientRecord)> = s.ledger.query_as(&ContractCall::get_all_clients()).await?;
    Ok(Json(all.into_iter().map(|(_, r)| r).collect()))
}

async fn add_device(c: Caller, State(s): State<MgmtState>, Json(record): Json<ClientRecord>) -> Result<Response, ApiError> {
    c.require(&[Role::Admin])?;
    record.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    submit(&s, &c, ContractCall::add_client(&record))
}

async fn remove_device(c: Caller, State(s): State<MgmtState>, Path(endpoint): Path<String>) -> Result<Response, ApiError> {
    c.require(&[Role::Admin])?;
    submit(&s, &c, ContractCall::remove_client(&endpoint))
}

#[derive(Serialize)]
struct UserSummary {
    username: String,
    email: String,
    role: Role,
}

async fn list_users(c: Caller, State(s): State<MgmtState>) -> Result<Json<Vec<UserSummary>>, ApiError> {
    c.require(&[Role::Admin])?;
    let all: Vec<(String, UserRecord)> = s.ledger.query_as(&ContractCall::get_all_users()).await?;
    Ok(Json(
        all.into_iter()
            .map(|(_, u)| UserSummary {
                username: u.username,
                email: u.email,
                role: u.role,
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct NewUser {
    username: String,
    email: String,
    password: String,
    role: Role,
}

async fn add_user(c: Caller, State(s): State<MgmtState>, Json(body): Json<NewUser>) -> Result<Response, ApiError> {
    c.require(&[Role::Admin])?;
    if body.password.is_empty() {
        return Err(ApiError::BadRequest("empty password".into()));
    }
    let user = make_user(&body.username, &body.email, &body.password, body.role);
    user.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    submit(&s, &c, ContractCall::add_user(&user))
}

#[derive(Deserialize)]
struct UserPatch {
    email: Option<String>,
    password: Option<String>,
    role: Option<Role>,
}

async fn update_user(
    c: Caller,
    State(s): State<MgmtState>,
    Path(username): Path<String>,
    Json(patch): Json<UserPatch>,
) -> Result<Response, ApiError> {
    c.require(&[Role::Admin])?;
    let current = match s
        .ledger
        .query_as::<UserRecord>(&ContractCall::validate_login(&username))
        .await
    {
        Ok(u) if u.username == username => Some(u),
        Ok(_) => None,
        Err(e) if e.is_not_found() => None,
        Err(e) => return Err(e.into()),
    };
    // an unknown user still goes to the ledger, where the update reverts
    let mut user = current.unwrap_or_else(|| {
        make_user(&username, &username, patch.password.as_deref().unwrap_or_default(), Role::User)
    });
    if let Some(email) = patch.email {
        user.email = email;
    }
    if let Some(role) = patch.role {
        user.role = role;
    }
    if let Some(pw) = patch.password.as_deref() {
        if pw.is_empty() {
            return Err(ApiError::BadRequest("empty password".into()));
        }
        user.salt = lm2m_core::auth::new_salt();
        user.password_hash = hash_password(&user.salt, pw);
    }
    user.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    submit(&s, &c, ContractCall::update_user(&user))
}

async fn list_anomalies(_: Caller, State(s): State<MgmtState>) -> Result<Json<Vec<AnomalyRecord>>, ApiError> {
    Ok(Json(s.ledger.query_as(&ContractCall::get_all_anomalies()).await?))
}

#[derive(Deserialize)]
struct NewAnomaly {
    endpoint: String,
    payload: String,
    timestamp_ms: Option<u64>,
}

async fn add_anomaly(c: Caller, State(s): State<MgmtState>, Json(body): Json<NewAnomaly>) -> Result<Response, ApiError> {
    c.require(&[Role::Admin, Role::Application])?;
    let record = AnomalyRecord {
        timestamp_ms: body.timestamp_ms.filter(|t| *t > 0).unwrap_or_else(now_ms),
        endpoint: body.endpoint,
        payload: body.payload,
    };
    record.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    submit(&s, &c, ContractCall::add_anomaly(&record))
}

async fn tx_status(_: Caller, State(s): State<MgmtState>, Path(tx_id): Path<String>) -> Result<Response, ApiError> {
    let id: Hash32 = tx_id.parse().map_err(|_| ApiError::BadRequest("malformed transaction id".into()))?;
    let status = match s.ledger.receipt(id) {
        Ok(st) => st,
        Err(e) if e.is_not_found() => return Err(ApiError::NotFound),
        Err(e) => return Err(e.into()),
    };
    let r = match status {
        TxStatus::Pending => {
            return Ok((StatusCode::ACCEPTED, Json(json!({ "tx_id": id, "status": "Pending" }))).into_response());
        }
        TxStatus::Mined(r) => r,
    };
    let code = match r.status {
        ReceiptStatus::Applied => StatusCode::OK,
        ReceiptStatus::Reverted | ReceiptStatus::OutOfGas => StatusCode::CONFLICT,
    };
    let body = json!({
        "tx_id": id,
        "status": r.status,
        "block_height": r.block_height,
        "gas_used": r.gas_used,
        "revert_reason": r.revert_reason,
    });
    Ok((code, Json(body)).into_response())
}
