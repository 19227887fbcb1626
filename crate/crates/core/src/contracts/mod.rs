//! The three contracts: `ClientStore`, `AnomalyStore` and `UserStore`.
//!
//! State-changing functions run inside ledger transactions and either
//! complete or revert with no state delta. Every mutating function checks all
//! preconditions and charges all gas before it touches state, so a revert or an
//! out-of-gas condition can never leave a partial write behind. Getters are
//! read-only calls that surface failures as [`ContractError`] instead.

mod anomaly_store;
mod client_store;
pub mod records;
mod user_store;

use crate::canon::{CanonError, Canonical, Decoder, Encoder};

pub use anomaly_store::AnomalyStore;
pub use client_store::ClientStore;
pub use records::{AnomalyRecord, ClientRecord, RecordError, Role, UserRecord};
pub use user_store::UserStore;

pub const CLIENT_STORE: &str = "ClientStore";
pub const ANOMALY_STORE: &str = "AnomalyStore";
pub const USER_STORE: &str = "UserStore";

/// Errors surfaced by read-only calls.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("not found")]
    NotFound,
    #[error("unknown contract {0:?}")]
    UnknownContract(String),
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("malformed arguments: {0}")]
    BadArgs(#[from] CanonError),
}

/// Why a transaction did not apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Abort {
    Revert(String),
    OutOfGas,
}

impl Abort {
    pub(crate) fn revert(reason: impl Into<String>) -> Self {
        Abort::Revert(reason.into())
    }
}

/// Decodes transaction arguments; malformed input reverts.
pub(crate) fn decode_args<T>(
    args: &[u8],
    read: impl FnOnce(&mut Decoder<'_>) -> Result<T, CanonError>,
) -> Result<T, Abort> {
    let mut dec = Decoder::new(args);
    read(&mut dec)
        .and_then(|v| dec.finish().map(|()| v))
        .map_err(|_| Abort::revert("malformed arguments"))
}

/// Gas prices applied during transaction execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GasSchedule {
    pub base: u64,
    pub per_stored_byte: u64,
    pub per_read_byte: u64,
}

/// Tracks gas spent by one transaction against its limit.
#[derive(Debug, Clone)]
pub struct GasMeter {
    schedule: GasSchedule,
    limit: u64,
    used: u64,
}

impl GasMeter {
    pub fn new(schedule: GasSchedule, limit: u64) -> Self {
        Self {
            schedule,
            limit,
            used: 0,
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    fn charge(&mut self, amount: u64) -> Result<(), Abort> {
        match self.used.checked_add(amount) {
            Some(total) if total <= self.limit => {
                self.used = total;
                Ok(())
            }
            _ => Err(Abort::OutOfGas),
        }
    }

    pub(crate) fn charge_base(&mut self) -> Result<(), Abort> {
        self.charge(self.schedule.base)
    }

    pub(crate) fn charge_read(&mut self, bytes: usize) -> Result<(), Abort> {
        self.charge(self.schedule.per_read_byte.saturating_mul(bytes as u64))
    }

    pub(crate) fn charge_store(&mut self, bytes: usize) -> Result<(), Abort> {
        self.charge(self.schedule.per_stored_byte.saturating_mul(bytes as u64))
    }
}

/// A contract function plus its canonically encoded arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractCall {
    pub contract: String,
    pub function: String,
    pub args: Vec<u8>,
}

impl ContractCall {
    pub fn new(contract: &str, function: &str, args: Vec<u8>) -> Self {
        Self {
            contract: contract.to_owned(),
            function: function.to_owned(),
            args,
        }
    }

    fn with(contract: &str, function: &str, build: impl FnOnce(&mut Encoder)) -> Self {
        let mut enc = Encoder::new();
        build(&mut enc);
        Self::new(contract, function, enc.finish())
    }

    pub fn add_client(record: &ClientRecord) -> Self {
        Self::with(CLIENT_STORE, "addClient", |e| {
            e.str(&record.endpoint);
            record.encode_into(e);
        })
    }

    pub fn get_client(endpoint: &str) -> Self {
        Self::with(CLIENT_STORE, "getClient", |e| {
            e.str(endpoint);
        })
    }

    pub fn get_all_clients() -> Self {
        Self::new(CLIENT_STORE, "getAllClients", Vec::new())
    }

    pub fn remove_client(endpoint: &str) -> Self {
        Self::with(CLIENT_STORE, "removeClient", |e| {
            e.str(endpoint);
        })
    }

    pub fn add_anomaly(anomaly: &AnomalyRecord) -> Self {
        Self::with(ANOMALY_STORE, "addAnomaly", |e| anomaly.encode_into(e))
    }

    pub fn get_all_anomalies() -> Self {
        Self::new(ANOMALY_STORE, "getAllAnomalies", Vec::new())
    }

    pub fn add_user(user: &UserRecord) -> Self {
        Self::with(USER_STORE, "addUser", |e| {
            e.str(&user.username);
            user.encode_into(e);
        })
    }

    pub fn update_user(user: &UserRecord) -> Self {
        Self::with(USER_STORE, "updateUser", |e| {
            e.str(&user.username);
            user.encode_into(e);
        })
    }

    pub fn get_all_users() -> Self {
        Self::new(USER_STORE, "getAllUsers", Vec::new())
    }

    pub fn validate_login(wildcard: &str) -> Self {
        Self::with(USER_STORE, "validateLogin", |e| {
            e.str(wildcard);
        })
    }
}

/// Combined storage of all three contracts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContractState {
    pub clients: ClientStore,
    pub anomalies: AnomalyStore,
    pub users: UserStore,
}

impl ContractState {
    /// Runs a state-changing function. On `Err` the state is untouched.
    pub fn execute(
        &mut self,
        contract: &str,
        function: &str,
        args: &[u8],
        gas: &mut GasMeter,
    ) -> Result<(), Abort> {
        gas.charge_base()?;
        match contract {
            CLIENT_STORE => self.clients.execute(function, args, gas),
            ANOMALY_STORE => self.anomalies.execute(function, args, gas),
            USER_STORE => self.users.execute(function, args, gas),
            _ => Err(Abort::revert("unknown contract")),
        }
    }

    /// Runs a read-only function and returns its canonically encoded result.
    pub fn query(&self, contract: &str, function: &str, args: &[u8]) -> Result<Vec<u8>, ContractError> {
        match contract {
            CLIENT_STORE => self.clients.query(function, args),
            ANOMALY_STORE => self.anomalies.query(function, args),
            USER_STORE => self.users.query(function, args),
            other => Err(ContractError::UnknownContract(other.to_owned())),
        }
    }

    /// Canonical snapshot of the full state, used for byte-level comparison.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.clients.entries().encode_into(&mut enc);
        self.anomalies.all().to_vec().encode_into(&mut enc);
        self.users.entries().encode_into(&mut enc);
        enc.finish()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn client(ep: &str) -> ClientRecord {
        ClientRecord {
            endpoint: ep.into(),
            bootstrap_uri: "coap://127.0.0.1:5783".into(),
            server_uri: "coap://127.0.0.1:5683".into(),
            bootstrap_psk_identity: format!("{ep}-bs"),
            bootstrap_psk_secret: vec![0x11; 16],
            server_psk_identity: format!("{ep}-dm"),
            server_psk_secret: vec![0x22; 32],
        }
    }

    pub fn user(name: &str, email: &str, role: Role) -> UserRecord {
        UserRecord {
            username: name.into(),
            email: email.into(),
            password_hash: [7; 32],
            salt: [3; 16],
            role,
        }
    }

    pub fn schedule() -> GasSchedule {
        GasSchedule {
            base: 21_000,
            per_stored_byte: 625,
            per_read_byte: 3,
        }
    }

    pub fn meter() -> GasMeter {
        GasMeter::new(schedule(), 4_712_388)
    }
}
