use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::canon::{CanonError, Canonical, Decoder, Encoder};

pub const MIN_PSK_LEN: usize = 16;
pub const MAX_PSK_LEN: usize = 64;
pub const MAX_ANOMALY_PAYLOAD: usize = 4096;

/// Credentials and server URIs of one LwM2M client, keyed by endpoint name.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub endpoint: String,
    pub bootstrap_uri: String,
    pub server_uri: String,
    pub bootstrap_psk_identity: String,
    #[serde(with = "hex::serde")]
    pub bootstrap_psk_secret: Vec<u8>,
    pub server_psk_identity: String,
    #[serde(with = "hex::serde")]
    pub server_psk_secret: Vec<u8>,
}

// secrets stay out of logs
impl fmt::Debug for ClientRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientRecord")
            .field("endpoint", &self.endpoint)
            .field("bootstrap_uri", &self.bootstrap_uri)
            .field("server_uri", &self.server_uri)
            .field("bootstrap_psk_identity", &self.bootstrap_psk_identity)
            .field("server_psk_identity", &self.server_psk_identity)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("endpoint must not be empty")]
    EmptyEndpoint,
    #[error("{field} must be {MIN_PSK_LEN}..={MAX_PSK_LEN} bytes, got {len}")]
    SecretLength { field: &'static str, len: usize },
    #[error("{field} is not a scheme://host:port uri: {uri:?}")]
    BadUri { field: &'static str, uri: String },
    #[error("anomaly timestamp must be positive")]
    ZeroTimestamp,
    #[error("anomaly payload must not be empty")]
    EmptyPayload,
    #[error("anomaly payload exceeds {MAX_ANOMALY_PAYLOAD} bytes ({0})")]
    PayloadTooLarge(usize),
    #[error("username must not be empty")]
    EmptyUsername,
    #[error("email must not be empty")]
    EmptyEmail,
}

/// Splits a `scheme://host:port` URI. The port is mandatory.
pub fn parse_uri(uri: &str) -> Option<(String, String, u16)> {
    let url = Url::parse(uri).ok()?;
    let host = url.host_str().filter(|h| !h.is_empty())?.to_owned();
    let port = url.port()?;
    Some((url.scheme().to_owned(), host, port))
}

impl ClientRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.endpoint.is_empty() {
            return Err(RecordError::EmptyEndpoint);
        }
        for (field, secret) in [
            ("bootstrap_psk_secret", &self.bootstrap_psk_secret),
            ("server_psk_secret", &self.server_psk_secret),
        ] {
            if !(MIN_PSK_LEN..=MAX_PSK_LEN).contains(&secret.len()) {
                return Err(RecordError::SecretLength {
                    field,
                    len: secret.len(),
                });
            }
        }
        for (field, uri) in [
            ("bootstrap_uri", &self.bootstrap_uri),
            ("server_uri", &self.server_uri),
        ] {
            if parse_uri(uri).is_none() {
                return Err(RecordError::BadUri {
                    field,
                    uri: uri.clone(),
                });
            }
        }
        Ok(())
    }
}

impl Canonical for ClientRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.endpoint)
            .str(&self.bootstrap_uri)
            .str(&self.server_uri)
            .str(&self.bootstrap_psk_identity)
            .bytes(&self.bootstrap_psk_secret)
            .str(&self.server_psk_identity)
            .bytes(&self.server_psk_secret);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Self {
            endpoint: dec.string()?,
            bootstrap_uri: dec.string()?,
            server_uri: dec.string()?,
            bootstrap_psk_identity: dec.string()?,
            bootstrap_psk_secret: dec.bytes()?.to_vec(),
            server_psk_identity: dec.string()?,
            server_psk_secret: dec.bytes()?.to_vec(),
        })
    }
}

/// A timestamped critical-information entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub timestamp_ms: u64,
    pub endpoint: String,
    pub payload: String,
}

impl AnomalyRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.timestamp_ms == 0 {
            return Err(RecordError::ZeroTimestamp);
        }
        if self.payload.is_empty() {
            return Err(RecordError::EmptyPayload);
        }
        if self.payload.len() > MAX_ANOMALY_PAYLOAD {
            return Err(RecordError::PayloadTooLarge(self.payload.len()));
        }
        Ok(())
    }
}

impl Canonical for AnomalyRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u64(self.timestamp_ms)
            .str(&self.endpoint)
            .str(&self.payload);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Self {
            timestamp_ms: dec.u64()?,
            endpoint: dec.string()?,
            payload: dec.string()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Admin,
    User,
    Application,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Admin, Role::User, Role::Application];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Admin => "Admin",
            Role::User => "User",
            Role::Application => "Application",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Role::Admin => 0,
            Role::User => 1,
            Role::Application => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, CanonError> {
        match tag {
            0 => Ok(Role::Admin),
            1 => Ok(Role::User),
            2 => Ok(Role::Application),
            t => Err(CanonError::BadTag(t, "role")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown role {0:?}")]
pub struct ParseRoleError(pub String);

impl FromStr for Role {
    type Err = ParseRoleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseRoleError(s.to_owned()))
    }
}

/// A UI or API principal. The password is stored only as
/// `SHA-256(salt || password)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub username: String,
    pub email: String,
    #[serde(with = "hex::serde")]
    pub password_hash: [u8; 32],
    #[serde(with = "hex::serde")]
    pub salt: [u8; 16],
    pub role: Role,
}

impl UserRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.username.is_empty() {
            return Err(RecordError::EmptyUsername);
        }
        if self.email.is_empty() {
            return Err(RecordError::EmptyEmail);
        }
        Ok(())
    }
}

impl Canonical for UserRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.username)
            .str(&self.email)
            .raw(&self.password_hash)
            .raw(&self.salt)
            .u8(self.role.tag());
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Self {
            username: dec.string()?,
            email: dec.string()?,
            password_hash: dec.fixed()?,
            salt: dec.fixed()?,
            role: Role::from_tag(dec.u8()?)?,
        })
    }
}
