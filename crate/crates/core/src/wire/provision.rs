use std::fmt;
use std::io;
use std::net::SocketAddr;

use crate::canon::{CanonError, Canonical, Decoder, Encoder};
use crate::contracts::records::parse_uri;
use crate::contracts::ClientRecord;

/// Device-management server coordinates handed out by the bootstrap server.
#[derive(Clone, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub server_uri: String,
    pub server_psk_identity: String,
    pub server_psk_secret: Vec<u8>,
}

impl fmt::Debug for BootstrapConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BootstrapConfig")
            .field("server_uri", &self.server_uri)
            .field("server_psk_identity", &self.server_psk_identity)
            .finish_non_exhaustive()
    }
}

impl From<&ClientRecord> for BootstrapConfig {
    fn from(r: &ClientRecord) -> Self {
        Self {
            server_uri: r.server_uri.clone(),
            server_psk_identity: r.server_psk_identity.clone(),
            server_psk_secret: r.server_psk_secret.clone(),
        }
    }
}

impl Canonical for BootstrapConfig {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.server_uri)
            .str(&self.server_psk_identity)
            .bytes(&self.server_psk_secret);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Self {
            server_uri: dec.string()?,
            server_psk_identity: dec.string()?,
            server_psk_secret: dec.bytes()?.to_vec(),
        })
    }
}

/// Resolves `coap://host:port` to a socket address.
pub async fn resolve_uri(uri: &str) -> io::Result<SocketAddr> {
    let (_, host, port) = parse_uri(uri)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("bad uri {uri:?}")))?;
    let host = host.trim_start_matches('[').trim_end_matches(']').to_owned();
    let mut addrs = tokio::net::lookup_host((host.as_str(), port)).await?;
    addrs
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no address for {uri:?}")))
}
