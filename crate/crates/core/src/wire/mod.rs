//! Mini-CoAP over UDP with PSK authentication.
//!
//! Each datagram carries one fixed-layout [`Message`]. Instead of DTLS, peers
//! run a three-message PSK handshake and then append an 8-byte HMAC tag to
//! every datagram. This gives integrity and peer authentication but no
//! confidentiality: payloads travel in clear text.

pub mod message;
pub mod path;
pub mod provision;
pub mod psk;
pub mod transport;
pub mod value;

pub use message::{Code, Message, MessageType, Observe, WireError};
pub use path::{format_links, parse_links, ParsePathError, Path};
pub use provision::{resolve_uri, BootstrapConfig};
pub use psk::{HandshakeError, Hello, Initiator, PskSession, Responder, SealError};
pub use transport::{
    CoapEndpoint, Direction, Inbound, PskResolver, RetryPolicy, ServerHandshakes, Tap, TransportError,
};
pub use value::{ResourceValue, ValueError};
