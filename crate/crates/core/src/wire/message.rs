use std::fmt;

/// Protocol version carried in the high nibble of byte 0.
pub const VERSION: u8 = 1;
pub const MAX_TOKEN_LEN: usize = 8;
pub const MAX_PATH_LEN: usize = 255;
pub const MAX_PAYLOAD_LEN: usize = 65_535;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Con = 0,
    Non = 1,
    Ack = 2,
    Rst = 3,
}

impl MessageType {
    fn from_nibble(n: u8) -> Option<Self> {
        Some(match n {
            0 => Self::Con,
            1 => Self::Non,
            2 => Self::Ack,
            3 => Self::Rst,
            _ => return None,
        })
    }
}

/// Request methods and response codes. Responses use the `class.detail`
/// byte form (`0x45` is 2.05).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Code {
    Empty,
    Get,
    Post,
    Put,
    Delete,
    Created,
    Deleted,
    Changed,
    Content,
    Unauthorized,
    NotFound,
    MethodNotAllowed,
    BadRequest,
}

impl Code {
    pub fn to_byte(self) -> u8 {
        match self {
            Code::Empty => 0x00,
            Code::Get => 0x01,
            Code::Post => 0x02,
            Code::Put => 0x03,
            Code::Delete => 0x04,
            Code::Created => 0x41,
            Code::Deleted => 0x42,
            Code::Changed => 0x44,
            Code::Content => 0x45,
            Code::Unauthorized => 0x81,
            Code::NotFound => 0x84,
            Code::MethodNotAllowed => 0x85,
            Code::BadRequest => 0x88,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x00 => Code::Empty,
            0x01 => Code::Get,
            0x02 => Code::Post,
            0x03 => Code::Put,
            0x04 => Code::Delete,
            0x41 => Code::Created,
            0x42 => Code::Deleted,
            0x44 => Code::Changed,
            0x45 => Code::Content,
            0x81 => Code::Unauthorized,
            0x84 => Code::NotFound,
            0x85 => Code::MethodNotAllowed,
            0x88 => Code::BadRequest,
            _ => return None,
        })
    }

    pub fn is_request(self) -> bool {
        matches!(self, Code::Get | Code::Post | Code::Put | Code::Delete)
    }

    pub fn is_success(self) -> bool {
        self.to_byte() >> 5 == 2
    }

    pub fn is_client_error(self) -> bool {
        self.to_byte() >> 5 == 4
    }

    /// Nearest HTTP status for proxied responses.
    pub fn http_status(self) -> u16 {
        match self {
            Code::Created => 201,
            Code::Deleted | Code::Changed | Code::Content => 200,
            Code::Unauthorized => 401,
            Code::NotFound => 404,
            Code::MethodNotAllowed => 405,
            Code::BadRequest => 400,
            _ => 502,
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.to_byte();
        if self.is_request() || b == 0 {
            write!(f, "{self:?}")
        } else {
            write!(f, "{}.{:02}", b >> 5, b & 0x1f)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Observe {
    #[default]
    None = 0,
    Register = 1,
    Deregister = 2,
}

impl Observe {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::None,
            1 => Self::Register,
            2 => Self::Deregister,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("path longer than {MAX_PATH_LEN} bytes")]
    PathTooLong,
    #[error("payload longer than {MAX_PAYLOAD_LEN} bytes")]
    PayloadTooLong,
    #[error("token longer than {MAX_TOKEN_LEN} bytes")]
    TokenTooLong,
    #[error("datagram truncated")]
    Truncated,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("invalid message type {0}")]
    BadType(u8),
    #[error("unknown code {0:#04x}")]
    BadCode(u8),
    #[error("invalid observe flag {0}")]
    BadObserve(u8),
    #[error("path is not valid utf-8")]
    BadPath,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

/// One protocol unit. Encoded layout:
///
/// | bytes | field |
/// |-------|-------|
/// | 1 | `version << 4 \| type` |
/// | 1 | code |
/// | 2 | message id, big-endian |
/// | 1 | token length, then token bytes |
/// | 1 | observe flag |
/// | 1 | path length, then UTF-8 path |
/// | 2 | payload length, big-endian, then payload |
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub mtype: MessageType,
    pub code: Code,
    pub message_id: u16,
    pub token: Vec<u8>,
    pub observe: Observe,
    pub path: String,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(mtype: MessageType, code: Code, path: impl Into<String>) -> Self {
        Self {
            mtype,
            code,
            message_id: 0,
            token: Vec::new(),
            observe: Observe::None,
            path: path.into(),
            payload: Vec::new(),
        }
    }

    pub fn request(code: Code, path: impl Into<String>) -> Self {
        Self::new(MessageType::Con, code, path)
    }

    pub fn with_payload(mut self, payload: impl Into<Vec<u8>>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn with_token(mut self, token: impl Into<Vec<u8>>) -> Self {
        self.token = token.into();
        self
    }

    pub fn with_observe(mut self, observe: Observe) -> Self {
        self.observe = observe;
        self
    }

    /// Piggybacked acknowledgement carrying a response to `self`.
    pub fn ack(&self, code: Code) -> Message {
        Message {
            mtype: MessageType::Ack,
            code,
            message_id: self.message_id,
            token: self.token.clone(),
            observe: Observe::None,
            path: self.path.clone(),
            payload: Vec::new(),
        }
    }

    pub fn is_handshake(&self) -> bool {
        self.path.starts_with("/hs/")
    }

    /// Path without the query string.
    pub fn path_only(&self) -> &str {
        self.path.split_once('?').map_or(&self.path, |(p, _)| p)
    }

    /// Value of query parameter `key` (`/bs?ep=dev-1`).
    pub fn query(&self, key: &str) -> Option<&str> {
        let (_, q) = self.path.split_once('?')?;
        q.split('&')
            .filter_map(|kv| kv.split_once('='))
            .find_map(|(k, v)| (k == key).then_some(v))
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        if self.token.len() > MAX_TOKEN_LEN {
            return Err(WireError::TokenTooLong);
        }
        if self.path.len() > MAX_PATH_LEN {
            return Err(WireError::PathTooLong);
        }
        if self.payload.len() > MAX_PAYLOAD_LEN {
            return Err(WireError::PayloadTooLong);
        }
        let mut out =
            Vec::with_capacity(9 + self.token.len() + self.path.len() + self.payload.len());
        out.push(VERSION << 4 | self.mtype as u8);
        out.push(self.code.to_byte());
        out.extend_from_slice(&self.message_id.to_be_bytes());
        out.push(self.token.len() as u8);
        out.extend_from_slice(&self.token);
        out.push(self.observe as u8);
        out.push(self.path.len() as u8);
        out.extend_from_slice(self.path.as_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf, pos: 0 };
        let b0 = r.u8()?;
        if b0 >> 4 != VERSION {
            return Err(WireError::BadVersion(b0 >> 4));
        }
        let mtype = MessageType::from_nibble(b0 & 0x0f).ok_or(WireError::BadType(b0 & 0x0f))?;
        let code_byte = r.u8()?;
        let code = Code::from_byte(code_byte).ok_or(WireError::BadCode(code_byte))?;
        let message_id = u16::from_be_bytes([r.u8()?, r.u8()?]);
        let token_len = r.u8()? as usize;
        if token_len > MAX_TOKEN_LEN {
            return Err(WireError::TokenTooLong);
        }
        let token = r.take(token_len)?.to_vec();
        let obs = r.u8()?;
        let observe = Observe::from_byte(obs).ok_or(WireError::BadObserve(obs))?;
        let path_len = r.u8()? as usize;
        let path = std::str::from_utf8(r.take(path_len)?)
            .map_err(|_| WireError::BadPath)?
            .to_owned();
        let payload_len = u16::from_be_bytes([r.u8()?, r.u8()?]) as usize;
        let payload = r.take(payload_len)?.to_vec();
        if r.pos != buf.len() {
            return Err(WireError::Trailing(buf.len() - r.pos));
        }
        Ok(Self {
            mtype,
            code,
            message_id,
            token,
            observe,
            path,
            payload,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
}
