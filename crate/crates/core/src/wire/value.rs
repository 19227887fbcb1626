use std::fmt;

use serde::{Deserialize, Serialize};

/// Typed resource value. Wire form: one kind byte, then the value.
///
/// | kind | byte | value bytes |
/// |------|------|-------------|
/// | None | 0 | none |
/// | Text | 1 | UTF-8 |
/// | Integer | 2 | i64 big-endian |
/// | Float | 3 | f64 big-endian |
/// | Opaque | 4 | raw |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum ResourceValue {
    None,
    Text(String),
    Integer(i64),
    Float(f64),
    Opaque(#[serde(with = "hex::serde")] Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueError {
    #[error("empty value")]
    Empty,
    #[error("unknown kind byte {0}")]
    BadKind(u8),
    #[error("numeric value must be 8 bytes, got {0}")]
    BadLength(usize),
    #[error("text value is not valid utf-8")]
    BadUtf8,
    #[error("none value carries {0} bytes")]
    Trailing(usize),
}

impl ResourceValue {
    pub fn kind(&self) -> &'static str {
        match self {
            ResourceValue::None => "None",
            ResourceValue::Text(_) => "Text",
            ResourceValue::Integer(_) => "Integer",
            ResourceValue::Float(_) => "Float",
            ResourceValue::Opaque(_) => "Opaque",
        }
    }

    pub fn same_kind(&self, other: &ResourceValue) -> bool {
        self.kind() == other.kind()
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            ResourceValue::None => vec![0],
            ResourceValue::Text(s) => [&[1u8][..], s.as_bytes()].concat(),
            ResourceValue::Integer(i) => [&[2u8][..], &i.to_be_bytes()].concat(),
            ResourceValue::Float(f) => [&[3u8][..], &f.to_be_bytes()].concat(),
            ResourceValue::Opaque(b) => [&[4u8][..], b].concat(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ValueError> {
        let (&kind, rest) = bytes.split_first().ok_or(ValueError::Empty)?;
        let eight = || -> Result<[u8; 8], ValueError> {
            rest.try_into().map_err(|_| ValueError::BadLength(rest.len()))
        };
        Ok(match kind {
            0 if rest.is_empty() => ResourceValue::None,
            0 => return Err(ValueError::Trailing(rest.len())),
            1 => ResourceValue::Text(
                std::str::from_utf8(rest)
                    .map_err(|_| ValueError::BadUtf8)?
                    .to_owned(),
            ),
            2 => ResourceValue::Integer(i64::from_be_bytes(eight()?)),
            3 => ResourceValue::Float(f64::from_be_bytes(eight()?)),
            4 => ResourceValue::Opaque(rest.to_vec()),
            k => return Err(ValueError::BadKind(k)),
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ResourceValue::Float(f) => Some(*f),
            ResourceValue::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }
}

/// Plain-text rendering used by the notification stream.
impl fmt::Display for ResourceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceValue::None => Ok(()),
            ResourceValue::Text(s) => f.write_str(s),
            ResourceValue::Integer(i) => write!(f, "{i}"),
            ResourceValue::Float(x) => write!(f, "{x}"),
            ResourceValue::Opaque(b) => f.write_str(&hex::encode(b)),
        }
    }
}
