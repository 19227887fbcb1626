use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Object / instance / resource address, written `/3/0/0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub object: u16,
    pub instance: Option<u16>,
    pub resource: Option<u16>,
}

impl Path {
    pub const fn object(object: u16) -> Self {
        Self {
            object,
            instance: None,
            resource: None,
        }
    }

    pub const fn instance(object: u16, instance: u16) -> Self {
        Self {
            object,
            instance: Some(instance),
            resource: None,
        }
    }

    pub const fn resource(object: u16, instance: u16, resource: u16) -> Self {
        Self {
            object,
            instance: Some(instance),
            resource: Some(resource),
        }
    }

    pub fn is_resource(&self) -> bool {
        self.resource.is_some()
    }

    /// True when `self` is `other` or lies below it.
    pub fn starts_with(&self, other: &Path) -> bool {
        self.object == other.object
            && (other.instance.is_none() || self.instance == other.instance)
            && (other.resource.is_none() || self.resource == other.resource)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}", self.object)?;
        if let Some(i) = self.instance {
            write!(f, "/{i}")?;
        }
        if let Some(r) = self.resource {
            write!(f, "/{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid object path {0:?}")]
pub struct ParsePathError(pub String);

impl FromStr for Path {
    type Err = ParsePathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePathError(s.to_owned());
        let rest = s.strip_prefix('/').ok_or_else(err)?;
        let parts: Vec<&str> = rest.split('/').collect();
        if parts.is_empty() || parts.len() > 3 {
            return Err(err());
        }
        let num = |p: &str| -> Result<u16, ParsePathError> {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            p.parse().map_err(|_| err())
        };
        Ok(Path {
            object: num(parts[0])?,
            instance: parts.get(1).map(|p| num(p)).transpose()?,
            resource: parts.get(2).map(|p| num(p)).transpose()?,
        })
    }
}

impl Serialize for Path {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Path {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Formats object links as `</1/0>,</3/0>`.
pub fn format_links(links: &[Path]) -> String {
    links
        .iter()
        .map(|p| format!("<{p}>"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses `</1/0>,</3/0>` into paths. Link attributes after `;` are ignored.
pub fn parse_links(text: &str) -> Result<Vec<Path>, ParsePathError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let target = item.split(';').next().unwrap_or_default();
            target
                .strip_prefix('<')
                .and_then(|t| t.strip_suffix('>'))
                .ok_or_else(|| ParsePathError(item.to_owned()))?
                .parse()
        })
        .collect()
}
