//! IPv4 prefixes as used by routing tables and FEC bindings.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrefixError {
    #[error("prefix length {0} exceeds 32")]
    LengthOutOfRange(u8),
    #[error("prefix {addr}/{len} has host bits set")]
    HostBitsSet { addr: Ipv4Addr, len: u8 },
    #[error("cannot parse prefix `{0}`")]
    Parse(String),
}

/// An IPv4 network prefix. Bits below `len` are always zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    addr: u32,
    len: u8,
}

pub fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

#[allow(clippy::len_without_is_empty)]
impl Prefix {
    /// Builds a prefix, rejecting lengths above 32 and addresses with bits
    /// set below the prefix length.
    pub fn new(addr: u32, len: u8) -> Result<Self, PrefixError> {
        if len > 32 {
            return Err(PrefixError::LengthOutOfRange(len));
        }
        if addr & !mask(len) != 0 {
            return Err(PrefixError::HostBitsSet {
                addr: Ipv4Addr::from(addr),
                len,
            });
        }
        Ok(Prefix { addr, len })
    }

    /// Builds a prefix by clearing the host bits of `addr`.
    pub fn truncating(addr: u32, len: u8) -> Self {
        let len = len.min(32);
        Prefix {
            addr: addr & mask(len),
            len,
        }
    }

    pub fn addr(&self) -> u32 {
        self.addr
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_default(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr & mask(self.len) == self.addr
    }

    /// First usable host address, used as the address of the node that
    /// owns the prefix.
    pub fn host_addr(&self) -> u32 {
        if self.len >= 31 {
            self.addr
        } else {
            self.addr | 1
        }
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.addr), self.len)
    }
}

impl FromStr for Prefix {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s.split_once('/').ok_or_else(|| PrefixError::Parse(s.to_string()))?;
        let addr: Ipv4Addr = addr.trim().parse().map_err(|_| PrefixError::Parse(s.to_string()))?;
        let len: u8 = len.trim().parse().map_err(|_| PrefixError::Parse(s.to_string()))?;
        Prefix::new(u32::from(addr), len)
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
