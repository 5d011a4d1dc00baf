//! Canonical byte encoding used for every digest in the ledger.
//!
//! Layout rules:
//! - unsigned integers: 8 bytes, big-endian
//! - strings: 4-byte big-endian byte length, then UTF-8 bytes
//! - hashes and addresses: raw fixed-width bytes
//! - lists: 8-byte big-endian element count, then elements
//! - payload maps: encoded as a list of (key, value) pairs sorted by key;
//!   each value is a 1-byte tag (`0x01` integer, `0x02` text) followed by its encoding

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{Address, Hash32};

/// A scalar carried in contract arguments, return values, and event payloads.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Uint(u64),
    Text(String),
}

impl Value {
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::Uint(v) => Some(*v),
            Value::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            Value::Uint(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Uint(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Uint(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<Address> for Value {
    fn from(v: Address) -> Self {
        Value::Text(v.to_hex())
    }
}

/// Ordered key/value map. `BTreeMap` keeps keys sorted, which is the canonical order.
pub type Payload = BTreeMap<String, Value>;

/// Builds a [`Payload`] from `(key, value)` pairs.
pub fn payload<K, V, I>(pairs: I) -> Payload
where
    K: Into<String>,
    V: Into<Value>,
    I: IntoIterator<Item = (K, V)>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

const TAG_UINT: u8 = 0x01;
const TAG_TEXT: u8 = 0x02;

#[derive(Debug, Default, Clone)]
pub struct CanonicalEncoder {
    buf: Vec<u8>,
}

impl CanonicalEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        let len = u32::try_from(s.len()).expect("string longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn hash(&mut self, h: &Hash32) -> &mut Self {
        self.buf.extend_from_slice(h.as_bytes());
        self
    }

    pub fn address(&mut self, a: &Address) -> &mut Self {
        self.buf.extend_from_slice(a.as_bytes());
        self
    }

    pub fn len_prefix(&mut self, count: usize) -> &mut Self {
        self.u64(count as u64)
    }

    pub fn value(&mut self, v: &Value) -> &mut Self {
        match v {
            Value::Uint(n) => self.u8(TAG_UINT).u64(*n),
            Value::Text(s) => self.u8(TAG_TEXT).str(s),
        }
    }

    pub fn payload(&mut self, p: &Payload) -> &mut Self {
        self.len_prefix(p.len());
        for (k, v) in p {
            self.str(k);
            self.value(v);
        }
        self
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn digest(&self) -> Hash32 {
        Hash32::digest(&self.buf)
    }
}
