//! Identifier and value newtypes shared across the protocol.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Milliseconds since the UNIX epoch, in virtual time.
pub type Timestamp = u64;

/// Smallest indivisible unit of the domain token.
pub type TokenAmount = u64;

macro_rules! hex_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map(Self)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), &self.to_hex()[..8])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(de::Error::custom)
            }
        }
    };
}

hex_newtype!(
    /// A node address: the node's ed25519 verifying key.
    Address,
    32
);
hex_newtype!(
    /// 256-bit SHA-256 digest.
    Hash256,
    32
);
hex_newtype!(
    /// 128-bit agent, data or listing identifier.
    Uuid,
    16
);
hex_newtype!(
    /// 256-bit symmetric key for signal and dataset encryption.
    SymmetricKey,
    32
);
hex_newtype!(
    /// Content-store identifier standing in for a dataset URL.
    BlobId,
    32
);

pub type AgentId = Uuid;

impl Hash256 {
    pub fn digest(bytes: &[u8]) -> Self {
        Hash256(Sha256::digest(bytes).into())
    }

    /// Digest over the concatenation of `parts`.
    pub fn digest_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        Hash256(h.finalize().into())
    }
}

impl Uuid {
    /// Deterministically derives an identifier from arbitrary seed material.
    pub fn derive(parts: &[&[u8]]) -> Self {
        let d = Hash256::digest_parts(parts);
        let mut out = [0u8; 16];
        out.copy_from_slice(&d.0[..16]);
        // RFC 4122 version 4 / variant bits, so the value reads as a v4 UUID.
        out[6] = (out[6] & 0x0f) | 0x40;
        out[8] = (out[8] & 0x3f) | 0x80;
        Uuid(out)
    }
}

/// Serde helper: byte vectors as lowercase hex strings.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_and_serde() {
        let a = Address([7u8; 32]);
        assert_eq!(Address::from_hex(&a.to_hex()).unwrap(), a);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, format!("\"{}\"", a.to_hex()));
        let back: Address = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn derived_uuid_is_v4_shaped_and_stable() {
        let u = Uuid::derive(&[b"agent", b"node-1"]);
        assert_eq!(u, Uuid::derive(&[b"agent", b"node-1"]));
        assert_eq!(u.0[6] >> 4, 4);
        assert_eq!(u.0[8] >> 6, 0b10);
        assert_ne!(u, Uuid::derive(&[b"agent", b"node-2"]));
    }
}
