//! Node identities, transaction signatures and the seeded counter-mode
//! generator used for proposer and challenger draws.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};

use crate::types::{Address, Hash256};

/// An ed25519 key pair. The address of a node is its verifying key.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl Keypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self { signing: SigningKey::from_bytes(&seed) }
    }

    /// Key pair derived from a node name. Scenario genesis state depends only
    /// on node names, so a block log can be replayed without the run seed.
    pub fn from_name(name: &str) -> Self {
        Self::from_seed(Hash256::digest_parts(&[b"scynet-node-key/", name.as_bytes()]).0)
    }

    pub fn address(&self) -> Address {
        Address(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.signing.sign(msg).to_bytes()
    }
}

impl std::fmt::Debug for Keypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Keypair({:?})", self.address())
    }
}

pub fn verify(signer: &Address, msg: &[u8], sig: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(signer.as_bytes()) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(sig) else {
        return false;
    };
    key.verify(msg, &sig).is_ok()
}

/// Deterministic generator: word `i` is the first 16 bytes of
/// `SHA-256(seed || i)` with `i` as a 64-bit big-endian counter.
#[derive(Debug, Clone)]
pub struct SeedStream {
    seed: Hash256,
    counter: u64,
}

impl SeedStream {
    pub fn new(seed: Hash256) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn draws(&self) -> u64 {
        self.counter
    }

    pub fn next_u128(&mut self) -> u128 {
        let d = Hash256::digest_parts(&[self.seed.as_bytes(), &self.counter.to_be_bytes()]);
        self.counter += 1;
        u128::from_be_bytes(d.0[..16].try_into().expect("16 bytes"))
    }

    /// Uniform integer in `1..=n` by rejection sampling. `n` must be nonzero.
    pub fn uniform_1_to(&mut self, n: u128) -> u128 {
        assert!(n > 0, "empty range");
        let zone = u128::MAX - (u128::MAX % n);
        loop {
            let v = self.next_u128();
            if v < zone {
                return v % n + 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_verify_only_for_signer_and_message() {
        let a = Keypair::from_name("a");
        let b = Keypair::from_name("b");
        let sig = a.sign(b"hello");
        assert!(verify(&a.address(), b"hello", &sig));
        assert!(!verify(&b.address(), b"hello", &sig));
        assert!(!verify(&a.address(), b"hellO", &sig));
        assert!(!verify(&a.address(), b"hello", &sig[..63]));
    }

    #[test]
    fn seed_stream_is_reproducible_and_in_range() {
        let seed = Hash256::digest(b"seed");
        let mut s1 = SeedStream::new(seed);
        let mut s2 = SeedStream::new(seed);
        for _ in 0..1000 {
            let a = s1.uniform_1_to(7);
            assert_eq!(a, s2.uniform_1_to(7));
            assert!((1..=7).contains(&a));
        }
        let mut s = SeedStream::new(seed);
        assert_eq!(s.uniform_1_to(1), 1);
    }
}
