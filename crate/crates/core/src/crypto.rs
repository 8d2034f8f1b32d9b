//! Identities, hashes and signatures.
//!
//! Peers are identified by their Ed25519 public key. Hashes are SHA-256.
//! Signatures are always made over a 32-byte digest of a canonical encoding.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};

pub const HASH_LEN: usize = 32;
pub const PEER_ID_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hash(pub [u8; HASH_LEN]);

impl Hash {
    /// Genesis sentinel used as the self-link of a chain's first partition.
    pub const ZERO: Hash = Hash([0u8; HASH_LEN]);

    pub fn digest(bytes: &[u8]) -> Hash {
        Hash(Sha256::digest(bytes).into())
    }

    /// Hash of several byte strings, each length-prefixed.
    pub fn digest_parts(parts: &[&[u8]]) -> Hash {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u32).to_be_bytes());
            h.update(p);
        }
        Hash(h.finalize().into())
    }

    pub fn is_zero(&self) -> bool {
        *self == Hash::ZERO
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex()[..16])
    }
}

impl Serialize for Hash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; HASH_LEN];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Hash(out))
    }
}

impl Encode for Hash {
    fn encode(&self, w: &mut Writer) {
        w.raw(&self.0);
    }
}

impl Decode for Hash {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Hash(r.array()?))
    }
}

/// Public key of a peer. Ordered lexicographically on the key bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub [u8; PEER_ID_LEN]);

impl PeerId {
    pub fn as_bytes(&self) -> &[u8; PEER_ID_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; PEER_ID_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(PeerId(out))
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PeerId({})", self.short())
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short())
    }
}

impl Serialize for PeerId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PeerId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PeerId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl Encode for PeerId {
    fn encode(&self, w: &mut Writer) {
        w.raw(&self.0);
    }
}

impl Decode for PeerId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PeerId(r.array()?))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer: PeerId,
    pub bytes: [u8; SIGNATURE_LEN],
}

impl Signature {
    /// Checks the signature over `digest` against the signer's public key.
    pub fn verify(&self, digest: &Hash) -> bool {
        let memo = self.memo_key(digest);
        if VERIFIED.with(|v| v.borrow().contains(&memo)) {
            return true;
        }
        let Ok(key) = VerifyingKey::from_bytes(&self.signer.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&self.bytes);
        let ok = key.verify(&digest.0, &sig).is_ok();
        if ok {
            VERIFIED.with(|v| {
                let mut v = v.borrow_mut();
                if v.len() >= VERIFIED_CAPACITY {
                    v.clear();
                }
                v.insert(memo);
            });
        }
        ok
    }

    fn memo_key(&self, digest: &Hash) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.signer.0);
        h.update(digest.0);
        h.update(self.bytes);
        h.finalize().into()
    }
}

const VERIFIED_CAPACITY: usize = 1 << 20;

thread_local! {
    // The same signed orders and blocks are checked many times over by
    // different peers. Only successful checks are remembered.
    static VERIFIED: RefCell<HashSet<[u8; 32]>> = RefCell::new(HashSet::new());
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} by {})", hex::encode(&self.bytes[..6]), self.signer)
    }
}

impl Encode for Signature {
    fn encode(&self, w: &mut Writer) {
        self.signer.encode(w);
        w.raw(&self.bytes);
    }
}

impl Decode for Signature {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Signature { signer: PeerId::decode(r)?, bytes: r.array()? })
    }
}

/// A peer's key pair.
#[derive(Clone)]
pub struct Identity {
    key: SigningKey,
    id: PeerId,
}

impl Identity {
    /// Derives a key pair deterministically from a 32-byte seed.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let key = SigningKey::from_bytes(&seed);
        let id = PeerId(key.verifying_key().to_bytes());
        Identity { key, id }
    }

    /// Simulator-assigned identity: the seed is `H(run seed || index)`.
    pub fn derive(run_seed: u64, index: u64) -> Self {
        let h = Hash::digest_parts(&[b"xchange-peer", &run_seed.to_be_bytes(), &index.to_be_bytes()]);
        Identity::from_seed(h.0)
    }

    pub fn peer_id(&self) -> PeerId {
        self.id
    }

    pub fn sign(&self, digest: &Hash) -> Signature {
        Signature { signer: self.id, bytes: self.key.sign(&digest.0).to_bytes() }
    }
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identity({})", self.id)
    }
}
