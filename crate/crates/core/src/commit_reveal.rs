//! Encrypted signal submission with delayed key reveal.
//!
//! A searcher seals `signal || own public key` under a fresh 256-bit key
//! (AES-256-GCM) and commits the ciphertext on chain. After the submission
//! deadline it reveals the key. Because the submitter's key is inside the
//! authenticated plaintext, a rival who resubmits the ciphertext under its
//! own signature is caught as soon as the key is revealed.

use std::collections::BTreeMap;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::types::{hex_bytes, Address, AgentId, BlobId, Hash256, SymmetricKey};

/// Every key seals exactly one message, so a fixed nonce is safe.
const NONCE: [u8; 12] = [0u8; 12];

/// What a sealed signal answers: one real-time tick or a whole dataset tournament.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvelopeContext {
    Tick(u64),
    Tournament(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalEnvelope {
    pub agent: AgentId,
    pub context: EnvelopeContext,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
    /// SHA-256 of `ciphertext`.
    pub commitment: Hash256,
}

impl SignalEnvelope {
    pub fn commitment_matches(&self) -> bool {
        Hash256::digest(&self.ciphertext) == self.commitment
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpenError {
    #[error("ciphertext does not authenticate under the revealed key")]
    DecryptFailure,
    #[error("signal was sealed by {embedded:?}, not by the claimed signer")]
    CopyDetected { embedded: Address },
    #[error("plaintext package is malformed")]
    Malformed,
}

pub fn encrypt(key: &SymmetricKey, plaintext: &[u8]) -> Vec<u8> {
    Aes256Gcm::new(key.as_bytes().into())
        .encrypt(Nonce::from_slice(&NONCE), plaintext)
        .expect("in-memory AES-GCM encryption cannot fail")
}

pub fn decrypt(key: &SymmetricKey, ciphertext: &[u8]) -> Option<Vec<u8>> {
    Aes256Gcm::new(key.as_bytes().into()).decrypt(Nonce::from_slice(&NONCE), ciphertext).ok()
}

/// `u32 BE signal length || signal || 32-byte public key`.
pub fn encode_package(signal: &[u8], submitter: &Address) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + signal.len() + 32);
    out.extend_from_slice(&(signal.len() as u32).to_be_bytes());
    out.extend_from_slice(signal);
    out.extend_from_slice(submitter.as_bytes());
    out
}

pub fn decode_package(package: &[u8]) -> Option<(Vec<u8>, Address)> {
    let len = u32::from_be_bytes(package.get(..4)?.try_into().ok()?) as usize;
    if package.len() != 4 + len + 32 {
        return None;
    }
    let signal = package[4..4 + len].to_vec();
    let pk = Address::from_slice(&package[4 + len..])?;
    Some((signal, pk))
}

pub fn seal_signal(
    key: &SymmetricKey,
    agent: AgentId,
    context: EnvelopeContext,
    signal: &[u8],
    submitter: &Address,
) -> SignalEnvelope {
    let ciphertext = encrypt(key, &encode_package(signal, submitter));
    let commitment = Hash256::digest(&ciphertext);
    SignalEnvelope { agent, context, ciphertext, commitment }
}

/// Opens an envelope with a revealed key on behalf of `claimed_signer`.
pub fn open_signal(
    envelope: &SignalEnvelope,
    key: &SymmetricKey,
    claimed_signer: &Address,
) -> Result<Vec<u8>, OpenError> {
    if !envelope.commitment_matches() {
        return Err(OpenError::DecryptFailure);
    }
    let package = decrypt(key, &envelope.ciphertext).ok_or(OpenError::DecryptFailure)?;
    let (signal, embedded) = decode_package(&package).ok_or(OpenError::Malformed)?;
    if embedded != *claimed_signer {
        return Err(OpenError::CopyDetected { embedded });
    }
    Ok(signal)
}

impl Encode for EnvelopeContext {
    fn encode(&self, e: &mut Encoder) {
        match self {
            EnvelopeContext::Tick(m) => e.u64(0).u64(*m),
            EnvelopeContext::Tournament(k) => e.u64(1).u64(*k),
        };
    }
}

impl Decode for EnvelopeContext {
    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match d.u64()? {
            0 => Ok(EnvelopeContext::Tick(d.u64()?)),
            1 => Ok(EnvelopeContext::Tournament(d.u64()?)),
            tag => Err(DecodeError::UnknownTag { what: "envelope context", tag }),
        }
    }
}

impl Encode for SignalEnvelope {
    fn encode(&self, e: &mut Encoder) {
        e.put(&self.agent).put(&self.context).bytes(&self.ciphertext).put(&self.commitment);
    }
}

impl Decode for SignalEnvelope {
    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(SignalEnvelope { agent: d.get()?, context: d.get()?, ciphertext: d.bytes()?.to_vec(), commitment: d.get()? })
    }
}

/// In-memory blob store standing in for dataset URLs.
#[derive(Debug, Clone, Default)]
pub struct BlobStore {
    blobs: BTreeMap<BlobId, Vec<u8>>,
}

impl BlobStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `bytes` under an id derived from the uploader and the content.
    pub fn put(&mut self, uploader: &Address, bytes: Vec<u8>) -> BlobId {
        let id = BlobId(Hash256::digest_parts(&[uploader.as_bytes(), Hash256::digest(&bytes).as_bytes()]).0);
        self.blobs.insert(id, bytes);
        id
    }

    pub fn get(&self, id: &BlobId) -> Option<&[u8]> {
        self.blobs.get(id).map(Vec::as_slice)
    }

    /// Overwrites the content behind an existing id, like a mutable URL would.
    pub fn replace(&mut self, id: &BlobId, bytes: Vec<u8>) {
        self.blobs.insert(*id, bytes);
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }
}

/// A challenger's published dataset: public inputs plus encrypted outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCommitment {
    pub inputs_blob: BlobId,
    pub inputs_hash: Hash256,
    pub outputs_blob: BlobId,
    pub outputs_hash: Hash256,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("blob {0} not found")]
    MissingBlob(BlobId),
    #[error("{0} blob does not match its published digest")]
    Mismatch(&'static str),
    #[error("dataset outputs do not decrypt under the revealed key")]
    DecryptFailure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedDataset {
    pub inputs: Vec<u8>,
    pub outputs: Vec<u8>,
}

impl DatasetCommitment {
    /// Uploads inputs and encrypted outputs and returns the commitment to publish.
    pub fn publish(
        store: &mut BlobStore,
        challenger: &Address,
        inputs: Vec<u8>,
        outputs: &[u8],
        key: &SymmetricKey,
    ) -> Self {
        let inputs_hash = Hash256::digest(&inputs);
        let sealed = encrypt(key, outputs);
        let outputs_hash = Hash256::digest(&sealed);
        let inputs_blob = store.put(challenger, inputs);
        let outputs_blob = store.put(challenger, sealed);
        DatasetCommitment { inputs_blob, inputs_hash, outputs_blob, outputs_hash }
    }
}

pub fn verify_dataset(
    commitment: &DatasetCommitment,
    key: &SymmetricKey,
    store: &BlobStore,
) -> Result<VerifiedDataset, DatasetError> {
    let inputs = store.get(&commitment.inputs_blob).ok_or(DatasetError::MissingBlob(commitment.inputs_blob))?;
    let sealed = store.get(&commitment.outputs_blob).ok_or(DatasetError::MissingBlob(commitment.outputs_blob))?;
    if Hash256::digest(inputs) != commitment.inputs_hash {
        return Err(DatasetError::Mismatch("inputs"));
    }
    if Hash256::digest(sealed) != commitment.outputs_hash {
        return Err(DatasetError::Mismatch("outputs"));
    }
    let outputs = decrypt(key, sealed).ok_or(DatasetError::DecryptFailure)?;
    Ok(VerifiedDataset { inputs: inputs.to_vec(), outputs })
}
