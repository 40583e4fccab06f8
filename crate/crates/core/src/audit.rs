//! Signed audit trail for rebalance decisions.
//!
//! Hashing: SHA-256 over a version tag, the checkpoint's canonical bytes,
//! the weights as fixed-width little-endian f64 in universe order, and the
//! timestamp as a little-endian u64 of epoch seconds.
//!
//! Signing: Lamport one-time signatures over the 256 digest bits. A key
//! chain pre-generates one key per expected rebalance; the logical public
//! key is the root of a hash tree over the per-slot public keys, so a
//! signature carries its slot index, the 256 revealed secret blocks, the
//! 256 complementary public blocks, and the authentication path. Each slot
//! signs at most once (usage counter enforced).
//!
//! Log file layout (little-endian):
//!
//! ```text
//! magic b"HQFSLOG\0", version u32, chain root [u8; 32]
//! per record: u32 length prefix, then
//!   timestamp u64 | checkpoint digest [u8;32] | u32 n + n*f64 weights |
//!   digest [u8;32] | slot u32 | 256 revealed blocks | 256 complement
//!   blocks | u32 path length + path blocks
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec;

const HASH_TAG: &[u8] = b"hqfs-audit-v1";
const LOG_MAGIC: &[u8; 8] = b"HQFSLOG\0";
const LOG_VERSION: u32 = 1;
const PK_MAGIC: &[u8; 8] = b"HQFSPK\0\0";
const PK_VERSION: u32 = 1;
const DIGEST_BITS: usize = 256;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("one-time key slot {0} already used")]
    KeyReuse(usize),
    #[error("slot {slot} out of range for {slots} keys")]
    SlotOutOfRange { slot: usize, slots: usize },
    #[error("no unused one-time key slots remain")]
    OutOfSlots,
    #[error("timestamps must be non-decreasing: {prev} then {got}")]
    OutOfOrderTimestamp { prev: u64, got: u64 },
    #[error("log was written under a different key chain root")]
    RootMismatch,
    #[error("{failed} of {total} audit records failed verification")]
    VerificationFailed { failed: usize, total: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log decode: {0}")]
    Codec(#[from] codec::CodecError),
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Digest binding (model state, allocation, time): SHA-256 over the tagged
/// concatenation. Weights must be in universe order.
pub fn canonical_hash(checkpoint_bytes: &[u8], weights: &[f64], timestamp: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(HASH_TAG);
    hasher.update(checkpoint_bytes);
    for w in weights {
        hasher.update(w.to_le_bytes());
    }
    hasher.update(timestamp.to_le_bytes());
    hasher.finalize().into()
}

struct OneTimeKey {
    /// 512 secret blocks: pairs (bit 0, bit 1) per digest bit.
    secret: Vec<[u8; 32]>,
    /// Hashes of the secret blocks.
    public: Vec<[u8; 32]>,
}

impl OneTimeKey {
    fn generate(rng: &mut ChaCha20Rng) -> Self {
        let mut secret = Vec::with_capacity(2 * DIGEST_BITS);
        let mut public = Vec::with_capacity(2 * DIGEST_BITS);
        for _ in 0..2 * DIGEST_BITS {
            let mut block = [0u8; 32];
            rng.fill_bytes(&mut block);
            public.push(sha256(&[&block]));
            secret.push(block);
        }
        Self { secret, public }
    }

    fn leaf(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for block in &self.public {
            hasher.update(block);
        }
        hasher.finalize().into()
    }
}

/// Verification key: hash-tree root over the one-time public keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublicKey {
    pub root: [u8; 32],
    pub slots: u32,
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        codec::put_header(&mut buf, PK_MAGIC, PK_VERSION);
        buf.extend_from_slice(&self.root);
        codec::put_u32(&mut buf, self.slots);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuditError> {
        let mut r = codec::Reader::new(bytes);
        r.header(PK_MAGIC, PK_VERSION)?;
        let root = r.array32()?;
        let slots = r.u32()?;
        Ok(Self { root, slots })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub slot: u32,
    pub revealed: Vec<[u8; 32]>,
    pub complement: Vec<[u8; 32]>,
    pub auth_path: Vec<[u8; 32]>,
}

/// Pre-generated one-time keys committed under one tree root.
pub struct KeyChain {
    keys: Vec<OneTimeKey>,
    used: Vec<bool>,
    /// levels[0] = padded leaves, last level = [root].
    levels: Vec<Vec<[u8; 32]>>,
}

/// Deterministic chain generation: one Lamport key per expected signature.
pub fn keygen(seed: u64, slots: usize) -> KeyChain {
    let slots = slots.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let keys: Vec<OneTimeKey> = (0..slots).map(|_| OneTimeKey::generate(&mut rng)).collect();

    let height = (slots as f64).log2().ceil() as usize;
    let width = 1usize << height;
    let mut leaves: Vec<[u8; 32]> = keys.iter().map(|k| k.leaf()).collect();
    leaves.resize(width, [0u8; 32]);

    let mut levels = vec![leaves];
    while levels.last().unwrap().len() > 1 {
        let prev = levels.last().unwrap();
        let next: Vec<[u8; 32]> =
            prev.chunks(2).map(|pair| sha256(&[&pair[0], &pair[1]])).collect();
        levels.push(next);
    }
    KeyChain { used: vec![false; keys.len()], keys, levels }
}

fn digest_bit(digest: &[u8; 32], index: usize) -> usize {
    ((digest[index / 8] >> (7 - index % 8)) & 1) as usize
}

impl KeyChain {
    pub fn public_key(&self) -> PublicKey {
        PublicKey { root: self.levels.last().unwrap()[0], slots: self.keys.len() as u32 }
    }

    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }

    fn auth_path(&self, slot: usize) -> Vec<[u8; 32]> {
        let mut path = Vec::with_capacity(self.levels.len() - 1);
        let mut index = slot;
        for level in &self.levels[..self.levels.len() - 1] {
            path.push(level[index ^ 1]);
            index >>= 1;
        }
        path
    }

    /// Signs with an explicit slot; a used slot is a hard error.
    pub fn sign_with_slot(
        &mut self,
        slot: usize,
        digest: &[u8; 32],
    ) -> Result<Signature, AuditError> {
        if slot >= self.keys.len() {
            return Err(AuditError::SlotOutOfRange { slot, slots: self.keys.len() });
        }
        if self.used[slot] {
            return Err(AuditError::KeyReuse(slot));
        }
        self.used[slot] = true;

        let key = &self.keys[slot];
        let mut revealed = Vec::with_capacity(DIGEST_BITS);
        let mut complement = Vec::with_capacity(DIGEST_BITS);
        for j in 0..DIGEST_BITS {
            let bit = digest_bit(digest, j);
            revealed.push(key.secret[2 * j + bit]);
            complement.push(key.public[2 * j + (1 - bit)]);
        }
        Ok(Signature {
            slot: slot as u32,
            revealed,
            complement,
            auth_path: self.auth_path(slot),
        })
    }

    /// Signs with the next unused slot.
    pub fn sign_next(&mut self, digest: &[u8; 32]) -> Result<Signature, AuditError> {
        match self.used.iter().position(|u| !u) {
            Some(slot) => self.sign_with_slot(slot, digest),
            None => Err(AuditError::OutOfSlots),
        }
    }
}

/// Pure verification: rebuild the one-time public key from the revealed
/// blocks, hash it into the leaf, fold the authentication path by the slot
/// index, and compare against the committed root.
pub fn verify(pk: &PublicKey, digest: &[u8; 32], signature: &Signature) -> bool {
    if signature.slot >= pk.slots {
        return false;
    }
    if signature.revealed.len() != DIGEST_BITS || signature.complement.len() != DIGEST_BITS {
        return false;
    }
    let mut leaf_hasher = Sha256::new();
    for j in 0..DIGEST_BITS {
        let bit = digest_bit(digest, j);
        let from_secret = sha256(&[&signature.revealed[j]]);
        let (pk0, pk1) = if bit == 0 {
            (from_secret, signature.complement[j])
        } else {
            (signature.complement[j], from_secret)
        };
        leaf_hasher.update(pk0);
        leaf_hasher.update(pk1);
    }
    let mut node: [u8; 32] = leaf_hasher.finalize().into();

    let height = (pk.slots as f64).log2().ceil() as usize;
    if signature.auth_path.len() != height {
        return false;
    }
    let mut index = signature.slot as usize;
    for sibling in &signature.auth_path {
        node = if index & 1 == 0 {
            sha256(&[&node, sibling])
        } else {
            sha256(&[sibling, &node])
        };
        index >>= 1;
    }
    node == pk.root
}

/// One signed rebalance decision.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    /// Epoch seconds of the rebalance day (UTC midnight).
    pub timestamp: u64,
    /// SHA-256 of the checkpoint's canonical bytes, for digest recomputation.
    pub checkpoint_digest: [u8; 32],
    /// Weights in universe order.
    pub weights: Vec<f64>,
    /// canonical_hash(checkpoint, weights, timestamp).
    pub digest: [u8; 32],
    pub signature: Signature,
}

impl AuditRecord {
    fn encode(&self, buf: &mut Vec<u8>) {
        let mut body = Vec::new();
        codec::put_u64(&mut body, self.timestamp);
        body.extend_from_slice(&self.checkpoint_digest);
        codec::put_f64_slice(&mut body, &self.weights);
        body.extend_from_slice(&self.digest);
        codec::put_u32(&mut body, self.signature.slot);
        for block in self.signature.revealed.iter().chain(&self.signature.complement) {
            body.extend_from_slice(block);
        }
        codec::put_u32(&mut body, self.signature.auth_path.len() as u32);
        for block in &self.signature.auth_path {
            body.extend_from_slice(block);
        }
        codec::put_bytes(buf, &body);
    }

    fn decode(r: &mut codec::Reader) -> Result<Self, AuditError> {
        let body = r.bytes()?;
        let mut br = codec::Reader::new(&body);
        let timestamp = br.u64()?;
        let checkpoint_digest = br.array32()?;
        let weights = br.f64_vec()?;
        let digest = br.array32()?;
        let slot = br.u32()?;
        let mut revealed = Vec::with_capacity(DIGEST_BITS);
        for _ in 0..DIGEST_BITS {
            revealed.push(br.array32()?);
        }
        let mut complement = Vec::with_capacity(DIGEST_BITS);
        for _ in 0..DIGEST_BITS {
            complement.push(br.array32()?);
        }
        let path_len = br.u32()? as usize;
        let mut auth_path = Vec::with_capacity(path_len);
        for _ in 0..path_len {
            auth_path.push(br.array32()?);
        }
        Ok(Self {
            timestamp,
            checkpoint_digest,
            weights,
            digest,
            signature: Signature { slot, revealed, complement, auth_path },
        })
    }
}

/// Append-only writer; timestamps must be non-decreasing.
pub struct AuditLogWriter {
    file: std::fs::File,
    last_timestamp: Option<u64>,
}

impl AuditLogWriter {
    pub fn create(path: &Path, root: [u8; 32]) -> Result<Self, AuditError> {
        let mut header = Vec::new();
        codec::put_header(&mut header, LOG_MAGIC, LOG_VERSION);
        header.extend_from_slice(&root);
        let mut file = std::fs::File::create(path)?;
        file.write_all(&header)?;
        Ok(Self { file, last_timestamp: None })
    }

    pub fn append(&mut self, record: &AuditRecord) -> Result<(), AuditError> {
        if let Some(prev) = self.last_timestamp {
            if record.timestamp < prev {
                return Err(AuditError::OutOfOrderTimestamp {
                    prev,
                    got: record.timestamp,
                });
            }
        }
        let mut buf = Vec::new();
        record.encode(&mut buf);
        self.file.write_all(&buf)?;
        self.file.flush()?;
        self.last_timestamp = Some(record.timestamp);
        Ok(())
    }
}

/// Reads a log file back; truncated records surface as errors.
pub fn read_log(path: &Path) -> Result<([u8; 32], Vec<AuditRecord>), AuditError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = codec::Reader::new(&bytes);
    r.header(LOG_MAGIC, LOG_VERSION)?;
    let root = r.array32()?;
    let mut records = Vec::new();
    while r.remaining() > 0 {
        records.push(AuditRecord::decode(&mut r)?);
    }
    Ok((root, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecordCheck {
    pub timestamp: u64,
    pub signature_ok: bool,
    /// None when the referenced checkpoint is unavailable.
    pub digest_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogVerifyReport {
    pub records: Vec<RecordCheck>,
    pub all_ok: bool,
}

/// Re-verifies every signature and, where `lookup` can supply the referenced
/// checkpoint bytes, recomputes the digest binding. An empty log passes
/// vacuously.
pub fn verify_log<F>(records: &[AuditRecord], pk: &PublicKey, lookup: F) -> LogVerifyReport
where
    F: Fn(&[u8; 32]) -> Option<Vec<u8>>,
{
    let mut checks = Vec::with_capacity(records.len());
    let mut all_ok = true;
    for record in records {
        let signature_ok = verify(pk, &record.digest, &record.signature);
        let digest_ok = lookup(&record.checkpoint_digest).map(|ckpt| {
            canonical_hash(&ckpt, &record.weights, record.timestamp) == record.digest
        });
        all_ok &= signature_ok && digest_ok.unwrap_or(true);
        checks.push(RecordCheck { timestamp: record.timestamp, signature_ok, digest_ok });
    }
    LogVerifyReport { records: checks, all_ok }
}
