//! Trusted-node key relay between two ground stations.
//!
//! The satellite holds one key per station. To connect them it publishes the
//! XOR of both keys and erases its copies; each station then recovers the
//! other's key from its own.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use zeroize::Zeroize;

use crate::error::{invalid, Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SQKD";
pub const SNAPSHOT_VERSION: u8 = 1;

/// Bit string packed MSB-first; unused trailing bits are always zero.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitKey {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl std::fmt::Debug for BitKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitKey({} bits)", self.bit_len)
    }
}

impl Drop for BitKey {
    fn drop(&mut self) {
        self.bytes.zeroize();
    }
}

fn byte_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

fn tail_mask(bits: usize) -> u8 {
    match bits % 8 {
        0 => 0xff,
        r => 0xffu8 << (8 - r),
    }
}

impl BitKey {
    pub fn new(bytes: Vec<u8>, bit_len: usize) -> Result<Self> {
        if bytes.len() != byte_len(bit_len) {
            return Err(invalid(
                "bits",
                format!("{} bytes cannot hold exactly {bit_len} bits", bytes.len()),
            ));
        }
        if let Some(last) = bytes.last() {
            if last & !tail_mask(bit_len) != 0 {
                return Err(invalid("bits", "padding bits must be zero"));
            }
        }
        Ok(Self { bytes, bit_len })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut bytes = vec![0u8; byte_len(bits.len())];
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
        Self {
            bytes,
            bit_len: bits.len(),
        }
    }

    pub fn zeros(bit_len: usize) -> Self {
        Self {
            bytes: vec![0; byte_len(bit_len)],
            bit_len,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, bit_len: usize) -> Self {
        let mut bytes = vec![0u8; byte_len(bit_len)];
        rng.fill(bytes.as_mut_slice());
        if let Some(last) = bytes.last_mut() {
            *last &= tail_mask(bit_len);
        }
        Self { bytes, bit_len }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn is_empty(&self) -> bool {
        self.bit_len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn is_all_zero(&self) -> bool {
        self.bytes.iter().all(|b| *b == 0)
    }

    pub fn xor(&self, other: &BitKey) -> Result<BitKey> {
        if self.bit_len != other.bit_len {
            return Err(Error::KeyLengthMismatch {
                left: self.bit_len,
                right: other.bit_len,
            });
        }
        let bytes = self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| a ^ b)
            .collect();
        Ok(BitKey {
            bytes,
            bit_len: self.bit_len,
        })
    }

    pub fn to_hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(hex: &str, bit_len: usize) -> Result<Self> {
        if hex.len() % 2 != 0 {
            return Err(invalid("bits", "hex string has odd length"));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| invalid("bits", e.to_string()))?;
        Self::new(bytes, bit_len)
    }

    fn erase(&mut self) {
        self.bytes.as_mut_slice().zeroize();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStatus {
    Stored,
    Consumed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub key_id: u64,
    pub peer: String,
    pub status: KeyStatus,
    bits: BitKey,
}

impl KeyRecord {
    pub fn bits(&self) -> &BitKey {
        &self.bits
    }
}

/// Public broadcast `k_a XOR k_b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayMessage {
    pub key_id_a: u64,
    pub key_id_b: u64,
    pub payload: BitKey,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayAccounting {
    pub combines: u64,
    /// Stored bits erased by combines.
    pub consumed_bits: u64,
    /// Bits delivered to the far station.
    pub relayed_bits: u64,
}

/// Key store of the trusted node. Mutation goes through `&mut self`, so a
/// single owner serialises every operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyStore {
    records: BTreeMap<u64, KeyRecord>,
    next_id: u64,
    messages: Vec<RelayMessage>,
    accounting: RelayAccounting,
}

impl KeyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store_key(&mut self, peer: &str, bits: BitKey) -> Result<u64> {
        if bits.is_empty() {
            return Err(Error::EmptyKey);
        }
        let key_id = self.next_id;
        self.next_id += 1;
        self.records.insert(
            key_id,
            KeyRecord {
                key_id,
                peer: peer.to_string(),
                status: KeyStatus::Stored,
                bits,
            },
        );
        Ok(key_id)
    }

    pub fn lookup(&self, key_id: u64) -> Option<&KeyRecord> {
        self.records.get(&key_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &KeyRecord> {
        self.records.values()
    }

    pub fn messages(&self) -> &[RelayMessage] {
        &self.messages
    }

    pub fn accounting(&self) -> RelayAccounting {
        self.accounting
    }

    fn stored(&self, key_id: u64) -> Result<&KeyRecord> {
        let record = self.records.get(&key_id).ok_or(Error::UnknownKey(key_id))?;
        if record.status == KeyStatus::Consumed {
            return Err(Error::KeyConsumed(key_id));
        }
        Ok(record)
    }

    /// Publishes `k_a XOR k_b` and erases both keys. Either both records are
    /// consumed or, on error, the store is left untouched.
    pub fn combine_and_broadcast(&mut self, key_id_a: u64, key_id_b: u64) -> Result<RelayMessage> {
        if key_id_a == key_id_b {
            return Err(invalid("key_id_b", "cannot combine a key with itself"));
        }
        let a = self.stored(key_id_a)?;
        let b = self.stored(key_id_b)?;
        let payload = a.bits.xor(&b.bits)?;
        let n = payload.bit_len() as u64;
        for id in [key_id_a, key_id_b] {
            let record = self.records.get_mut(&id).expect("checked above");
            record.bits.erase();
            record.status = KeyStatus::Consumed;
        }
        self.accounting.combines += 1;
        self.accounting.consumed_bits += 2 * n;
        self.accounting.relayed_bits += n;
        let message = RelayMessage {
            key_id_a,
            key_id_b,
            payload,
        };
        self.messages.push(message.clone());
        Ok(message)
    }

    /// Number of non-zero bytes left in consumed records.
    pub fn residual_consumed_bytes(&self) -> usize {
        self.records
            .values()
            .filter(|r| r.status == KeyStatus::Consumed)
            .map(|r| r.bits.as_bytes().iter().filter(|b| **b != 0).count())
            .sum()
    }

    pub fn export_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.push(SNAPSHOT_VERSION);
        out.extend_from_slice(&self.next_id.to_le_bytes());
        out.extend_from_slice(&self.accounting.combines.to_le_bytes());
        out.extend_from_slice(&self.accounting.consumed_bits.to_le_bytes());
        out.extend_from_slice(&self.accounting.relayed_bits.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in self.records.values() {
            out.extend_from_slice(&r.key_id.to_le_bytes());
            out.extend_from_slice(&(r.peer.len() as u32).to_le_bytes());
            out.extend_from_slice(r.peer.as_bytes());
            out.push(match r.status {
                KeyStatus::Stored => 0,
                KeyStatus::Consumed => 1,
            });
            out.extend_from_slice(&(r.bits.bit_len() as u64).to_le_bytes());
            out.extend_from_slice(r.bits.as_bytes());
        }
        out
    }

    /// Restores records and accounting. Broadcast messages are public and
    /// are not part of the snapshot.
    pub fn import_snapshot(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let next_id = r.u64()?;
        let accounting = RelayAccounting {
            combines: r.u64()?,
            consumed_bits: r.u64()?,
            relayed_bits: r.u64()?,
        };
        let count = r.u64()?;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let key_id = r.u64()?;
            let peer_len = r.u32()? as usize;
            let peer = String::from_utf8(r.take(peer_len)?.to_vec())
                .map_err(|_| Error::Snapshot("peer is not UTF-8".into()))?;
            let status = match r.take(1)?[0] {
                0 => KeyStatus::Stored,
                1 => KeyStatus::Consumed,
                s => return Err(Error::Snapshot(format!("unknown status {s}"))),
            };
            let bit_len = usize::try_from(r.u64()?).map_err(|_| Error::Snapshot("key too long".into()))?;
            let bits = BitKey::new(r.take(byte_len(bit_len))?.to_vec(), bit_len)
                .map_err(|e| Error::Snapshot(e.to_string()))?;
            if key_id >= next_id || records.contains_key(&key_id) {
                return Err(Error::Snapshot(format!("inconsistent key id {key_id}")));
            }
            records.insert(
                key_id,
                KeyRecord {
                    key_id,
                    peer,
                    status,
                    bits,
                },
            );
        }
        if r.pos != data.len() {
            return Err(Error::Snapshot("trailing bytes".into()));
        }
        Ok(Self {
            records,
            next_id,
            messages: Vec::new(),
            accounting,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.export_snapshot()).map_err(|e| Error::Snapshot(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::Snapshot(e.to_string()))?;
        Self::import_snapshot(&data)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.data.len())
            .ok_or_else(|| Error::Snapshot("truncated".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// `local XOR payload`: the far station's key.
pub fn recover(local_bits: &BitKey, message: &RelayMessage) -> Result<BitKey> {
    local_bits.xor(&message.payload)
}
