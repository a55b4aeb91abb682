//! Address and data-line primitives shared by every layer of the model.

use std::fmt;
use std::ops::BitXor;

use serde::{Deserialize, Serialize};

/// Bytes per cache line, NVM line, OTP and bus payload.
pub const LINE_SIZE: usize = 64;
pub const LINE_BYTES: u64 = LINE_SIZE as u64;

/// A physical byte address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhysAddr(pub u64);

impl PhysAddr {
    pub const fn new(value: u64) -> Self {
        PhysAddr(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn is_line_aligned(self) -> bool {
        self.0.is_multiple_of(LINE_BYTES)
    }

    /// Line number (address divided by the line size).
    pub const fn line_number(self) -> u64 {
        self.0 / LINE_BYTES
    }

    pub const fn from_line_number(line: u64) -> Self {
        PhysAddr(line * LINE_BYTES)
    }

    pub const fn offset(self, bytes: u64) -> Self {
        PhysAddr(self.0 + bytes)
    }
}

impl fmt::Debug for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhysAddr({:#x})", self.0)
    }
}

impl fmt::Display for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// A 64-byte value: cache line, NVM line, one-time pad or bus payload.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataLine(pub [u8; LINE_SIZE]);

impl DataLine {
    pub const ZERO: DataLine = DataLine([0; LINE_SIZE]);

    pub const fn new(bytes: [u8; LINE_SIZE]) -> Self {
        DataLine(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; LINE_SIZE] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    /// Fills the line with `word` repeated in little-endian order.
    pub fn splat_u64(word: u64) -> Self {
        let mut bytes = [0u8; LINE_SIZE];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        DataLine(bytes)
    }

    pub fn u64_at(&self, index: usize) -> u64 {
        let mut word = [0u8; 8];
        word.copy_from_slice(&self.0[index * 8..index * 8 + 8]);
        u64::from_le_bytes(word)
    }

    pub fn set_u64(&mut self, index: usize, value: u64) {
        self.0[index * 8..index * 8 + 8].copy_from_slice(&value.to_le_bytes());
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Option<Self> {
        let bytes = hex::decode(text).ok()?;
        let array: [u8; LINE_SIZE] = bytes.try_into().ok()?;
        Some(DataLine(array))
    }
}

impl Default for DataLine {
    fn default() -> Self {
        DataLine::ZERO
    }
}

/// Bytewise XOR of two lines.
pub fn xor_line(a: &DataLine, b: &DataLine) -> DataLine {
    let mut out = [0u8; LINE_SIZE];
    for ((o, x), y) in out.iter_mut().zip(a.0.iter()).zip(b.0.iter()) {
        *o = x ^ y;
    }
    DataLine(out)
}

impl BitXor for DataLine {
    type Output = DataLine;

    fn bitxor(self, rhs: DataLine) -> DataLine {
        xor_line(&self, &rhs)
    }
}

impl BitXor for &DataLine {
    type Output = DataLine;

    fn bitxor(self, rhs: &DataLine) -> DataLine {
        xor_line(self, rhs)
    }
}

impl fmt::Debug for DataLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataLine({}..)", &self.to_hex()[..16])
    }
}

impl Serialize for DataLine {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DataLine {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        DataLine::from_hex(&text).ok_or_else(|| serde::de::Error::custom("expected 128 hex chars"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_line() -> impl Strategy<Value = DataLine> {
        proptest::array::uniform32(any::<u8>()).prop_flat_map(|lo| {
            proptest::array::uniform32(any::<u8>()).prop_map(move |hi| {
                let mut bytes = [0u8; LINE_SIZE];
                bytes[..32].copy_from_slice(&lo);
                bytes[32..].copy_from_slice(&hi);
                DataLine(bytes)
            })
        })
    }

    #[test]
    fn xor_identities() {
        let x = DataLine::splat_u64(0xdead_beef_0123_4567);
        assert_eq!(xor_line(&x, &DataLine::ZERO), x);
        assert_eq!(xor_line(&x, &x), DataLine::ZERO);
    }

    #[test]
    fn alignment() {
        assert!(PhysAddr(0).is_line_aligned());
        assert!(PhysAddr(128).is_line_aligned());
        assert!(!PhysAddr(65).is_line_aligned());
        assert_eq!(PhysAddr(4096 * 64).line_number(), 4096);
    }

    proptest! {
        #[test]
        fn xor_round_trip(x in arb_line(), p in arb_line()) {
            prop_assert_eq!((x ^ p) ^ p, x);
            prop_assert!((x ^ x).is_zero());
        }

        #[test]
        fn hex_round_trip(x in arb_line()) {
            prop_assert_eq!(DataLine::from_hex(&x.to_hex()), Some(x));
        }
    }
}
