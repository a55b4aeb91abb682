//! Sparse NVM backing store and the memory bus, the adversary-observable
//! boundary. Every NVM read or write emits exactly one [`BusEvent`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::line::{DataLine, PhysAddr, LINE_BYTES};

const PAGE: u64 = 4096;

fn align_up(value: u64, align: u64) -> u64 {
    value.div_ceil(align) * align
}

/// Layout of the physical address map.
///
/// ```text
/// [0, nvm_size)                 user data
/// [nvm_size, + slots*64)        seed-only addresses (never stored to)
/// counter region                one 64 B counter block per 4 KiB of user data
/// shadow region                 one line per cache slot
/// shadow tag region             8 tag words per line
/// raw-flush log                 header line + 8 addresses per line
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddressMap {
    pub nvm_size: u64,
    pub cache_slots: u64,
    pub counter_base: u64,
    pub shadow_base: u64,
    pub shadow_tag_base: u64,
    pub raw_log_base: u64,
    pub end: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    User,
    SeedOnly,
    Counter,
    Shadow,
    ShadowTag,
    RawLog,
    Gap,
    Beyond,
}

impl AddressMap {
    pub fn new(nvm_size: u64, cache_slots: usize) -> Result<Self> {
        if nvm_size == 0 || !nvm_size.is_multiple_of(PAGE) {
            return Err(Error::config("nvm_size", "must be a non-zero multiple of 4096"));
        }
        let slots = cache_slots as u64;
        let seed_end = nvm_size + slots * LINE_BYTES;
        let counter_base = align_up(seed_end, PAGE);
        let counter_end = counter_base + nvm_size / PAGE * LINE_BYTES;
        let shadow_base = align_up(counter_end, PAGE);
        let shadow_tag_base = shadow_base + slots * LINE_BYTES;
        let raw_log_base = align_up(shadow_tag_base + slots.div_ceil(8) * LINE_BYTES, PAGE);
        let end = raw_log_base + LINE_BYTES + slots.div_ceil(8) * LINE_BYTES;
        Ok(AddressMap {
            nvm_size,
            cache_slots: slots,
            counter_base,
            shadow_base,
            shadow_tag_base,
            raw_log_base,
            end,
        })
    }

    pub fn region(&self, addr: PhysAddr) -> Region {
        let a = addr.value();
        if a < self.nvm_size {
            Region::User
        } else if a < self.nvm_size + self.cache_slots * LINE_BYTES {
            Region::SeedOnly
        } else if a >= self.end {
            Region::Beyond
        } else if a >= self.raw_log_base {
            Region::RawLog
        } else if a >= self.shadow_tag_base {
            Region::ShadowTag
        } else if a >= self.shadow_base {
            Region::Shadow
        } else if a >= self.counter_base && a < self.counter_base + self.nvm_size / PAGE * LINE_BYTES {
            Region::Counter
        } else {
            Region::Gap
        }
    }

    /// Seed address used for cache slot `n` by crash-time and startup pads.
    pub fn slot_seed_addr(&self, n: usize) -> PhysAddr {
        PhysAddr(self.nvm_size + n as u64 * LINE_BYTES)
    }

    pub fn counter_addr(&self, region_base: PhysAddr) -> PhysAddr {
        PhysAddr(self.counter_base + region_base.value() / PAGE * LINE_BYTES)
    }

    pub fn shadow_addr(&self, n: usize) -> PhysAddr {
        PhysAddr(self.shadow_base + n as u64 * LINE_BYTES)
    }

    pub fn shadow_tag_line(&self, n: usize) -> PhysAddr {
        PhysAddr(self.shadow_tag_base + (n as u64 / 8) * LINE_BYTES)
    }

    pub fn raw_log_header(&self) -> PhysAddr {
        PhysAddr(self.raw_log_base)
    }

    pub fn raw_log_line(&self, i: usize) -> PhysAddr {
        PhysAddr(self.raw_log_base + LINE_BYTES + (i as u64 / 8) * LINE_BYTES)
    }

    pub fn check_user(&self, addr: PhysAddr) -> Result<()> {
        if !addr.is_line_aligned() {
            return Err(Error::Misaligned(addr));
        }
        if addr.value() >= self.nvm_size {
            return Err(Error::NotUserAddress {
                addr,
                nvm_size: self.nvm_size,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ToNvm,
    FromNvm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrafficClass {
    UserData,
    SecurityMetadata,
}

/// One observable transfer on the memory bus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusEvent {
    pub direction: Direction,
    pub addr: PhysAddr,
    /// User line the payload represents; equals `addr` except for shadow
    /// region traffic, where it is the line's home address.
    pub subject: PhysAddr,
    pub payload: DataLine,
    /// Host operations completed before the transfer.
    pub step: u64,
    pub class: TrafficClass,
}

/// Append-only log of everything an adversary on the bus or holding the
/// NVM module can observe.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdversaryTrace {
    pub events: Vec<BusEvent>,
    pub nvm_snapshots: BTreeMap<u64, String>,
}

impl AdversaryTrace {
    pub fn user_events(&self) -> impl Iterator<Item = &BusEvent> {
        self.events.iter().filter(|e| e.class == TrafficClass::UserData)
    }

    /// One event per line: `step dir class addr subject payload`, followed by
    /// `snapshot step hash` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let dir = match e.direction {
                Direction::ToNvm => "W",
                Direction::FromNvm => "R",
            };
            let class = match e.class {
                TrafficClass::UserData => "U",
                TrafficClass::SecurityMetadata => "M",
            };
            let _ = writeln!(out, "{} {dir} {class} {} {} {}", e.step, e.addr, e.subject, e.payload.to_hex());
        }
        for (step, hash) in &self.nvm_snapshots {
            let _ = writeln!(out, "snapshot {step} {hash}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut trace = AdversaryTrace::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| Error::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "snapshot" {
                if fields.len() != 3 {
                    return Err(bad("expected `snapshot step hash`"));
                }
                let step = fields[1].parse().map_err(|_| bad("bad step"))?;
                trace.nvm_snapshots.insert(step, fields[2].to_string());
                continue;
            }
            if fields.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let step = fields[0].parse().map_err(|_| bad("bad step"))?;
            let direction = match fields[1] {
                "W" => Direction::ToNvm,
                "R" => Direction::FromNvm,
                _ => return Err(bad("direction must be W or R")),
            };
            let class = match fields[2] {
                "U" => TrafficClass::UserData,
                "M" => TrafficClass::SecurityMetadata,
                _ => return Err(bad("class must be U or M")),
            };
            let addr = parse_addr(fields[3]).ok_or_else(|| bad("bad address"))?;
            let subject = parse_addr(fields[4]).ok_or_else(|| bad("bad subject address"))?;
            let payload = DataLine::from_hex(fields[5]).ok_or_else(|| bad("bad payload"))?;
            trace.events.push(BusEvent {
                direction,
                addr,
                subject,
                payload,
                step,
                class,
            });
        }
        Ok(trace)
    }
}

pub(crate) fn parse_addr(text: &str) -> Option<PhysAddr> {
    let value = match text.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).ok()?,
        None => text.parse().ok()?,
    };
    Some(PhysAddr(value))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BusCounters {
    pub reads: u64,
    pub writes: u64,
    pub user_bytes: u64,
    pub metadata_bytes: u64,
}

/// Sparse NVM. Lines never written read as zero.
pub struct Nvm {
    map: AddressMap,
    lines: BTreeMap<u64, DataLine>,
    trace: AdversaryTrace,
    record: bool,
    step: u64,
    counters: BusCounters,
}

impl Nvm {
    pub fn new(map: AddressMap) -> Self {
        Nvm {
            map,
            lines: BTreeMap::new(),
            trace: AdversaryTrace::default(),
            record: true,
            step: 0,
            counters: BusCounters::default(),
        }
    }

    pub fn map(&self) -> &AddressMap {
        &self.map
    }

    /// Disables event capture (counters still advance). Used by long
    /// performance runs that never audit.
    pub fn set_recording(&mut self, record: bool) {
        self.record = record;
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn check(&self, addr: PhysAddr) -> Result<()> {
        if !addr.is_line_aligned() {
            return Err(Error::Misaligned(addr));
        }
        match self.map.region(addr) {
            Region::SeedOnly => Err(Error::SeedOnlyAddress(addr)),
            Region::Beyond | Region::Gap => Err(Error::AddressOutOfRange(addr)),
            _ => Ok(()),
        }
    }

    fn emit(&mut self, direction: Direction, addr: PhysAddr, subject: PhysAddr, payload: DataLine, class: TrafficClass) {
        match direction {
            Direction::ToNvm => self.counters.writes += 1,
            Direction::FromNvm => self.counters.reads += 1,
        }
        match class {
            TrafficClass::UserData => self.counters.user_bytes += LINE_BYTES,
            TrafficClass::SecurityMetadata => self.counters.metadata_bytes += LINE_BYTES,
        }
        if self.record {
            self.trace.events.push(BusEvent {
                direction,
                addr,
                subject,
                payload,
                step: self.step,
                class,
            });
        }
    }

    pub fn write(&mut self, addr: PhysAddr, payload: DataLine, class: TrafficClass) -> Result<()> {
        self.write_for(addr, addr, payload, class)
    }

    pub fn write_for(&mut self, addr: PhysAddr, subject: PhysAddr, payload: DataLine, class: TrafficClass) -> Result<()> {
        self.check(addr)?;
        self.emit(Direction::ToNvm, addr, subject, payload, class);
        self.lines.insert(addr.value(), payload);
        Ok(())
    }

    pub fn read(&mut self, addr: PhysAddr, class: TrafficClass) -> Result<DataLine> {
        self.read_for(addr, addr, class)
    }

    pub fn read_for(&mut self, addr: PhysAddr, subject: PhysAddr, class: TrafficClass) -> Result<DataLine> {
        self.check(addr)?;
        let payload = self.peek(addr);
        self.emit(Direction::FromNvm, addr, subject, payload, class);
        Ok(payload)
    }

    /// Content without a bus transfer; for auditors and debug dumps.
    pub fn peek(&self, addr: PhysAddr) -> DataLine {
        self.lines.get(&addr.value()).copied().unwrap_or(DataLine::ZERO)
    }

    pub fn trace(&self) -> &AdversaryTrace {
        &self.trace
    }

    pub fn counters(&self) -> BusCounters {
        self.counters
    }

    /// SHA-256 over every stored `(address, content)` pair in address order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (addr, line) in &self.lines {
            hasher.update(addr.to_le_bytes());
            hasher.update(line.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn snapshot(&mut self) {
        let hash = self.content_hash();
        self.trace.nvm_snapshots.insert(self.step, hash);
    }

    pub fn stored_lines(&self) -> impl Iterator<Item = (PhysAddr, &DataLine)> {
        self.lines.iter().map(|(a, l)| (PhysAddr(*a), l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nvm() -> Nvm {
        Nvm::new(AddressMap::new(1 << 20, 64).unwrap())
    }

    #[test]
    fn regions_are_ordered_and_disjoint() {
        let m = AddressMap::new(16 << 30, 65_536).unwrap();
        assert_eq!(m.region(PhysAddr(0)), Region::User);
        assert_eq!(m.region(m.slot_seed_addr(0)), Region::SeedOnly);
        assert_eq!(m.region(m.slot_seed_addr(65_535)), Region::SeedOnly);
        assert_eq!(m.region(m.counter_addr(PhysAddr(0))), Region::Counter);
        assert_eq!(m.region(m.counter_addr(PhysAddr((16 << 30) - 4096))), Region::Counter);
        assert_eq!(m.region(m.shadow_addr(0)), Region::Shadow);
        assert_eq!(m.region(m.shadow_addr(65_535)), Region::Shadow);
        assert_eq!(m.region(m.shadow_tag_line(65_535)), Region::ShadowTag);
        assert_eq!(m.region(m.raw_log_header()), Region::RawLog);
        assert_eq!(m.region(m.raw_log_line(65_535)), Region::RawLog);
        assert_eq!(m.region(PhysAddr(m.end)), Region::Beyond);
    }

    #[test]
    fn write_read_round_trip() {
        let mut n = nvm();
        let v = DataLine::splat_u64(42);
        n.write(PhysAddr(128), v, TrafficClass::UserData).unwrap();
        assert_eq!(n.read(PhysAddr(128), TrafficClass::UserData).unwrap(), v);
        assert_eq!(n.read(PhysAddr(192), TrafficClass::UserData).unwrap(), DataLine::ZERO);
        assert_eq!(n.trace().events.len(), 3);
        assert_eq!(n.trace().events[0].direction, Direction::ToNvm);
    }

    #[test]
    fn ten_writes_ten_events() {
        let mut n = nvm();
        for i in 0..10u64 {
            n.set_step(i);
            n.write(PhysAddr(i * 64), DataLine::splat_u64(i + 1), TrafficClass::UserData).unwrap();
        }
        assert_eq!(n.trace().user_events().count(), 10);
        assert!(n.trace().events.iter().all(|e| e.direction == Direction::ToNvm));
        assert_eq!(n.counters().writes, 10);
    }

    #[test]
    fn storage_outside_map_rejected() {
        let mut n = nvm();
        let m = *n.map();
        assert!(matches!(
            n.write(m.slot_seed_addr(3), DataLine::ZERO, TrafficClass::UserData),
            Err(Error::SeedOnlyAddress(_))
        ));
        assert!(matches!(
            n.read(PhysAddr(m.end), TrafficClass::UserData),
            Err(Error::AddressOutOfRange(_))
        ));
        assert!(matches!(n.read(PhysAddr(3), TrafficClass::UserData), Err(Error::Misaligned(_))));
        assert!(n.trace().events.is_empty());
    }

    #[test]
    fn trace_text_round_trip() {
        let mut n = nvm();
        n.write(PhysAddr(64), DataLine::splat_u64(9), TrafficClass::UserData).unwrap();
        n.set_step(4);
        let shadow = n.map().shadow_addr(2);
        n.write_for(shadow, PhysAddr(64), DataLine::splat_u64(1), TrafficClass::UserData).unwrap();
        n.read(n.map().counter_addr(PhysAddr(0)), TrafficClass::SecurityMetadata).unwrap();
        n.snapshot();
        let text = n.trace().to_text();
        assert_eq!(&AdversaryTrace::from_text(&text).unwrap(), n.trace());
    }

    #[test]
    fn content_hash_tracks_contents() {
        let mut a = nvm();
        let mut b = nvm();
        assert_eq!(a.content_hash(), b.content_hash());
        a.write(PhysAddr(0), DataLine::splat_u64(1), TrafficClass::UserData).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        b.write(PhysAddr(0), DataLine::splat_u64(1), TrafficClass::UserData).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }
}
