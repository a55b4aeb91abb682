//! The encryption schemes as state machines over the cache hierarchy, the
//! NVM and the counter-mode engine.
//!
//! All five schemes share one [`System`]; what differs is how a line is
//! represented while cached, what the memory controller does on fills and
//! writebacks, and what happens at crash and recovery time:
//!
//! | scheme   | cached form          | host access          | crash flush                    |
//! |----------|----------------------|----------------------|--------------------------------|
//! | Baseline | plaintext            | direct               | plaintext to home              |
//! | MC-CME   | plaintext            | direct               | CME if reads allowed, else raw |
//! | EadrCME  | ciphertext (M-OTP)   | pad + XOR per access | ciphertext to home             |
//! | BBE      | plaintext            | direct               | crash pads into shadow region  |
//! | Sepencr  | line XOR C-OTP[slot] | XOR per access       | verbatim into shadow region    |

mod crash;
mod registers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheGeometry, Hierarchy, Victim};
use crate::cme::{
    bump_minor, line_index, region_base, BumpOutcome, CounterBlock, CounterCache, Key128, OtpEngine, PadPurpose,
    Seed, SeedDomain, SeedLog, LINES_PER_BLOCK,
};
use crate::crash_audit::EadrModel;
use crate::error::{Error, Result};
use crate::line::{DataLine, PhysAddr};
use crate::metrics::{CrashFlushProfile, CycleModel, EnergyTable, LatencyTable, MemEvent, RunStats};
use crate::nvm::{AddressMap, AdversaryTrace, Nvm, TrafficClass};

pub use crash::{CrashPolicy, CrashRecord, RecoveryReport};
pub use registers::{CotpTable, CrashCountReg, IncrCounterReg};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    /// No encryption.
    Baseline,
    /// Counter-mode encryption in the memory controller.
    McCme,
    /// Counter-mode encryption moved into the cache.
    EadrCme,
    /// Battery-backed encryption engine at crash time.
    Bbe,
    /// Separate pad generation and XOR, with pre-generated per-slot pads.
    Sepencr,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::Baseline,
        SchemeId::McCme,
        SchemeId::EadrCme,
        SchemeId::Bbe,
        SchemeId::Sepencr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Baseline => "baseline",
            SchemeId::McCme => "mc-cme",
            SchemeId::EadrCme => "eadr-cme",
            SchemeId::Bbe => "bbe",
            SchemeId::Sepencr => "sepencr",
        }
    }

    /// Rejects scheme/model pairs the scheme cannot operate under. Insecure
    /// pairs stay runnable so audits can demonstrate the leak.
    pub fn check_model(self, model: EadrModel) -> Result<()> {
        if self == SchemeId::Bbe && !model.allows(crate::crash_audit::CrashOp::Compute) {
            return Err(Error::IncompatibleModel {
                scheme: self,
                model,
                reason: "the crash-time pad generator needs compute, which the Write-Only model does not sustain",
            });
        }
        Ok(())
    }

    /// Whether both audits are expected to pass under `model`.
    pub fn is_secure_under(self, model: EadrModel) -> bool {
        match self {
            SchemeId::Baseline => false,
            SchemeId::McCme => model == EadrModel::AllOperation,
            SchemeId::EadrCme | SchemeId::Sepencr => true,
            SchemeId::Bbe => model != EadrModel::WriteOnly,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "baseline" => Ok(SchemeId::Baseline),
            "mc-cme" | "mccme" | "cme" => Ok(SchemeId::McCme),
            "eadr-cme" | "eadrcme" => Ok(SchemeId::EadrCme),
            "bbe" => Ok(SchemeId::Bbe),
            "sepencr" => Ok(SchemeId::Sepencr),
            _ => Err(Error::config("scheme", format!("unknown scheme `{s}`"))),
        }
    }
}

/// Deliberate faults for negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Minor counters stop advancing after a line's first encryption, so
    /// later writes reuse the same pad.
    MinorCounterReuse,
}

#[derive(Clone, Debug)]
pub struct SystemConfig {
    pub geometry: CacheGeometry,
    pub nvm_size: u64,
    pub counter_cache_bytes: u64,
    pub key: Key128,
    pub latencies: LatencyTable,
    pub energies: EnergyTable,
    /// Capture bus events (needed for confidentiality audits).
    pub record_bus: bool,
    /// Capture the seed log (needed for pad-uniqueness audits).
    pub record_seeds: bool,
    pub fault: Option<Fault>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            geometry: CacheGeometry::default(),
            nvm_size: 16 << 30,
            counter_cache_bytes: 512 << 10,
            key: Key128::default(),
            latencies: LatencyTable::default(),
            energies: EnergyTable::default(),
            record_bus: true,
            record_seeds: true,
            fault: None,
        }
    }
}

/// One simulated machine running one scheme.
pub struct System {
    scheme: SchemeId,
    cfg: SystemConfig,
    map: AddressMap,
    cache: Hierarchy,
    nvm: Nvm,
    counters: CounterCache,
    engine: OtpEngine,
    incr: IncrCounterReg,
    crash_count: CrashCountReg,
    cotp: Option<CotpTable>,
    clock: CycleModel,
    stats: RunStats,
    step: u64,
    pending: Option<CrashRecord>,
}

impl System {
    pub fn new(scheme: SchemeId, cfg: SystemConfig) -> Result<Self> {
        let cache = Hierarchy::with_reserved_ways(cfg.geometry.clone(), scheme == SchemeId::Sepencr)?;
        let map = AddressMap::new(cfg.nvm_size, cache.total_slots())?;
        let mut nvm = Nvm::new(map);
        nvm.set_recording(cfg.record_bus);
        let mut engine = OtpEngine::new(cfg.key);
        engine.set_recording(cfg.record_seeds);
        let crash_count = CrashCountReg::new();
        let cotp = (scheme == SchemeId::Sepencr)
            .then(|| CotpTable::generate(&mut engine, &map, &cache, crash_count.value()));
        Ok(System {
            scheme,
            counters: CounterCache::new(cfg.counter_cache_bytes),
            clock: CycleModel::new(cfg.latencies.clone()),
            stats: RunStats::new(cfg.geometry.levels.len()),
            map,
            cache,
            nvm,
            engine,
            incr: IncrCounterReg::new(),
            crash_count,
            cotp,
            cfg,
            step: 0,
            pending: None,
        })
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn address_map(&self) -> &AddressMap {
        &self.map
    }

    pub fn cache(&self) -> &Hierarchy {
        &self.cache
    }

    pub fn nvm(&self) -> &Nvm {
        &self.nvm
    }

    pub fn trace(&self) -> &AdversaryTrace {
        self.nvm.trace()
    }

    pub fn seed_log(&self) -> &SeedLog {
        self.engine.log()
    }

    pub fn incr_counter(&self) -> u64 {
        self.incr.value()
    }

    pub fn crash_count(&self) -> u64 {
        self.crash_count.value()
    }

    pub fn cotp(&self) -> Option<&CotpTable> {
        self.cotp.as_ref()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn pending_crash(&self) -> Option<&CrashRecord> {
        self.pending.as_ref()
    }

    /// Raw content of a cache slot, exactly as stored.
    pub fn raw_slot(&self, n: usize) -> (Option<PhysAddr>, bool, DataLine) {
        let slot = self.cache.slot(n);
        (slot.tag, slot.dirty, slot.content)
    }

    pub fn stats(&self) -> RunStats {
        let mut stats = self.stats.clone();
        stats.counter_hits = self.counters.hits;
        stats.counter_misses = self.counters.misses;
        stats.otp_generations = self.engine.generated();
        stats.bus = self.nvm.counters();
        stats
    }

    /// Fraction of resident lines that are dirty.
    pub fn dirty_fraction(&self) -> f64 {
        let occupied = self.cache.occupied();
        if occupied == 0 {
            return 0.0;
        }
        self.cache.dirty_count() as f64 / occupied as f64
    }

    fn check_access(&self, core: usize, addr: PhysAddr) -> Result<()> {
        if self.pending.is_some() {
            return Err(Error::CrashPending);
        }
        self.cache.check_core(core)?;
        self.map.check_user(addr)
    }

    fn advance_step(&mut self) {
        self.step += 1;
        self.stats.host_ops += 1;
        self.nvm.set_step(self.step);
    }

    fn charge(&mut self, event: MemEvent) {
        self.clock.account_access(&mut self.stats, event, self.scheme);
    }

    pub fn host_write(&mut self, core: usize, addr: PhysAddr, value: DataLine) -> Result<()> {
        self.check_access(core, addr)?;
        let slot = self.ensure_resident(core, addr)?;
        let content = match self.scheme {
            SchemeId::Baseline | SchemeId::McCme | SchemeId::Bbe => value,
            SchemeId::Sepencr => {
                self.charge(MemEvent::HostTransform { counter_fetch: false });
                value ^ *self.cotp_pad(slot)
            }
            SchemeId::EadrCme => {
                let (major, minor, fetched) = self.advance_counter(addr, Some(slot))?;
                self.charge(MemEvent::HostTransform { counter_fetch: fetched });
                let pad = self.engine.gen_otp(&Seed::new(SeedDomain::RuntimeM, addr, major, minor), PadPurpose::Encrypt);
                value ^ pad.pad
            }
        };
        self.cache.set_content(slot, content);
        self.cache.set_dirty(slot, true);
        self.advance_step();
        Ok(())
    }

    pub fn host_read(&mut self, core: usize, addr: PhysAddr) -> Result<DataLine> {
        self.check_access(core, addr)?;
        let slot = self.ensure_resident(core, addr)?;
        let content = self.cache.slot(slot).content;
        let value = match self.scheme {
            SchemeId::Baseline | SchemeId::McCme | SchemeId::Bbe => content,
            SchemeId::Sepencr => {
                self.charge(MemEvent::HostTransform { counter_fetch: false });
                content ^ *self.cotp_pad(slot)
            }
            SchemeId::EadrCme => {
                let (block, fetched) = self.lookup_counters(region_base(addr))?;
                self.charge(MemEvent::HostTransform { counter_fetch: fetched });
                let idx = line_index(addr);
                if block.is_pristine(idx) {
                    content
                } else {
                    let (major, minor) = block.counter(idx);
                    let seed = Seed::new(SeedDomain::RuntimeM, addr, major, minor);
                    content ^ self.engine.gen_otp(&seed, PadPurpose::Decrypt).pad
                }
            }
        };
        self.advance_step();
        Ok(value)
    }

    fn cotp_pad(&self, slot: usize) -> &DataLine {
        self.cotp.as_ref().expect("C-OTP table is resident while running").pad(slot)
    }

    /// Makes `addr` resident in the core's first level and returns its slot.
    fn ensure_resident(&mut self, core: usize, addr: PhysAddr) -> Result<usize> {
        let cotp = self.cotp.as_ref();
        let mut relocate = |from: usize, to: usize, content: &mut DataLine| {
            if let Some(table) = cotp {
                *content = *content ^ (*table.pad(from) ^ *table.pad(to));
            }
        };
        match self.cache.lookup(addr) {
            Some(slot) => {
                let info = self.cache.hit_info(core, slot);
                let (dest, victim) = self.cache.promote(core, slot, &mut relocate);
                self.charge(MemEvent::Hit {
                    level: info.level,
                    remote: info.remote,
                });
                if let Some(victim) = victim {
                    self.evict_writeback(victim)?;
                }
                Ok(dest)
            }
            None => {
                let (slot, victim) = self.cache.make_room(core, addr, &mut relocate);
                self.charge(MemEvent::Miss);
                if let Some(victim) = victim {
                    self.evict_writeback(victim)?;
                }
                let content = self.fill(addr, slot)?;
                self.cache.place(slot, addr, content, false);
                Ok(slot)
            }
        }
    }

    /// Reads a line from NVM and returns the content to install in `slot`.
    fn fill(&mut self, addr: PhysAddr, slot: usize) -> Result<DataLine> {
        match self.scheme {
            SchemeId::Baseline | SchemeId::EadrCme => {
                self.charge(MemEvent::Fill { counter_fetch: false });
                self.nvm.read(addr, TrafficClass::UserData)
            }
            SchemeId::McCme | SchemeId::Bbe | SchemeId::Sepencr => {
                let (block, fetched) = self.lookup_counters(region_base(addr))?;
                self.charge(MemEvent::Fill { counter_fetch: fetched });
                let raw = self.nvm.read(addr, TrafficClass::UserData)?;
                let plain = self.mc_decrypt(addr, &block, raw, PadPurpose::Decrypt);
                Ok(match self.scheme {
                    SchemeId::Sepencr => plain ^ *self.cotp_pad(slot),
                    _ => plain,
                })
            }
        }
    }

    fn mc_decrypt(&mut self, addr: PhysAddr, block: &CounterBlock, raw: DataLine, purpose: PadPurpose) -> DataLine {
        let idx = line_index(addr);
        if block.is_pristine(idx) {
            return DataLine::ZERO;
        }
        let (major, minor) = block.counter(idx);
        raw ^ self.engine.gen_otp(&Seed::new(SeedDomain::RuntimeM, addr, major, minor), purpose).pad
    }

    fn lookup_counters(&mut self, region: PhysAddr) -> Result<(CounterBlock, bool)> {
        let (block, hit) = self.counters.lookup(region, &mut self.nvm)?;
        Ok((block.clone(), !hit))
    }

    /// Advances the counter of `addr` for a new encryption and handles a
    /// minor overflow. `cached_slot` is the line's own slot when the scheme
    /// keeps ciphertext in the cache. Returns `(major, minor, fetched)`.
    fn advance_counter(&mut self, addr: PhysAddr, cached_slot: Option<usize>) -> Result<(u64, u8, bool)> {
        let region = region_base(addr);
        let idx = line_index(addr);
        let fault = self.cfg.fault;
        let (block, hit) = self.counters.lookup(region, &mut self.nvm)?;
        let old = block.clone();
        let outcome = if fault == Some(Fault::MinorCounterReuse) && !block.is_pristine(idx) {
            BumpOutcome::Normal
        } else {
            bump_minor(block, idx)
        };
        let new = block.clone();
        self.counters.mark_dirty(region);
        if let BumpOutcome::Overflow(lines) = outcome {
            self.stats.counter_overflows += 1;
            for line in lines {
                if line != addr {
                    self.reencrypt_line(line, &old, &new, cached_slot.is_some())?;
                }
            }
        }
        let (major, minor) = new.counter(idx);
        Ok((major, minor, !hit))
    }

    /// Moves one region line from `old` to `new` counters after an overflow.
    fn reencrypt_line(&mut self, line: PhysAddr, old: &CounterBlock, new: &CounterBlock, in_cache_cipher: bool) -> Result<()> {
        let idx = line_index(line);
        let (major, minor) = new.counter(idx);
        let new_seed = Seed::new(SeedDomain::RuntimeM, line, major, minor);
        if in_cache_cipher {
            if let Some(slot) = self.cache.lookup(line) {
                let content = self.cache.slot(slot).content;
                let plain = self.mc_decrypt(line, old, content, PadPurpose::Decrypt);
                let pad = self.engine.gen_otp(&new_seed, PadPurpose::Encrypt).pad;
                self.cache.set_content(slot, plain ^ pad);
                self.cache.set_dirty(slot, true);
                return Ok(());
            }
        }
        let raw = self.nvm.read(line, TrafficClass::UserData)?;
        let plain = self.mc_decrypt(line, old, raw, PadPurpose::Decrypt);
        let pad = self.engine.gen_otp(&new_seed, PadPurpose::Encrypt).pad;
        self.nvm.write(line, plain ^ pad, TrafficClass::UserData)?;
        self.charge(MemEvent::QueuedWrite { line: line.line_number() });
        Ok(())
    }

    /// Memory-controller encryption of an outgoing line. `cache_pad` is the
    /// slot pad the payload still carries (Sepencr); it is combined with the
    /// fresh pad so the payload is XORed once.
    fn mc_encrypt_write(&mut self, addr: PhysAddr, payload: DataLine, cache_pad: Option<DataLine>) -> Result<()> {
        let (major, minor, _) = self.advance_counter(addr, None)?;
        let pad = self.engine.gen_otp(&Seed::new(SeedDomain::RuntimeM, addr, major, minor), PadPurpose::Encrypt).pad;
        let combined = match cache_pad {
            Some(c) => c ^ pad,
            None => pad,
        };
        self.nvm.write(addr, payload ^ combined, TrafficClass::UserData)
    }

    /// Writes a line leaving the hierarchy back to its home address.
    fn evict_writeback(&mut self, victim: Victim) -> Result<()> {
        if !victim.dirty {
            return Ok(());
        }
        match self.scheme {
            SchemeId::Baseline | SchemeId::EadrCme => {
                self.nvm.write(victim.tag, victim.content, TrafficClass::UserData)?;
            }
            SchemeId::McCme | SchemeId::Bbe => {
                self.mc_encrypt_write(victim.tag, victim.content, None)?;
            }
            SchemeId::Sepencr => {
                let slot_pad = *self.cotp_pad(victim.slot);
                self.mc_encrypt_write(victim.tag, victim.content, Some(slot_pad))?;
            }
        }
        self.charge(MemEvent::QueuedWrite {
            line: victim.tag.line_number(),
        });
        Ok(())
    }

    /// Plaintext of `addr` as the machine would return it, computed without
    /// touching the bus, the caches' replacement state or the seed log.
    pub fn peek(&self, addr: PhysAddr) -> Result<DataLine> {
        if self.pending.is_some() {
            return Err(Error::CrashPending);
        }
        self.map.check_user(addr)?;
        let region = region_base(addr);
        let idx = line_index(addr);
        let decrypt = |raw: DataLine| {
            let block = self.counters.peek(region, &self.nvm);
            if block.is_pristine(idx) {
                return DataLine::ZERO;
            }
            let (major, minor) = block.counter(idx);
            raw ^ self.engine.pad(&Seed::new(SeedDomain::RuntimeM, addr, major, minor)).pad
        };
        if let Some(slot) = self.cache.lookup(addr) {
            let content = self.cache.slot(slot).content;
            return Ok(match self.scheme {
                SchemeId::Baseline | SchemeId::McCme | SchemeId::Bbe => content,
                SchemeId::Sepencr => content ^ *self.cotp_pad(slot),
                SchemeId::EadrCme => decrypt(content),
            });
        }
        let raw = self.nvm.peek(addr);
        Ok(match self.scheme {
            SchemeId::Baseline => raw,
            _ => decrypt(raw),
        })
    }

    /// Diagnostic dump: registers, then one hex line per occupied slot and
    /// per valid shadow entry.
    pub fn snapshot(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "# scheme {} step {}", self.scheme, self.step);
        let _ = writeln!(out, "reg incr-counter {}", self.incr.value());
        let _ = writeln!(out, "reg crash-count {}", self.crash_count.value());
        for (n, slot) in self.cache.slots() {
            if let Some(tag) = slot.tag {
                let _ = writeln!(out, "slot {n} {tag} {} {}", u8::from(slot.dirty), slot.content.to_hex());
            }
        }
        for n in 0..self.cache.total_slots() {
            let word = self.nvm.peek(self.map.shadow_tag_line(n)).u64_at(n % 8);
            if word & 1 == 1 {
                let content = self.nvm.peek(self.map.shadow_addr(n));
                let _ = writeln!(out, "shadow {n} {:#x} {}", word & !1, content.to_hex());
            }
        }
        out
    }

    /// Bytes a crash under `model` would drain right now.
    pub fn flush_profile(&self, model: EadrModel) -> CrashFlushProfile {
        let cache_bytes_by_level = self.cache.dirty_bytes_by_level();
        let dirty: u64 = cache_bytes_by_level.iter().sum();
        let encrypts = match self.scheme {
            SchemeId::Bbe => true,
            SchemeId::McCme => model == EadrModel::AllOperation,
            _ => false,
        };
        CrashFlushProfile {
            crypto_bytes: if encrypts { dirty } else { 0 },
            mc_bytes: self.counters.dirty_count() as u64 * crate::cme::COUNTER_BLOCK_BYTES,
            cache_bytes_by_level,
        }
    }
}

/// The 64 line addresses a region's counter block covers.
pub fn region_lines(region: PhysAddr) -> impl Iterator<Item = PhysAddr> {
    (0..LINES_PER_BLOCK as u64).map(move |i| region.offset(i * 64))
}

#[cfg(test)]
mod tests;
