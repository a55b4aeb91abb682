use serde::Serialize;

use super::{SchemeId, System};
use crate::cache::slot_index_of;
use crate::cme::{PadPurpose, Seed, SeedDomain};
use crate::crash_audit::{CrashOp, EadrModel};
use crate::error::{Error, Result};
use crate::line::{DataLine, PhysAddr};
use crate::metrics::{energy_crash_flush, CrashFlushProfile, MemEvent};
use crate::nvm::TrafficClass;

use super::registers::CotpTable;

/// What the persistence domain does with dirty cache lines at power loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashPolicy {
    /// The scheme's crash flush runs to completion.
    #[default]
    Flush,
    /// Dirty lines are lost. Reference mode for persistence negative controls.
    Discard,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrashRecord {
    pub model: EadrModel,
    pub policy: CrashPolicy,
    /// Host operations completed before power was lost.
    pub step: u64,
    pub dirty_lines: usize,
    pub profile: CrashFlushProfile,
    pub energy_mj: f64,
    pub nvm_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub lines_restored: usize,
    pub shadow_reads: usize,
    pub reencrypted: usize,
    pub seconds: f64,
}

fn require(model: EadrModel, op: CrashOp) -> Result<()> {
    if model.allows(op) {
        Ok(())
    } else {
        Err(Error::ForbiddenCrashOp { model, op })
    }
}

fn tag_word(addr: PhysAddr) -> u64 {
    addr.value() | 1
}

impl System {
    pub fn crash(&mut self, model: EadrModel) -> Result<&CrashRecord> {
        self.crash_with(model, CrashPolicy::Flush)
    }

    /// Simulates power loss after the current step: runs the crash flush the
    /// scheme and `model` permit, then drops all volatile state.
    pub fn crash_with(&mut self, model: EadrModel, policy: CrashPolicy) -> Result<&CrashRecord> {
        if self.pending.is_some() {
            return Err(Error::CrashPending);
        }
        self.scheme.check_model(model)?;
        let profile = self.flush_profile(model);
        let dirty: Vec<(usize, PhysAddr, DataLine)> = self
            .cache
            .slots()
            .filter(|(_, s)| s.dirty)
            .map(|(n, s)| (n, s.tag.expect("dirty slots are occupied"), s.content))
            .collect();
        let dirty_lines = dirty.len();

        if policy == CrashPolicy::Flush {
            require(model, CrashOp::Write)?;
            match self.scheme {
                SchemeId::Baseline | SchemeId::EadrCme => {
                    for &(_, addr, content) in &dirty {
                        self.nvm.write(addr, content, TrafficClass::UserData)?;
                    }
                }
                SchemeId::McCme if model == EadrModel::AllOperation => {
                    require(model, CrashOp::Read)?;
                    require(model, CrashOp::Compute)?;
                    for &(_, addr, content) in &dirty {
                        self.mc_encrypt_write(addr, content, None)?;
                    }
                }
                SchemeId::McCme => self.flush_raw_with_log(&dirty)?,
                SchemeId::Bbe => {
                    require(model, CrashOp::Compute)?;
                    self.flush_bbe(&dirty)?;
                }
                SchemeId::Sepencr => self.flush_shadow(&dirty, |_, _, content| Ok(content))?,
            }
        }
        // The counter cache sits inside the persistence domain in every mode.
        self.counters.flush_dirty(&mut self.nvm)?;

        let energy_mj = if policy == CrashPolicy::Flush {
            energy_crash_flush(&profile, &self.cfg.energies)
        } else {
            0.0
        };
        self.nvm.snapshot();
        self.cache.clear();
        self.counters.clear();
        self.cotp = None;
        self.stats.crashes += 1;
        self.stats.crash_energy_mj += energy_mj;
        self.pending = Some(CrashRecord {
            model,
            policy,
            step: self.step,
            dirty_lines,
            profile,
            energy_mj,
            nvm_hash: self.nvm.content_hash(),
        });
        Ok(self.pending.as_ref().expect("just set"))
    }

    /// Plaintext to home plus an address log, so recovery can encrypt the
    /// lines once reads are available again.
    fn flush_raw_with_log(&mut self, dirty: &[(usize, PhysAddr, DataLine)]) -> Result<()> {
        let map = self.map;
        let mut log_line = DataLine::ZERO;
        for (i, &(_, addr, content)) in dirty.iter().enumerate() {
            self.nvm.write(addr, content, TrafficClass::UserData)?;
            log_line.set_u64(i % 8, addr.value());
            if i % 8 == 7 || i + 1 == dirty.len() {
                self.nvm.write(map.raw_log_line(i), log_line, TrafficClass::SecurityMetadata)?;
                log_line = DataLine::ZERO;
            }
        }
        let mut header = DataLine::ZERO;
        header.set_u64(0, dirty.len() as u64);
        self.nvm.write(map.raw_log_header(), header, TrafficClass::SecurityMetadata)
    }

    /// Encrypts each dirty line with a crash-time pad into its shadow entry.
    /// The incr counter advances for every slot, occupied or not, so the pad
    /// of slot `N` is recoverable from the final register value alone.
    fn flush_bbe(&mut self, dirty: &[(usize, PhysAddr, DataLine)]) -> Result<()> {
        let total = self.cache.total_slots();
        let mut incr_of = Vec::with_capacity(total);
        for _ in 0..total {
            incr_of.push(self.incr.take());
        }
        let map = self.map;
        self.flush_shadow(dirty, |engine, n, content| {
            let seed = Seed::new(SeedDomain::CrashBbe, map.slot_seed_addr(n), incr_of[n], 0);
            Ok(content ^ engine.gen_otp(&seed, PadPurpose::Encrypt).pad)
        })
    }

    /// Writes the transformed dirty lines into shadow entries and rewrites
    /// every shadow tag line.
    fn flush_shadow(
        &mut self,
        dirty: &[(usize, PhysAddr, DataLine)],
        mut encode: impl FnMut(&mut crate::cme::OtpEngine, usize, DataLine) -> Result<DataLine>,
    ) -> Result<()> {
        let total = self.cache.total_slots();
        let mut tags = vec![DataLine::ZERO; total.div_ceil(8)];
        for &(n, addr, content) in dirty {
            let payload = encode(&mut self.engine, n, content)?;
            self.nvm
                .write_for(self.map.shadow_addr(n), addr, payload, TrafficClass::UserData)?;
            tags[n / 8].set_u64(n % 8, tag_word(addr));
        }
        for (i, line) in tags.into_iter().enumerate() {
            self.nvm
                .write(self.map.shadow_tag_line(i * 8), line, TrafficClass::SecurityMetadata)?;
        }
        Ok(())
    }

    /// Reads the valid shadow entries and checks them before anything is
    /// restored. Returns `(slot, addr)` in slot order.
    fn read_shadow_tags(&mut self) -> Result<Vec<(usize, PhysAddr)>> {
        let total = self.cache.total_slots();
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for i in 0..total.div_ceil(8) {
            let line = self
                .nvm
                .read(self.map.shadow_tag_line(i * 8), TrafficClass::SecurityMetadata)?;
            for w in 0..8 {
                let n = i * 8 + w;
                let word = line.u64_at(w);
                if n >= total || word & 1 == 0 {
                    continue;
                }
                let addr = PhysAddr(word & !1);
                self.map
                    .check_user(addr)
                    .map_err(|e| Error::Unrecoverable(format!("shadow entry {n}: {e}")))?;
                if !self.cache.is_usable(n) {
                    return Err(Error::Unrecoverable(format!("shadow entry {n} names a reserved slot")));
                }
                let loc = self.cache.locate(n);
                let set = slot_index_of(addr, self.cache.geometry(), loc.level)?;
                if set != loc.set {
                    return Err(Error::Unrecoverable(format!(
                        "shadow entry {n}: {addr} does not map to set {}",
                        loc.set
                    )));
                }
                if !seen.insert(addr) {
                    return Err(Error::Unrecoverable(format!("{addr} appears in two shadow entries")));
                }
                entries.push((n, addr));
            }
        }
        Ok(entries)
    }

    /// Brings the machine back after [`System::crash`]: restores shadowed
    /// lines into the slots they were flushed from and finishes any deferred
    /// encryption.
    pub fn recover(&mut self) -> Result<RecoveryReport> {
        if self.pending.is_none() {
            return Err(Error::NoPendingCrash);
        }
        let discarded = self.pending.as_ref().is_some_and(|p| p.policy == CrashPolicy::Discard);
        let mut report = RecoveryReport::default();
        match self.scheme {
            SchemeId::Sepencr if discarded => {
                self.crash_count.bump();
                self.cotp = Some(CotpTable::generate(&mut self.engine, &self.map, &self.cache, self.crash_count.value()));
            }
            _ if discarded => {}
            SchemeId::Baseline | SchemeId::EadrCme => {}
            SchemeId::McCme => report.reencrypted = self.replay_raw_log()?,
            SchemeId::Bbe => {
                let entries = self.read_shadow_tags()?;
                let total = self.cache.total_slots() as u64;
                let base = self.incr.value().checked_sub(total).ok_or_else(|| {
                    Error::Unrecoverable("incr counter is below the slot count".into())
                })?;
                for (n, addr) in entries {
                    let raw = self.nvm.read_for(self.map.shadow_addr(n), addr, TrafficClass::UserData)?;
                    let seed = Seed::new(SeedDomain::CrashBbe, self.map.slot_seed_addr(n), base + n as u64, 0);
                    let plain = raw ^ self.engine.gen_otp(&seed, PadPurpose::Decrypt).pad;
                    self.cache.place(n, addr, plain, true);
                    report.shadow_reads += 1;
                    report.lines_restored += 1;
                }
            }
            SchemeId::Sepencr => {
                let entries = self.read_shadow_tags()?;
                let old = self.crash_count.value();
                self.crash_count.bump();
                let table = CotpTable::generate(&mut self.engine, &self.map, &self.cache, self.crash_count.value());
                for (n, addr) in entries {
                    let raw = self.nvm.read_for(self.map.shadow_addr(n), addr, TrafficClass::UserData)?;
                    let old_pad = self
                        .engine
                        .gen_otp(&CotpTable::seed(&self.map, n, old), PadPurpose::Decrypt)
                        .pad;
                    self.cache.place(n, addr, raw ^ old_pad ^ *table.pad(n), true);
                    report.shadow_reads += 1;
                    report.lines_restored += 1;
                }
                self.cotp = Some(table);
            }
        }
        report.seconds = (report.shadow_reads as u64 * self.cfg.latencies.recovery_line_ns) as f64 * 1e-9;
        self.stats.recovery_seconds += report.seconds;
        self.pending = None;
        Ok(report)
    }

    /// Encrypts the lines a raw crash flush left in plaintext and clears the log.
    fn replay_raw_log(&mut self) -> Result<usize> {
        let map = self.map;
        let header = self.nvm.read(map.raw_log_header(), TrafficClass::SecurityMetadata)?;
        let count = header.u64_at(0) as usize;
        if count as u64 > map.cache_slots {
            return Err(Error::Unrecoverable(format!("raw-flush log claims {count} lines")));
        }
        let mut addrs = Vec::with_capacity(count);
        for i in (0..count).step_by(8) {
            let line = self.nvm.read(map.raw_log_line(i), TrafficClass::SecurityMetadata)?;
            for w in 0..8.min(count - i) {
                let addr = PhysAddr(line.u64_at(w));
                map.check_user(addr)
                    .map_err(|e| Error::Unrecoverable(format!("raw-flush log entry {}: {e}", i + w)))?;
                addrs.push(addr);
            }
        }
        for &addr in &addrs {
            let plain = self.nvm.read(addr, TrafficClass::UserData)?;
            self.mc_encrypt_write(addr, plain, None)?;
            self.charge(MemEvent::QueuedWrite { line: addr.line_number() });
        }
        self.counters.flush_dirty(&mut self.nvm)?;
        if count > 0 {
            self.nvm
                .write(map.raw_log_header(), DataLine::ZERO, TrafficClass::SecurityMetadata)?;
        }
        Ok(addrs.len())
    }
}
