use crate::cache::Hierarchy;
use crate::cme::{OtpEngine, PadPurpose, Seed, SeedDomain};
use crate::line::DataLine;
use crate::nvm::AddressMap;

/// Non-volatile crash-time counter. Starts at 1 and advances once per
/// enumerated cache slot during every crash flush.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IncrCounterReg(u64);

impl IncrCounterReg {
    pub fn new() -> Self {
        IncrCounterReg(1)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Returns the value to use and moves past it.
    pub fn take(&mut self) -> u64 {
        let v = self.0;
        self.0 += 1;
        v
    }
}

impl Default for IncrCounterReg {
    fn default() -> Self {
        Self::new()
    }
}

/// Non-volatile count of crash/recovery cycles. Starts at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrashCountReg(u64);

impl CrashCountReg {
    pub fn new() -> Self {
        CrashCountReg(1)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn bump(&mut self) {
        self.0 += 1;
    }
}

impl Default for CrashCountReg {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-slot pads held in the reserved half of the cache. `pads[N]` covers
/// the line in slot `N`; reserved slots carry no pad.
pub struct CotpTable {
    crash_count: u64,
    pads: Vec<DataLine>,
}

impl CotpTable {
    pub fn seed(map: &AddressMap, slot: usize, crash_count: u64) -> Seed {
        Seed::new(SeedDomain::StartupCotp, map.slot_seed_addr(slot), crash_count, 0)
    }

    pub fn generate(engine: &mut OtpEngine, map: &AddressMap, cache: &Hierarchy, crash_count: u64) -> Self {
        let pads = (0..cache.total_slots())
            .map(|n| {
                if cache.is_usable(n) {
                    engine.gen_otp(&Self::seed(map, n, crash_count), PadPurpose::Encrypt).pad
                } else {
                    DataLine::ZERO
                }
            })
            .collect();
        CotpTable { crash_count, pads }
    }

    pub fn pad(&self, slot: usize) -> &DataLine {
        &self.pads[slot]
    }

    pub fn crash_count(&self) -> u64 {
        self.crash_count
    }
}
