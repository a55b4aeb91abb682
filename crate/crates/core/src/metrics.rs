//! Cycle, energy and recovery-time accounting.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::cache::CacheGeometry;
use crate::line::LINE_BYTES;
use crate::nvm::BusCounters;
use crate::schemes::SchemeId;

/// Per-event latencies. Cache hit costs are in CPU cycles; NVM timings in
/// nanoseconds and converted with `cpu_clock_ghz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyTable {
    /// Hit latency per cache level, first level first.
    pub level_hit_cycles: Vec<u64>,
    /// Hit in another core's private cache.
    pub remote_hit_cycles: u64,
    pub t_rcd_ns: f64,
    pub t_cl_ns: f64,
    pub t_cwd_ns: f64,
    pub t_wr_ns: f64,
    // Recorded for completeness; the flat model does not use them.
    pub t_faw_ns: f64,
    pub t_wtr_ns: f64,
    pub write_queue_entries: usize,
    pub nvm_banks: usize,
    pub otp_gen_cycles: u64,
    pub xor_cycles: u64,
    pub cpu_clock_ghz: f64,
    /// NVM-to-cache transfer time of one line during recovery.
    pub recovery_line_ns: u64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            level_hit_cycles: vec![4, 12, 36],
            remote_hit_cycles: 36,
            t_rcd_ns: 48.0,
            t_cl_ns: 15.0,
            t_cwd_ns: 13.0,
            t_wr_ns: 300.0,
            t_faw_ns: 50.0,
            t_wtr_ns: 7.5,
            write_queue_entries: 64,
            nvm_banks: 16,
            otp_gen_cycles: 80,
            xor_cycles: 1,
            cpu_clock_ghz: 2.0,
            recovery_line_ns: 200,
        }
    }
}

impl LatencyTable {
    pub fn nvm_read_ns(&self) -> f64 {
        self.t_rcd_ns + self.t_cl_ns
    }

    pub fn nvm_write_ns(&self) -> f64 {
        self.t_cwd_ns + self.t_wr_ns
    }

    fn ns_to_cycles(&self, ns: f64) -> u64 {
        (ns * self.cpu_clock_ghz).round() as u64
    }

    pub fn nvm_read_cycles(&self) -> u64 {
        self.ns_to_cycles(self.nvm_read_ns())
    }

    pub fn nvm_write_cycles(&self) -> u64 {
        self.ns_to_cycles(self.nvm_write_ns())
    }

    pub fn hit_cycles(&self, level: usize) -> u64 {
        let table = &self.level_hit_cycles;
        table.get(level).or(table.last()).copied().unwrap_or(0)
    }

    pub fn miss_lookup_cycles(&self) -> u64 {
        self.level_hit_cycles.last().copied().unwrap_or(0)
    }
}

/// Crash-flush energy constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyTable {
    pub flush_l1_nj_per_byte: f64,
    pub flush_l2_nj_per_byte: f64,
    pub flush_l3_nj_per_byte: f64,
    pub flush_mc_nj_per_byte: f64,
    /// Per output byte of an XOR of two bytes.
    pub xor_fj_per_byte: f64,
    pub aes_pj_per_byte: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        EnergyTable {
            flush_l1_nj_per_byte: 11.839,
            flush_l2_nj_per_byte: 11.228,
            flush_l3_nj_per_byte: 11.228,
            flush_mc_nj_per_byte: 11.228,
            xor_fj_per_byte: 800.0,
            aes_pj_per_byte: 192.0,
        }
    }
}

impl EnergyTable {
    /// Levels past the third use the L3 rate.
    pub fn level_rate(&self, level: usize) -> f64 {
        match level {
            0 => self.flush_l1_nj_per_byte,
            1 => self.flush_l2_nj_per_byte,
            _ => self.flush_l3_nj_per_byte,
        }
    }
}

/// One step of the simulation stream, as seen by the cycle model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemEvent {
    Hit { level: usize, remote: bool },
    /// Lookup fell through every level.
    Miss,
    /// A line brought in from NVM; `counter_fetch` when its counter block
    /// missed in the counter cache.
    Fill { counter_fetch: bool },
    /// The scheme's per-access work between core and cache.
    HostTransform { counter_fetch: bool },
    /// A line entering the NVM write queue.
    QueuedWrite { line: u64 },
}

/// Bytes drained from each structure by one crash flush.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CrashFlushProfile {
    pub cache_bytes_by_level: Vec<u64>,
    pub mc_bytes: u64,
    /// Bytes run through the pad generator and XOR gates during the flush.
    pub crypto_bytes: u64,
}

/// Crash-flush energy in millijoules.
pub fn energy_crash_flush(profile: &CrashFlushProfile, energies: &EnergyTable) -> f64 {
    let nj: f64 = profile
        .cache_bytes_by_level
        .iter()
        .enumerate()
        .map(|(level, &bytes)| bytes as f64 * energies.level_rate(level))
        .sum::<f64>()
        + profile.mc_bytes as f64 * energies.flush_mc_nj_per_byte;
    let pj = profile.crypto_bytes as f64 * energies.aes_pj_per_byte;
    let fj = profile.crypto_bytes as f64 * energies.xor_fj_per_byte;
    nj * 1e-6 + pj * 1e-9 + fj * 1e-12
}

/// Flush profile of a crash with every user-visible line dirty and, for
/// schemes with a counter cache, a full counter cache.
pub fn full_cache_profile(scheme: SchemeId, geom: &CacheGeometry, counter_cache_bytes: u64) -> CrashFlushProfile {
    let full: Vec<u64> = (0..geom.levels.len()).map(|l| geom.level_bytes(l)).collect();
    let total: u64 = full.iter().sum();
    match scheme {
        SchemeId::Baseline => CrashFlushProfile {
            cache_bytes_by_level: full,
            mc_bytes: 0,
            crypto_bytes: 0,
        },
        SchemeId::Sepencr => CrashFlushProfile {
            cache_bytes_by_level: full.iter().map(|b| b / 2).collect(),
            mc_bytes: counter_cache_bytes,
            crypto_bytes: 0,
        },
        SchemeId::Bbe | SchemeId::McCme => CrashFlushProfile {
            cache_bytes_by_level: full,
            mc_bytes: counter_cache_bytes,
            crypto_bytes: total,
        },
        SchemeId::EadrCme => CrashFlushProfile {
            cache_bytes_by_level: full,
            mc_bytes: counter_cache_bytes,
            crypto_bytes: 0,
        },
    }
}

/// Time to bring flushed lines back after a reboot. Reads dominate; pad
/// generation overlaps them.
pub fn recovery_time(scheme: SchemeId, data_cache_bytes: u64, line_ns: u64) -> f64 {
    let bbe = (data_cache_bytes / LINE_BYTES * line_ns) as f64 * 1e-9;
    match scheme {
        SchemeId::Bbe => bbe,
        SchemeId::Sepencr => bbe / 2.0,
        _ => 0.0,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub total_cycles: u64,
    pub host_ops: u64,
    pub hits_by_level: Vec<u64>,
    pub remote_hits: u64,
    /// Accesses that missed every level (last-level misses).
    pub misses: u64,
    pub writebacks: u64,
    pub write_stall_cycles: u64,
    pub counter_hits: u64,
    pub counter_misses: u64,
    pub counter_overflows: u64,
    pub otp_generations: u64,
    pub bus: BusCounters,
    pub crashes: u64,
    pub crash_energy_mj: f64,
    pub recovery_seconds: f64,
}

impl RunStats {
    pub fn new(levels: usize) -> Self {
        RunStats {
            hits_by_level: vec![0; levels],
            ..Default::default()
        }
    }

    /// Adds another segment's counts into this one.
    pub fn accumulate(&mut self, other: &RunStats) {
        self.total_cycles += other.total_cycles;
        self.host_ops += other.host_ops;
        if self.hits_by_level.len() < other.hits_by_level.len() {
            self.hits_by_level.resize(other.hits_by_level.len(), 0);
        }
        for (a, b) in self.hits_by_level.iter_mut().zip(&other.hits_by_level) {
            *a += b;
        }
        self.remote_hits += other.remote_hits;
        self.misses += other.misses;
        self.writebacks += other.writebacks;
        self.write_stall_cycles += other.write_stall_cycles;
        self.counter_hits += other.counter_hits;
        self.counter_misses += other.counter_misses;
        self.counter_overflows += other.counter_overflows;
        self.otp_generations += other.otp_generations;
        self.bus.reads += other.bus.reads;
        self.bus.writes += other.bus.writes;
        self.bus.user_bytes += other.bus.user_bytes;
        self.bus.metadata_bytes += other.bus.metadata_bytes;
        self.crashes += other.crashes;
        self.crash_energy_mj += other.crash_energy_mj;
        self.recovery_seconds += other.recovery_seconds;
    }
}

/// Critical-path clock plus the NVM write queue it may stall on.
pub struct CycleModel {
    latencies: LatencyTable,
    now: u64,
    pending: BinaryHeap<Reverse<u64>>,
    bank_free: Vec<u64>,
}

impl CycleModel {
    pub fn new(latencies: LatencyTable) -> Self {
        let banks = latencies.nvm_banks.max(1);
        CycleModel {
            latencies,
            now: 0,
            pending: BinaryHeap::new(),
            bank_free: vec![0; banks],
        }
    }

    pub fn latencies(&self) -> &LatencyTable {
        &self.latencies
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Charges one event under `scheme`'s critical-path rule and returns the
    /// cycles added.
    pub fn account_access(&mut self, stats: &mut RunStats, event: MemEvent, scheme: SchemeId) -> u64 {
        let lat = &self.latencies;
        let read = lat.nvm_read_cycles();
        let cycles = match event {
            MemEvent::Hit { level, remote } => {
                if remote {
                    stats.remote_hits += 1;
                    lat.remote_hit_cycles
                } else {
                    if stats.hits_by_level.len() <= level {
                        stats.hits_by_level.resize(level + 1, 0);
                    }
                    stats.hits_by_level[level] += 1;
                    lat.hit_cycles(level)
                }
            }
            MemEvent::Miss => {
                stats.misses += 1;
                lat.miss_lookup_cycles()
            }
            MemEvent::Fill { counter_fetch } => match scheme {
                SchemeId::Baseline | SchemeId::EadrCme => read,
                // pad generation overlaps the data read once counters are on chip
                SchemeId::McCme | SchemeId::Bbe | SchemeId::Sepencr => {
                    if counter_fetch {
                        read + lat.otp_gen_cycles
                    } else {
                        read.max(lat.otp_gen_cycles)
                    }
                }
            },
            MemEvent::HostTransform { counter_fetch } => match scheme {
                SchemeId::EadrCme => lat.otp_gen_cycles + lat.xor_cycles + if counter_fetch { read } else { 0 },
                SchemeId::Sepencr => lat.xor_cycles,
                _ => 0,
            },
            MemEvent::QueuedWrite { line } => {
                stats.writebacks += 1;
                let stall = self.enqueue_write(line);
                stats.write_stall_cycles += stall;
                stall
            }
        };
        self.now += cycles;
        stats.total_cycles += cycles;
        cycles
    }

    /// Stall cycles spent waiting for a free write-queue entry.
    fn enqueue_write(&mut self, line: u64) -> u64 {
        while self.pending.peek().is_some_and(|Reverse(t)| *t <= self.now) {
            self.pending.pop();
        }
        let mut stall = 0;
        if self.pending.len() >= self.latencies.write_queue_entries.max(1) {
            let Reverse(first_free) = self.pending.pop().expect("queue is full");
            stall = first_free - self.now;
        }
        let issue = self.now + stall;
        let bank = (line % self.bank_free.len() as u64) as usize;
        let done = issue.max(self.bank_free[bank]) + self.latencies.nvm_write_cycles();
        self.bank_free[bank] = done;
        self.pending.push(Reverse(done));
        stall
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mj(x: f64) -> String {
        format!("{x:.4}")
    }

    #[test]
    fn nvm_timings_from_pcm_parameters() {
        let lat = LatencyTable::default();
        assert_eq!(lat.nvm_read_ns(), 63.0);
        assert_eq!(lat.nvm_write_ns(), 313.0);
        assert_eq!(lat.nvm_read_cycles(), 126);
        assert_eq!(lat.nvm_write_cycles(), 626);
    }

    #[test]
    fn l1_hit_costs_l1_latency() {
        let mut model = CycleModel::new(LatencyTable::default());
        let mut stats = RunStats::new(3);
        let c = model.account_access(&mut stats, MemEvent::Hit { level: 0, remote: false }, SchemeId::Baseline);
        assert_eq!(c, 4);
        assert_eq!(stats.hits_by_level, vec![1, 0, 0]);
    }

    #[test]
    fn fill_decryption_hidden_behind_read() {
        let mut model = CycleModel::new(LatencyTable::default());
        let mut stats = RunStats::new(3);
        let fill = MemEvent::Fill { counter_fetch: false };
        assert_eq!(model.account_access(&mut stats, fill, SchemeId::McCme), 126);
        assert_eq!(model.account_access(&mut stats, fill, SchemeId::Baseline), 126);
        let slow = LatencyTable {
            otp_gen_cycles: 300,
            ..LatencyTable::default()
        };
        let mut model = CycleModel::new(slow);
        assert_eq!(model.account_access(&mut stats, fill, SchemeId::Bbe), 300);
    }

    #[test]
    fn host_transform_rules() {
        let mut model = CycleModel::new(LatencyTable::default());
        let mut stats = RunStats::new(3);
        let t = MemEvent::HostTransform { counter_fetch: false };
        assert_eq!(model.account_access(&mut stats, t, SchemeId::EadrCme), 81);
        assert_eq!(model.account_access(&mut stats, t, SchemeId::Sepencr), 1);
        assert_eq!(model.account_access(&mut stats, t, SchemeId::Bbe), 0);
    }

    #[test]
    fn write_queue_stalls_when_full() {
        let lat = LatencyTable {
            write_queue_entries: 2,
            nvm_banks: 1,
            ..LatencyTable::default()
        };
        let mut model = CycleModel::new(lat);
        let mut stats = RunStats::new(3);
        let w = MemEvent::QueuedWrite { line: 0 };
        assert_eq!(model.account_access(&mut stats, w, SchemeId::Baseline), 0);
        assert_eq!(model.account_access(&mut stats, w, SchemeId::Baseline), 0);
        // first completes at 626, second at 1252
        assert_eq!(model.account_access(&mut stats, w, SchemeId::Baseline), 626);
        assert_eq!(stats.writebacks, 3);
        assert_eq!(stats.write_stall_cycles, 626);
    }

    #[test]
    fn table3_rows() {
        let g = CacheGeometry::default();
        let e = EnergyTable::default();
        let cc = 512 << 10;
        let base = energy_crash_flush(&full_cache_profile(SchemeId::Baseline, &g, cc), &e);
        let sep = energy_crash_flush(&full_cache_profile(SchemeId::Sepencr, &g, cc), &e);
        let bbe = energy_crash_flush(&full_cache_profile(SchemeId::Bbe, &g, cc), &e);
        assert_eq!(mj(base), "47.7343");
        assert_eq!(mj(sep), "29.7539");
        assert_eq!(mj(bbe), "54.4297");
    }

    #[test]
    fn encryption_term_from_constants() {
        // 4 MiB through AES at 192 pJ/B and XOR at 800 fJ/B
        let bytes = 4u64 << 20;
        let oracle_mj = bytes as f64 * 192e-12 * 1e3 + bytes as f64 * 800e-15 * 1e3;
        let profile = CrashFlushProfile {
            cache_bytes_by_level: vec![],
            mc_bytes: 0,
            crypto_bytes: bytes,
        };
        let got = energy_crash_flush(&profile, &EnergyTable::default());
        assert!((got - oracle_mj).abs() < 1e-12);
        assert_eq!(mj(got), "0.8087");
    }

    #[test]
    fn zero_dirty_bytes_zero_cache_energy() {
        let profile = CrashFlushProfile {
            cache_bytes_by_level: vec![0, 0, 0],
            mc_bytes: 0,
            crypto_bytes: 0,
        };
        assert_eq!(energy_crash_flush(&profile, &EnergyTable::default()), 0.0);
    }

    #[test]
    fn recovery_examples() {
        let mib = 1u64 << 20;
        let bbe32 = recovery_time(SchemeId::Bbe, 32 * mib, 200);
        assert_eq!(format!("{bbe32:.4}"), "0.1049");
        assert!(bbe32 < 0.11);
        assert!((bbe32 - 524_288.0 * 200e-9).abs() < 1e-15);
        assert_eq!(recovery_time(SchemeId::Sepencr, 32 * mib, 200) * 2.0, bbe32);
        let bbe4 = recovery_time(SchemeId::Bbe, 4 * mib, 200);
        assert_eq!(format!("{:.2}", bbe4 * 1e3), "13.11");
        assert_eq!(recovery_time(SchemeId::Baseline, 32 * mib, 200), 0.0);
    }
}
