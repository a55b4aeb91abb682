use super::*;
use crate::cache::LevelSpec;
use crate::crash_audit::CrashOp;
use crate::nvm::Direction;

fn small() -> SystemConfig {
    SystemConfig {
        geometry: CacheGeometry {
            cores: 2,
            levels: vec![LevelSpec::new("L1", 512, 2, true), LevelSpec::new("L2", 2048, 4, false)],
        },
        nvm_size: 1 << 20,
        counter_cache_bytes: 256,
        ..SystemConfig::default()
    }
}

fn v(x: u64) -> DataLine {
    DataLine::splat_u64(x)
}

fn user_writes(sys: &System) -> Vec<(PhysAddr, DataLine)> {
    sys.trace()
        .user_events()
        .filter(|e| e.direction == Direction::ToNvm)
        .map(|e| (e.subject, e.payload))
        .collect()
}

#[test]
fn names_round_trip() {
    for s in SchemeId::ALL {
        assert_eq!(s.to_string().parse::<SchemeId>().unwrap(), s);
    }
    assert!("rot13".parse::<SchemeId>().is_err());
}

#[test]
fn reads_return_last_write_under_eviction_pressure() {
    for scheme in SchemeId::ALL {
        let mut sys = System::new(scheme, small()).unwrap();
        for i in 0..200u64 {
            sys.host_write((i % 2) as usize, PhysAddr(i * 64 % 8192), v(i + 1)).unwrap();
        }
        for i in 72..200u64 {
            let addr = PhysAddr(i * 64 % 8192);
            assert_eq!(sys.host_read(((i + 1) % 2) as usize, addr).unwrap(), v(i + 1), "{scheme} {addr}");
        }
        assert_eq!(sys.host_read(0, PhysAddr(1 << 19)).unwrap(), DataLine::ZERO, "{scheme}");
        assert!(sys.stats().writebacks > 0 || sys.stats().bus.writes > 0, "{scheme}");
    }
}

#[test]
fn baseline_writebacks_are_plaintext_and_cme_writebacks_are_not() {
    for (scheme, leaks) in [(SchemeId::Baseline, true), (SchemeId::McCme, false), (SchemeId::Sepencr, false)] {
        let mut sys = System::new(scheme, small()).unwrap();
        for i in 0..64u64 {
            sys.host_write(0, PhysAddr(i * 64), v(i + 1)).unwrap();
        }
        let writes = user_writes(&sys);
        assert!(!writes.is_empty());
        let plain = writes.iter().filter(|(a, p)| *p == v(a.value() / 64 + 1)).count();
        assert_eq!(plain == writes.len(), leaks, "{scheme}");
        assert_eq!(plain == 0, !leaks, "{scheme}");
    }
}

#[test]
fn eadr_cme_caches_ciphertext() {
    let mut sys = System::new(SchemeId::EadrCme, small()).unwrap();
    sys.host_write(0, PhysAddr(0), v(5)).unwrap();
    let slot = sys.cache().lookup(PhysAddr(0)).unwrap();
    let (_, dirty, raw) = sys.raw_slot(slot);
    assert!(dirty);
    assert_ne!(raw, v(5));
    assert_eq!(sys.peek(PhysAddr(0)).unwrap(), v(5));
}

#[test]
fn sepencr_halves_capacity_and_pads_each_slot() {
    let sys = System::new(SchemeId::Sepencr, small()).unwrap();
    assert_eq!(sys.cache().usable_slots() * 2, sys.cache().total_slots());
    let table = sys.cotp().unwrap();
    let usable: Vec<usize> = (0..sys.cache().total_slots()).filter(|&n| sys.cache().is_usable(n)).collect();
    let pads: std::collections::HashSet<_> = usable.iter().map(|&n| *table.pad(n)).collect();
    assert_eq!(pads.len(), usable.len());
    assert!(pads.iter().all(|p| !p.is_zero()));
}

#[test]
fn sepencr_relocation_keeps_values() {
    let mut sys = System::new(SchemeId::Sepencr, small()).unwrap();
    sys.host_write(0, PhysAddr(0), v(9)).unwrap();
    // Pushes line 0 down to L2, then pulls it into core 1's L1.
    for i in 1..6u64 {
        sys.host_write(0, PhysAddr(i * 4 * 64), v(i)).unwrap();
    }
    assert_eq!(sys.host_read(1, PhysAddr(0)).unwrap(), v(9));
}

#[test]
fn bbe_rejects_write_only() {
    let mut sys = System::new(SchemeId::Bbe, small()).unwrap();
    sys.host_write(0, PhysAddr(0), v(1)).unwrap();
    assert!(matches!(
        sys.crash(EadrModel::WriteOnly),
        Err(Error::IncompatibleModel { scheme: SchemeId::Bbe, .. })
    ));
    assert!(!EadrModel::WriteOnly.allows(CrashOp::Compute));
}

#[test]
fn crash_state_machine_errors() {
    let mut sys = System::new(SchemeId::Baseline, small()).unwrap();
    assert!(matches!(sys.recover(), Err(Error::NoPendingCrash)));
    sys.crash(EadrModel::WriteOnly).unwrap();
    assert!(matches!(sys.host_read(0, PhysAddr(0)), Err(Error::CrashPending)));
    assert!(matches!(sys.crash(EadrModel::WriteOnly), Err(Error::CrashPending)));
    sys.recover().unwrap();
    assert!(sys.host_read(0, PhysAddr(0)).is_ok());
}

#[test]
fn bbe_incr_counter_advances_once_per_slot() {
    let mut sys = System::new(SchemeId::Bbe, small()).unwrap();
    let slots = sys.cache().total_slots() as u64;
    for i in 0..slots * 2 {
        sys.host_write(0, PhysAddr(i * 64), v(i + 1)).unwrap();
    }
    assert_eq!(sys.incr_counter(), 1);
    sys.crash(EadrModel::WriteComputeOrder).unwrap();
    assert_eq!(sys.incr_counter(), 1 + slots);
    sys.recover().unwrap();
    assert_eq!(sys.incr_counter(), 1 + slots);
    for i in 0..slots * 2 {
        assert_eq!(sys.peek(PhysAddr(i * 64)).unwrap(), v(i + 1));
    }
    sys.crash(EadrModel::AllOperation).unwrap();
    assert_eq!(sys.incr_counter(), 1 + 2 * slots);
}

#[test]
fn bbe_recovery_restores_slots_in_place() {
    let mut sys = System::new(SchemeId::Bbe, small()).unwrap();
    for i in 0..10u64 {
        sys.host_write(0, PhysAddr(i * 64), v(i + 1)).unwrap();
    }
    let before: Vec<_> = (0..sys.cache().total_slots()).map(|n| sys.raw_slot(n)).collect();
    sys.crash(EadrModel::WriteComputeOrder).unwrap();
    let report = sys.recover().unwrap();
    assert_eq!(report.lines_restored, 10);
    let after: Vec<_> = (0..sys.cache().total_slots()).map(|n| sys.raw_slot(n)).collect();
    assert_eq!(before.iter().filter(|s| s.1).collect::<Vec<_>>(), after.iter().filter(|s| s.1).collect::<Vec<_>>());
    assert!((report.seconds - 10.0 * 200e-9).abs() < 1e-15);
}

#[test]
fn corrupted_shadow_tag_is_unrecoverable() {
    let mut sys = System::new(SchemeId::Bbe, small()).unwrap();
    sys.host_write(0, PhysAddr(0), v(1)).unwrap();
    sys.crash(EadrModel::AllOperation).unwrap();
    let slot0_tag = sys.map.shadow_tag_line(0);
    let mut line = sys.nvm.peek(slot0_tag);
    // Slot 0 sits in set 0; an address from set 1 cannot have come from it.
    line.set_u64(0, 64 | 1);
    sys.nvm.write(slot0_tag, line, TrafficClass::SecurityMetadata).unwrap();
    assert!(matches!(sys.recover(), Err(Error::Unrecoverable(_))));
}

#[test]
fn sepencr_recovery_rotates_pads() {
    let mut sys = System::new(SchemeId::Sepencr, small()).unwrap();
    let first = *sys.cotp().unwrap().pad(0);
    sys.host_write(0, PhysAddr(0), v(3)).unwrap();
    sys.crash(EadrModel::WriteOnly).unwrap();
    assert!(sys.cotp().is_none());
    let shadow_writes = user_writes(&sys).into_iter().filter(|(a, _)| *a == PhysAddr(0)).count();
    assert_eq!(shadow_writes, 1);
    sys.recover().unwrap();
    assert_eq!(sys.crash_count(), 2);
    assert_ne!(*sys.cotp().unwrap().pad(0), first);
    assert_eq!(sys.host_read(0, PhysAddr(0)).unwrap(), v(3));
}

#[test]
fn mc_cme_write_only_flush_leaks_then_replay_encrypts() {
    let mut sys = System::new(SchemeId::McCme, small()).unwrap();
    for i in 0..5u64 {
        sys.host_write(0, PhysAddr(i * 64), v(i + 1)).unwrap();
    }
    sys.crash(EadrModel::WriteOnly).unwrap();
    for i in 0..5u64 {
        assert_eq!(sys.nvm().peek(PhysAddr(i * 64)), v(i + 1));
    }
    let report = sys.recover().unwrap();
    assert_eq!(report.reencrypted, 5);
    for i in 0..5u64 {
        assert_ne!(sys.nvm().peek(PhysAddr(i * 64)), v(i + 1));
        assert_eq!(sys.peek(PhysAddr(i * 64)).unwrap(), v(i + 1));
    }
}

#[test]
fn minor_overflow_reencrypts_region() {
    for scheme in [SchemeId::EadrCme, SchemeId::McCme] {
        let mut cfg = small();
        cfg.geometry = CacheGeometry::single_level(128, 2);
        let mut sys = System::new(scheme, cfg).unwrap();
        for i in 0..64u64 {
            sys.host_write(0, PhysAddr(i * 64), v(i + 100)).unwrap();
        }
        for n in 0..300u64 {
            // For MC-CME alternate with a conflicting line so every write
            // reaches the memory controller.
            sys.host_write(0, PhysAddr(0), v(n)).unwrap();
            if scheme == SchemeId::McCme {
                sys.host_write(0, PhysAddr(4096 + (n % 2) * 128), v(1)).unwrap();
            }
        }
        assert!(sys.stats().counter_overflows >= 1, "{scheme}");
        assert_eq!(sys.host_read(0, PhysAddr(0)).unwrap(), v(299), "{scheme}");
        for i in 1..64u64 {
            assert_eq!(sys.host_read(0, PhysAddr(i * 64)).unwrap(), v(i + 100), "{scheme} line {i}");
        }
        assert!(crate::crash_audit::audit_pad_uniqueness(sys.seed_log()).is_empty(), "{scheme}");
    }
}

#[test]
fn minor_counter_reuse_fault_repeats_seeds() {
    let mut cfg = small();
    cfg.fault = Some(Fault::MinorCounterReuse);
    let mut sys = System::new(SchemeId::EadrCme, cfg).unwrap();
    sys.host_write(0, PhysAddr(0), v(1)).unwrap();
    sys.host_write(0, PhysAddr(0), v(2)).unwrap();
    assert!(!crate::crash_audit::audit_pad_uniqueness(sys.seed_log()).is_empty());
}

#[test]
fn flush_profile_counts_crypto_only_where_the_flush_encrypts() {
    for (scheme, model, crypto) in [
        (SchemeId::Bbe, EadrModel::WriteComputeOrder, true),
        (SchemeId::McCme, EadrModel::AllOperation, true),
        (SchemeId::McCme, EadrModel::WriteOnly, false),
        (SchemeId::Sepencr, EadrModel::WriteOnly, false),
    ] {
        let mut sys = System::new(scheme, small()).unwrap();
        sys.host_write(0, PhysAddr(0), v(1)).unwrap();
        let p = sys.flush_profile(model);
        assert_eq!(p.cache_bytes_by_level.iter().sum::<u64>(), 64);
        assert_eq!(p.crypto_bytes == 64, crypto, "{scheme} {model}");
    }
}

#[test]
fn snapshot_lists_registers_slots_and_shadow() {
    let mut sys = System::new(SchemeId::Bbe, small()).unwrap();
    sys.host_write(0, PhysAddr(0x40), v(1)).unwrap();
    assert!(sys.snapshot().contains("reg incr-counter 1"));
    assert!(sys.snapshot().contains(" 0x40 1 "));
    sys.crash(EadrModel::AllOperation).unwrap();
    sys.recover().unwrap();
    assert!(sys.snapshot().contains("shadow "));
}
