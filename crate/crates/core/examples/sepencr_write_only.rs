//! Pre-generated per-slot pads keep the cache encrypted, so a write-only
//! crash can copy it out verbatim.

use eadr_sim::{DataLine, EadrModel, GroundTruth, Op, PhysAddr, SchemeId, System, SystemConfig};

fn main() -> eadr_sim::Result<()> {
    let mut sys = System::new(SchemeId::Sepencr, SystemConfig::default())?;
    println!(
        "usable slots {} of {}",
        sys.cache().usable_slots(),
        sys.cache().total_slots()
    );
    let secret = DataLine::splat_u64(0x5ec2e7);
    let mut truth = GroundTruth::new();
    truth.apply(&Op::write(0, PhysAddr(0x1000), secret));
    sys.host_write(0, PhysAddr(0x1000), secret)?;
    let slot = sys.cache().lookup(PhysAddr(0x1000)).expect("resident");
    let (_, dirty, stored) = sys.raw_slot(slot);
    println!("slot {slot} dirty={dirty} holds {}...", &stored.to_hex()[..32]);
    assert_ne!(stored, secret);

    let rec = sys.crash(EadrModel::WriteOnly)?;
    println!("crash copied {} dirty lines, {:.6} mJ", rec.dirty_lines, rec.energy_mj);
    let report = sys.recover()?;
    println!("recovery read {} shadow lines, crash count now {}", report.shadow_reads, sys.crash_count());
    assert_eq!(sys.host_read(0, PhysAddr(0x1000))?, secret);
    let leaks = eadr_sim::audit_confidentiality(sys.trace(), &truth);
    println!("plaintext lines seen on the bus: {}", leaks.len());
    Ok(())
}
