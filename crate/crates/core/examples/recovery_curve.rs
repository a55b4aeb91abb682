//! Recovery time against data cache size, analytic and simulated.

use eadr_sim::experiment::{simulated_recovery_seconds, RECOVERY_CURVE_MIB};
use eadr_sim::{recovery_time, EadrModel, SchemeId};

fn main() -> eadr_sim::Result<()> {
    println!("{:>6} {:>12} {:>12} {:>12}", "MiB", "bbe", "sepencr", "bbe (sim)");
    for mib in RECOVERY_CURVE_MIB {
        let bytes = mib << 20;
        let sim = simulated_recovery_seconds(SchemeId::Bbe, bytes, EadrModel::WriteComputeOrder)?;
        println!(
            "{mib:>6} {:>12.7} {:>12.7} {:>12.7}",
            recovery_time(SchemeId::Bbe, bytes, 200),
            recovery_time(SchemeId::Sepencr, bytes, 200),
            sim
        );
    }
    Ok(())
}
