//! Memory-controller encryption against every eADR model: the crash flush
//! either has no encryption engine or has to expose plaintext.

use eadr_sim::{run_scenario, DataLine, EadrModel, Op, OpTrace, PhysAddr, Scenario, SchemeId};

fn main() -> eadr_sim::Result<()> {
    let trace = OpTrace::new((0..5).map(|i| Op::write(0, PhysAddr(i * 64), DataLine::splat_u64(i + 1))).collect());
    println!("{:<10} {:<20} {:>10} {:>10}", "scheme", "model", "leaks", "persistent");
    for scheme in [SchemeId::Baseline, SchemeId::McCme, SchemeId::EadrCme] {
        for model in EadrModel::ALL {
            let out = run_scenario(&Scenario::new(scheme, model).with_crashes([5]), &trace)?;
            println!(
                "{:<10} {:<20} {:>10} {:>10}",
                scheme.to_string(),
                model.to_string(),
                out.report.confidentiality_violations.len(),
                out.report.is_persistent()
            );
        }
    }
    Ok(())
}
