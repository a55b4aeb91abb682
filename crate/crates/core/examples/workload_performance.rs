//! Cycle counts of each scheme on the five transactional workloads,
//! normalized to the unencrypted baseline.

use eadr_sim::crash_audit::{run_scenario, Scenario};
use eadr_sim::{multicore_trace, EadrModel, SchemeId, SystemConfig, TxnSpec, WorkloadKind};

fn main() -> eadr_sim::Result<()> {
    let sys = SystemConfig {
        record_bus: false,
        record_seeds: false,
        ..SystemConfig::default()
    };
    let spec = TxnSpec {
        txn_size: 256,
        n_txns: 2_000,
        ..TxnSpec::default()
    };
    println!("{:<8} {:>10} {:>10} {:>10} {:>10}", "workload", "mc-cme", "eadr-cme", "bbe", "sepencr");
    for kind in WorkloadKind::ALL {
        let trace = multicore_trace(kind, &spec, 4)?;
        let cycles = |scheme| -> eadr_sim::Result<f64> {
            let out = run_scenario(
                &Scenario::new(scheme, EadrModel::AllOperation).with_system(sys.clone()),
                &trace,
            )?;
            Ok(out.stats.total_cycles as f64)
        };
        let base = cycles(SchemeId::Baseline)?;
        print!("{:<8}", kind.to_string());
        for scheme in [SchemeId::McCme, SchemeId::EadrCme, SchemeId::Bbe, SchemeId::Sepencr] {
            print!(" {:>10.3}", cycles(scheme)? / base);
        }
        println!();
    }
    Ok(())
}
