//! Crashes a hash-table workload after every op and audits each run.

use eadr_sim::crash_audit::{run_scenario, Scenario};
use eadr_sim::{multicore_trace, EadrModel, SchemeId, TxnSpec, WorkloadKind};

fn main() -> eadr_sim::Result<()> {
    let spec = TxnSpec {
        txn_size: 128,
        n_txns: 40,
        ..TxnSpec::default()
    };
    let trace = multicore_trace(WorkloadKind::Hash, &spec, 2)?;
    for (scheme, model) in [
        (SchemeId::Bbe, EadrModel::WriteComputeOrder),
        (SchemeId::Sepencr, EadrModel::WriteOnly),
        (SchemeId::McCme, EadrModel::WriteOnly),
    ] {
        let mut failed = 0;
        for k in 0..=trace.len() as u64 {
            let out = run_scenario(&Scenario::new(scheme, model).with_crashes([k]), &trace)?;
            failed += usize::from(!out.report.passed());
        }
        println!("{scheme} / {model}: {} crash points, {failed} failed audits", trace.len() + 1);
    }
    Ok(())
}
