//! Crash injection under the eADR execution models and the three audits that
//! decide whether a scheme is secure and persistent.
//!
//! The audits only look at artifacts a run leaves behind: the adversary's
//! bus trace, the seed log of the pad generator, and the values a recovered
//! machine returns. [`GroundTruth`] is the reference interpreter they compare
//! against; it replays the same op stream and never consults a scheme.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cme::{PadPurpose, SeedLog};
use crate::error::{Error, Result};
use crate::line::{DataLine, PhysAddr};
use crate::metrics::RunStats;
use crate::nvm::{AdversaryTrace, Direction, TrafficClass};
use crate::schemes::{CrashPolicy, CrashRecord, RecoveryReport, SchemeId, System, SystemConfig};
use crate::workloads::{Op, OpKind, OpTrace};

/// Which operations the backup power can sustain while the caches drain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EadrModel {
    AllOperation,
    WriteComputeOrder,
    WriteOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashOp {
    Read,
    Compute,
    Write,
}

impl EadrModel {
    pub const ALL: [EadrModel; 3] = [EadrModel::AllOperation, EadrModel::WriteComputeOrder, EadrModel::WriteOnly];

    pub fn name(self) -> &'static str {
        match self {
            EadrModel::AllOperation => "all-operation",
            EadrModel::WriteComputeOrder => "write-compute-order",
            EadrModel::WriteOnly => "write-only",
        }
    }

    pub fn allows(self, op: CrashOp) -> bool {
        model_allows(self, op)
    }
}

pub fn model_allows(model: EadrModel, op: CrashOp) -> bool {
    match (model, op) {
        (_, CrashOp::Write) => true,
        (EadrModel::WriteOnly, _) => false,
        (EadrModel::WriteComputeOrder, CrashOp::Read) => false,
        _ => true,
    }
}

impl fmt::Display for EadrModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EadrModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "all-operation" | "all" => Ok(EadrModel::AllOperation),
            "write-compute-order" | "wco" => Ok(EadrModel::WriteComputeOrder),
            "write-only" | "wo" => Ok(EadrModel::WriteOnly),
            _ => Err(Error::config("model", format!("unknown eADR model `{s}`"))),
        }
    }
}

impl fmt::Display for CrashOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrashOp::Read => "read",
            CrashOp::Compute => "compute",
            CrashOp::Write => "write",
        })
    }
}

/// Reference interpreter: per-address write history indexed by the step of
/// the op that wrote it.
#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    history: HashMap<u64, Vec<(u64, DataLine)>>,
    step: u64,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Applies one op and returns the value a correct machine reads (for
    /// reads) or the value now stored (for writes).
    pub fn apply(&mut self, op: &Op) -> DataLine {
        let out = match op.kind {
            OpKind::Read => self.current(op.addr),
            OpKind::Write => {
                let value = op.value.unwrap_or_default();
                self.history.entry(op.addr.value()).or_default().push((self.step, value));
                value
            }
        };
        self.step += 1;
        out
    }

    pub fn current(&self, addr: PhysAddr) -> DataLine {
        self.history
            .get(&addr.value())
            .and_then(|h| h.last())
            .map_or(DataLine::ZERO, |&(_, v)| v)
    }

    /// Value of `addr` as seen by the op at `step`: the last write issued
    /// strictly earlier.
    pub fn value_at(&self, addr: PhysAddr, step: u64) -> DataLine {
        let Some(history) = self.history.get(&addr.value()) else {
            return DataLine::ZERO;
        };
        let idx = history.partition_point(|&(s, _)| s < step);
        if idx == 0 {
            DataLine::ZERO
        } else {
            history[idx - 1].1
        }
    }

    /// Whether `addr` was ever written with `payload`.
    fn ever_held(&self, addr: PhysAddr, payload: &DataLine) -> bool {
        self.history
            .get(&addr.value())
            .is_some_and(|h| h.iter().any(|(_, v)| v == payload))
    }

    pub fn written_addrs(&self) -> impl Iterator<Item = PhysAddr> + '_ {
        self.history.keys().map(|&a| PhysAddr(a))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub step: u64,
    pub addr: PhysAddr,
    pub subject: PhysAddr,
    pub payload: DataLine,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateSeed {
    pub seed: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    /// Step of the crash after which the mismatch was observed.
    pub crash_step: u64,
    pub addr: PhysAddr,
    pub expected: DataLine,
    pub got: DataLine,
}

/// Flags user-data transfers whose payload is the plaintext of the line they
/// carry. All-zero plaintext is exempt: zero lines are not secret and a
/// zero payload only says the pad was zero.
pub fn audit_confidentiality(trace: &AdversaryTrace, truth: &GroundTruth) -> Vec<Violation> {
    let mut exposed = std::collections::HashSet::new();
    let mut out = Vec::new();
    for e in trace.events.iter().filter(|e| e.class == TrafficClass::UserData && !e.payload.is_zero()) {
        let leak = match e.direction {
            Direction::ToNvm => truth.value_at(e.subject, e.step) == e.payload,
            // Reading back a value already counted when it was written is
            // not a new exposure.
            Direction::FromNvm => {
                truth.ever_held(e.subject, &e.payload) && !exposed.contains(&(e.subject, e.payload))
            }
        };
        if leak {
            exposed.insert((e.subject, e.payload));
            out.push(Violation {
                step: e.step,
                addr: e.addr,
                subject: e.subject,
                payload: e.payload,
            });
        }
    }
    out
}

/// Seeds used more than once to encrypt. Regenerating a pad to decrypt is
/// expected and ignored.
pub fn audit_pad_uniqueness(log: &SeedLog) -> Vec<DuplicateSeed> {
    let mut counts: HashMap<u128, usize> = HashMap::new();
    for record in log.records().iter().filter(|r| r.purpose == PadPurpose::Encrypt) {
        *counts.entry(record.seed).or_default() += 1;
    }
    let dups: BTreeMap<u128, usize> = counts.into_iter().filter(|&(_, c)| c > 1).collect();
    dups.into_iter()
        .map(|(seed, count)| DuplicateSeed {
            seed: format!("{seed:032x}"),
            count,
        })
        .collect()
}

/// Compares every line the program has written against what the recovered
/// machine returns for it.
pub fn audit_persistence(sys: &System, truth: &GroundTruth, crash_step: u64) -> Result<Vec<Mismatch>> {
    let mut addrs: Vec<PhysAddr> = truth.written_addrs().collect();
    addrs.sort_unstable();
    let mut out = Vec::new();
    for addr in addrs {
        let expected = truth.current(addr);
        let got = sys.peek(addr)?;
        if got != expected {
            out.push(Mismatch {
                crash_step,
                addr,
                expected,
                got,
            });
        }
    }
    Ok(out)
}

/// Findings of one run. Empty lists mean the audit passed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub confidentiality_violations: Vec<Violation>,
    pub duplicate_seeds: Vec<DuplicateSeed>,
    pub persistence_mismatches: Vec<Mismatch>,
}

impl AuditReport {
    pub fn is_confidential(&self) -> bool {
        self.confidentiality_violations.is_empty() && self.duplicate_seeds.is_empty()
    }

    pub fn is_persistent(&self) -> bool {
        self.persistence_mismatches.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.is_confidential() && self.is_persistent()
    }

    pub fn violations(&self) -> usize {
        self.confidentiality_violations.len() + self.duplicate_seeds.len() + self.persistence_mismatches.len()
    }

    /// Report document with counts and at most `first_k` records per audit.
    pub fn to_json(&self, first_k: usize) -> serde_json::Value {
        fn head<T: Serialize>(items: &[T], k: usize) -> serde_json::Value {
            serde_json::to_value(&items[..items.len().min(k)]).expect("plain data serializes")
        }
        serde_json::json!({
            "passed": self.passed(),
            "confidentiality": {
                "violations": self.confidentiality_violations.len(),
                "first": head(&self.confidentiality_violations, first_k),
            },
            "pad_uniqueness": {
                "duplicates": self.duplicate_seeds.len(),
                "first": head(&self.duplicate_seeds, first_k),
            },
            "persistence": {
                "mismatches": self.persistence_mismatches.len(),
                "first": head(&self.persistence_mismatches, first_k),
            },
        })
    }
}

/// One run of an op trace with crashes injected at chosen points.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub scheme: SchemeId,
    pub model: EadrModel,
    pub system: SystemConfig,
    pub policy: CrashPolicy,
    /// Number of ops completed before each crash. Points beyond the trace
    /// are clamped to its end.
    pub crash_points: Vec<u64>,
}

impl Scenario {
    pub fn new(scheme: SchemeId, model: EadrModel) -> Self {
        Scenario {
            scheme,
            model,
            system: SystemConfig::default(),
            policy: CrashPolicy::Flush,
            crash_points: Vec::new(),
        }
    }

    pub fn with_system(mut self, system: SystemConfig) -> Self {
        self.system = system;
        self
    }

    pub fn with_crashes(mut self, points: impl IntoIterator<Item = u64>) -> Self {
        self.crash_points = points.into_iter().collect();
        self
    }

    pub fn with_policy(mut self, policy: CrashPolicy) -> Self {
        self.policy = policy;
        self
    }
}

pub struct Outcome {
    pub report: AuditReport,
    pub stats: RunStats,
    /// Values returned by the trace's reads, in order.
    pub reads: Vec<DataLine>,
    pub crashes: Vec<CrashRecord>,
    pub recoveries: Vec<RecoveryReport>,
    pub system: System,
    pub truth: GroundTruth,
}

/// Crashes `sys` after its current step, recovers it and audits persistence.
pub fn inject_crash(
    sys: &mut System,
    truth: &GroundTruth,
    model: EadrModel,
    policy: CrashPolicy,
) -> Result<(CrashRecord, RecoveryReport, Vec<Mismatch>)> {
    let record = sys.crash_with(model, policy)?.clone();
    let recovery = sys.recover()?;
    let mismatches = audit_persistence(sys, truth, record.step)?;
    Ok((record, recovery, mismatches))
}

/// Runs `trace` under the scenario, then runs every audit.
pub fn run_scenario(scenario: &Scenario, trace: &OpTrace) -> Result<Outcome> {
    scenario.scheme.check_model(scenario.model)?;
    let mut sys = System::new(scenario.scheme, scenario.system.clone())?;
    let mut truth = GroundTruth::new();
    let len = trace.ops.len() as u64;
    let mut points: Vec<u64> = scenario.crash_points.iter().map(|&p| p.min(len)).collect();
    points.sort_unstable();
    points.dedup();
    let mut points = points.into_iter().peekable();

    let mut report = AuditReport::default();
    let mut reads = Vec::new();
    let mut crashes = Vec::new();
    let mut recoveries = Vec::new();
    for (i, op) in trace.ops.iter().enumerate() {
        while points.next_if_eq(&(i as u64)).is_some() {
            let (record, recovery, mismatches) = inject_crash(&mut sys, &truth, scenario.model, scenario.policy)?;
            report.persistence_mismatches.extend(mismatches);
            crashes.push(record);
            recoveries.push(recovery);
        }
        match op.kind {
            OpKind::Read => reads.push(sys.host_read(op.core, op.addr)?),
            OpKind::Write => sys.host_write(op.core, op.addr, op.value.unwrap_or_default())?,
        }
        truth.apply(op);
    }
    if points.next().is_some() {
        let (record, recovery, mismatches) = inject_crash(&mut sys, &truth, scenario.model, scenario.policy)?;
        report.persistence_mismatches.extend(mismatches);
        crashes.push(record);
        recoveries.push(recovery);
    }
    report.confidentiality_violations = audit_confidentiality(sys.trace(), &truth);
    report.duplicate_seeds = audit_pad_uniqueness(sys.seed_log());
    Ok(Outcome {
        report,
        stats: sys.stats(),
        reads,
        crashes,
        recoveries,
        system: sys,
        truth,
    })
}
