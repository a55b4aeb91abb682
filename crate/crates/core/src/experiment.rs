//! Experiment driver behind the `eadr-sim` binary: configuration, the
//! scheme × model × workload matrix, crash sweeps and report emission.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::cache::CacheGeometry;
use crate::cme::{Key128, SeedLog};
use crate::crash_audit::{
    audit_confidentiality, audit_pad_uniqueness, run_scenario, AuditReport, EadrModel, GroundTruth, Scenario,
};
use crate::error::{Error, Result};
use crate::line::{DataLine, PhysAddr, LINE_BYTES};
use crate::metrics::{energy_crash_flush, full_cache_profile, recovery_time, EnergyTable, LatencyTable, RunStats};
use crate::nvm::AdversaryTrace;
use crate::schemes::{CrashPolicy, SchemeId, System, SystemConfig};
use crate::workloads::{multicore_trace, OpTrace, TxnSpec, WorkloadKind};

/// Where crashes are injected in each run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum CrashSpec {
    #[default]
    None,
    /// One run per listed step.
    Steps(Vec<u64>),
    /// `k` runs, crashing at `i * len / k` for `i = 1..=k`.
    Sweep(u64),
}

impl CrashSpec {
    /// Crash points for a trace of `len` ops; `None` means a crash-free run.
    pub fn points(&self, len: u64) -> Vec<Option<u64>> {
        match self {
            CrashSpec::None => vec![None],
            CrashSpec::Steps(steps) => steps.iter().map(|&s| Some(s.min(len))).collect(),
            CrashSpec::Sweep(k) => (1..=*k).map(|i| Some(i * len / k)).collect(),
        }
    }
}

impl fmt::Display for CrashSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashSpec::None => f.write_str("none"),
            CrashSpec::Steps(s) if s.len() == 1 => write!(f, "step:{}", s[0]),
            CrashSpec::Steps(s) => {
                let list: Vec<String> = s.iter().map(u64::to_string).collect();
                write!(f, "steps:{}", list.join(","))
            }
            CrashSpec::Sweep(k) => write!(f, "sweep:{k}"),
        }
    }
}

impl FromStr for CrashSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("crash", format!("`{s}` is not none, step:K, steps:A,B,.. or sweep:K"));
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "none" if arg.is_empty() => Ok(CrashSpec::None),
            "step" | "steps" => {
                let steps = arg
                    .split(',')
                    .map(|x| x.trim().parse::<u64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad())?;
                if steps.is_empty() {
                    return Err(bad());
                }
                Ok(CrashSpec::Steps(steps))
            }
            "sweep" => match arg.parse::<u64>() {
                Ok(k) if k > 0 => Ok(CrashSpec::Sweep(k)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl Serialize for CrashSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CrashSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a run needs. Serialized form is the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schemes: Vec<SchemeId>,
    pub models: Vec<EadrModel>,
    pub workloads: Vec<WorkloadKind>,
    pub txn_sizes: Vec<u64>,
    pub cores: Vec<usize>,
    pub n_txns: u64,
    /// Cap on ops per cell (merged across cores).
    pub ops: Option<u64>,
    pub arena_bytes: u64,
    pub crash: CrashSpec,
    pub rng_seed: u64,
    pub value_seed: u64,
    pub key: String,
    pub nvm_size: u64,
    pub counter_cache_bytes: u64,
    pub geometry: CacheGeometry,
    pub latencies: LatencyTable,
    pub energies: EnergyTable,
    /// Drop dirty lines at crash instead of flushing them.
    pub discard_on_crash: bool,
    /// Every cell must show at least one confidentiality violation.
    pub expect_leak: bool,
    /// Skip incompatible scheme/model pairs instead of rejecting the config.
    pub skip_incompatible: bool,
    /// Records kept per audit in JSON reports.
    pub report_first_k: usize,
    pub output: Option<PathBuf>,
    /// Also write each cell's op trace, bus trace and seed log.
    pub save_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sys = SystemConfig::default();
        ExperimentConfig {
            schemes: vec![SchemeId::Sepencr],
            models: vec![EadrModel::WriteOnly],
            workloads: vec![WorkloadKind::Array],
            txn_sizes: vec![64],
            cores: vec![1],
            n_txns: 1000,
            ops: None,
            arena_bytes: TxnSpec::default().arena_bytes,
            crash: CrashSpec::None,
            rng_seed: 1,
            value_seed: 2,
            key: sys.key.to_hex(),
            nvm_size: sys.nvm_size,
            counter_cache_bytes: sys.counter_cache_bytes,
            geometry: sys.geometry,
            latencies: sys.latencies,
            energies: sys.energies,
            discard_on_crash: false,
            expect_leak: false,
            skip_incompatible: false,
            report_first_k: 10,
            output: None,
            save_traces: false,
        }
    }
}

impl ExperimentConfig {
    /// Every scheme, model, workload, transaction size and core count.
    pub fn full_matrix() -> Self {
        ExperimentConfig {
            schemes: SchemeId::ALL.to_vec(),
            models: EadrModel::ALL.to_vec(),
            workloads: WorkloadKind::ALL.to_vec(),
            txn_sizes: vec![64, 256, 1024],
            cores: vec![1, 2, 4, 8],
            skip_incompatible: true,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, ignoring where output goes.
    pub fn hash(&self) -> String {
        let normalized = ExperimentConfig {
            output: None,
            save_traces: false,
            ..self.clone()
        };
        let canonical = serde_json::to_string(&normalized).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn system_config(&self) -> Result<SystemConfig> {
        Ok(SystemConfig {
            geometry: self.geometry.clone(),
            nvm_size: self.nvm_size,
            counter_cache_bytes: self.counter_cache_bytes,
            key: Key128::from_hex(&self.key).map_err(|_| Error::config("key", "expected 32 hex digits"))?,
            latencies: self.latencies.clone(),
            energies: self.energies.clone(),
            record_bus: true,
            record_seeds: true,
            fault: None,
        })
    }

    fn txn_spec(&self, txn_size: u64) -> TxnSpec {
        TxnSpec {
            txn_size,
            n_txns: self.n_txns,
            rng_seed: self.rng_seed,
            value_seed: self.value_seed,
            arena_bytes: self.arena_bytes,
            op_limit: self.ops,
        }
    }

    /// Checks every field and every scheme/model pair before anything runs.
    /// Returns the pairs to run.
    pub fn validate(&self) -> Result<Vec<(SchemeId, EadrModel)>> {
        for (field, empty) in [
            ("schemes", self.schemes.is_empty()),
            ("models", self.models.is_empty()),
            ("workloads", self.workloads.is_empty()),
            ("txn_sizes", self.txn_sizes.is_empty()),
            ("cores", self.cores.is_empty()),
        ] {
            if empty {
                return Err(Error::config(field, "must list at least one value"));
            }
        }
        if let Some(&c) = self.cores.iter().find(|&&c| c == 0 || c > self.geometry.cores || c > 8) {
            return Err(Error::config(
                "cores",
                format!("{c} is outside 1..={}", self.geometry.cores.min(8)),
            ));
        }
        for &txn in &self.txn_sizes {
            self.txn_spec(txn).validate()?;
        }
        self.system_config()?;
        self.geometry.validate()?;
        let max_core = *self.cores.iter().max().expect("non-empty") as u64;
        if max_core * crate::workloads::CORE_ARENA_STRIDE > self.nvm_size {
            return Err(Error::config("nvm_size", "too small for the per-core arenas"));
        }
        let mut pairs = Vec::new();
        for &scheme in &self.schemes {
            for &model in &self.models {
                match scheme.check_model(model) {
                    Ok(()) => pairs.push((scheme, model)),
                    Err(_) if self.skip_incompatible => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(pairs)
    }
}

/// Coordinates of one run in the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub scheme: SchemeId,
    pub model: EadrModel,
    pub workload: WorkloadKind,
    pub txn_size: u64,
    pub cores: usize,
    pub crash_step: Option<u64>,
}

impl Cell {
    pub fn label(&self) -> String {
        let crash = self.crash_step.map_or("none".to_string(), |s| s.to_string());
        format!(
            "{}-{}-{}-{}B-{}c-crash{}",
            self.scheme, self.model, self.workload, self.txn_size, self.cores, crash
        )
    }
}

/// One row of the results table plus its audit.
#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    pub ops: usize,
    pub stats: RunStats,
    pub report: AuditReport,
    /// Whether the audits came out the way the configuration expects.
    pub as_expected: bool,
}

fn expected(scheme: SchemeId, model: EadrModel, cfg: &ExperimentConfig, report: &AuditReport) -> bool {
    if cfg.expect_leak {
        return !report.confidentiality_violations.is_empty();
    }
    let persistent_ok = cfg.discard_on_crash || report.is_persistent();
    let confidential_ok = !scheme.is_secure_under(model) || report.is_confidential();
    persistent_ok && confidential_ok
}

/// Artifacts of one cell, kept only when traces are saved.
pub struct CellArtifacts {
    pub ops: OpTrace,
    pub bus: AdversaryTrace,
    pub seeds: SeedLog,
}

/// Runs one cell of the matrix.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell, trace: &OpTrace) -> Result<(CellResult, Option<CellArtifacts>)> {
    let scenario = Scenario {
        scheme: cell.scheme,
        model: cell.model,
        system: cfg.system_config()?,
        policy: if cfg.discard_on_crash {
            CrashPolicy::Discard
        } else {
            CrashPolicy::Flush
        },
        crash_points: cell.crash_step.into_iter().collect(),
    };
    let out = run_scenario(&scenario, trace)?;
    let as_expected = expected(cell.scheme, cell.model, cfg, &out.report);
    let artifacts = cfg.save_traces.then(|| CellArtifacts {
        ops: trace.clone(),
        bus: out.system.trace().clone(),
        seeds: out.system.seed_log().clone(),
    });
    Ok((
        CellResult {
            cell,
            ops: trace.len(),
            stats: out.stats,
            report: out.report,
            as_expected,
        },
        artifacts,
    ))
}

pub struct ExperimentOutput {
    pub csv: String,
    pub cells: Vec<CellResult>,
}

impl ExperimentOutput {
    pub fn all_as_expected(&self) -> bool {
        self.cells.iter().all(|c| c.as_expected)
    }
}

fn csv_header(cfg: &ExperimentConfig) -> String {
    format!("# config-sha256 {}\n", cfg.hash())
}

/// Runs every cell. When `cfg.output` is set, writes `results.csv` plus one
/// JSON audit per cell into that directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pairs = cfg.validate()?;
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir.join("audits"))?;
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "scheme",
        "model",
        "workload",
        "txn_size",
        "cores",
        "crash_step",
        "ops",
        "cycles",
        "energy_mj",
        "recovery_s",
        "violations",
        "passed",
    ])?;
    let mut cells = Vec::new();
    for &workload in &cfg.workloads {
        for &txn_size in &cfg.txn_sizes {
            for &cores in &cfg.cores {
                let trace = multicore_trace(workload, &cfg.txn_spec(txn_size), cores)?;
                for &(scheme, model) in &pairs {
                    for crash_step in cfg.crash.points(trace.len() as u64) {
                        let coords = Cell {
                            scheme,
                            model,
                            workload,
                            txn_size,
                            cores,
                            crash_step,
                        };
                        let (cell, artifacts) = run_cell(cfg, coords, &trace)?;
                        writer.write_record([
                            scheme.to_string(),
                            model.to_string(),
                            workload.to_string(),
                            txn_size.to_string(),
                            cores.to_string(),
                            crash_step.map_or("none".into(), |s| s.to_string()),
                            cell.ops.to_string(),
                            cell.stats.total_cycles.to_string(),
                            format!("{:.4}", cell.stats.crash_energy_mj),
                            format!("{:.9}", cell.stats.recovery_seconds),
                            cell.report.violations().to_string(),
                            cell.as_expected.to_string(),
                        ])?;
                        if let Some(dir) = &cfg.output {
                            write_cell_files(dir, cfg, &cell, artifacts.as_ref())?;
                        }
                        cells.push(cell);
                    }
                }
            }
        }
    }
    let body = String::from_utf8(writer.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    let csv = csv_header(cfg) + &body;
    if let Some(dir) = &cfg.output {
        fs::write(dir.join("results.csv"), &csv)?;
    }
    Ok(ExperimentOutput { csv, cells })
}

fn write_cell_files(dir: &Path, cfg: &ExperimentConfig, cell: &CellResult, artifacts: Option<&CellArtifacts>) -> Result<()> {
    let label = cell.cell.label();
    let mut doc = cell.report.to_json(cfg.report_first_k);
    doc["cell"] = serde_json::to_value(cell.cell)?;
    doc["as_expected"] = cell.as_expected.into();
    doc["config_sha256"] = cfg.hash().into();
    fs::write(
        dir.join("audits").join(format!("{label}.json")),
        serde_json::to_string_pretty(&doc)?,
    )?;
    if let Some(a) = artifacts {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        fs::write(traces.join(format!("{label}.ops.txt")), a.ops.to_text())?;
        fs::write(traces.join(format!("{label}.bus.txt")), a.bus.to_text())?;
        fs::write(traces.join(format!("{label}.seeds.txt")), a.seeds.to_text())?;
    }
    Ok(())
}

/// Crash-flush energy of a fully dirty cache for the three schemes the
/// energy comparison covers, as CSV.
pub fn table3_rows(geometry: &CacheGeometry, counter_cache_bytes: u64, energies: &EnergyTable) -> Vec<(SchemeId, f64)> {
    [SchemeId::Baseline, SchemeId::Sepencr, SchemeId::Bbe]
        .into_iter()
        .map(|s| {
            let profile = full_cache_profile(s, geometry, counter_cache_bytes);
            (s, energy_crash_flush(&profile, energies))
        })
        .collect()
}

pub fn table3_csv(cfg: &ExperimentConfig) -> String {
    let mut out = csv_header(cfg);
    out.push_str("scheme,energy_mj\n");
    for (scheme, mj) in table3_rows(&cfg.geometry, cfg.counter_cache_bytes, &cfg.energies) {
        out.push_str(&format!("{scheme},{mj:.4}\n"));
    }
    out
}

pub const RECOVERY_CURVE_MIB: [u64; 5] = [2, 4, 8, 16, 32];

/// Recovery time versus data cache size for the two shadow-region schemes.
pub fn recovery_curve_csv(cfg: &ExperimentConfig, sizes_mib: &[u64]) -> String {
    let mut out = csv_header(cfg);
    out.push_str("cache_mib,bbe_s,sepencr_s\n");
    for &mib in sizes_mib {
        let bytes = mib << 20;
        let line_ns = cfg.latencies.recovery_line_ns;
        out.push_str(&format!(
            "{mib},{:.7},{:.7}\n",
            recovery_time(SchemeId::Bbe, bytes, line_ns),
            recovery_time(SchemeId::Sepencr, bytes, line_ns)
        ));
    }
    out
}

/// Measures recovery by filling a single-level cache of `bytes` with dirty
/// lines, crashing and recovering.
pub fn simulated_recovery_seconds(scheme: SchemeId, bytes: u64, model: EadrModel) -> Result<f64> {
    let cfg = SystemConfig {
        geometry: CacheGeometry::single_level(bytes, 16),
        nvm_size: (bytes * 4).max(1 << 20),
        record_bus: false,
        record_seeds: false,
        ..SystemConfig::default()
    };
    let mut sys = System::new(scheme, cfg)?;
    let lines = sys.cache().usable_slots() as u64;
    let sets = bytes / LINE_BYTES / 16;
    // Fill every usable way of every set.
    for i in 0..lines {
        let (set, way) = (i % sets, i / sets);
        let addr = PhysAddr((way * sets + set) * LINE_BYTES);
        sys.host_write(0, addr, DataLine::splat_u64(i + 1))?;
    }
    sys.crash(model)?;
    Ok(sys.recover()?.seconds)
}

/// Re-runs the trace-only audits over saved artifacts.
pub fn audit_saved(ops: &str, bus: &str, seeds: Option<&str>) -> Result<AuditReport> {
    let ops = OpTrace::from_text(ops)?;
    let bus = AdversaryTrace::from_text(bus)?;
    let mut truth = GroundTruth::new();
    for op in &ops.ops {
        truth.apply(op);
    }
    let duplicate_seeds = match seeds {
        Some(text) => audit_pad_uniqueness(&SeedLog::from_text(text)?),
        None => Vec::new(),
    };
    Ok(AuditReport {
        confidentiality_violations: audit_confidentiality(&bus, &truth),
        duplicate_seeds,
        persistence_mismatches: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crash_spec_parses_and_prints() {
        for text in ["none", "step:50", "steps:1,2,3", "sweep:10"] {
            assert_eq!(text.parse::<CrashSpec>().unwrap().to_string(), text);
        }
        for bad in ["", "step:", "sweep:0", "steps:a", "often"] {
            assert!(bad.parse::<CrashSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_points_are_even() {
        assert_eq!(
            CrashSpec::Sweep(4).points(100),
            vec![Some(25), Some(50), Some(75), Some(100)]
        );
        assert_eq!(CrashSpec::Steps(vec![500]).points(100), vec![Some(100)]);
        assert_eq!(CrashSpec::None.points(100), vec![None]);
    }

    #[test]
    fn config_json_round_trips_and_hash_is_stable() {
        let cfg = ExperimentConfig {
            crash: CrashSpec::Sweep(3),
            ..ExperimentConfig::full_matrix()
        };
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial = ExperimentConfig::from_json(r#"{"schemes": ["bbe"], "crash": "step:5"}"#).unwrap();
        assert_eq!(partial.schemes, vec![SchemeId::Bbe]);
        assert_eq!(partial.n_txns, ExperimentConfig::default().n_txns);
        assert!(ExperimentConfig::from_json(r#"{"schemez": []}"#).is_err());
    }

    #[test]
    fn incompatible_pair_is_rejected_before_running() {
        let cfg = ExperimentConfig {
            schemes: vec![SchemeId::Sepencr, SchemeId::Bbe],
            models: vec![EadrModel::WriteOnly],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::IncompatibleModel { .. })));
        let skipping = ExperimentConfig {
            skip_incompatible: true,
            ..cfg
        };
        assert_eq!(skipping.validate().unwrap(), vec![(SchemeId::Sepencr, EadrModel::WriteOnly)]);
    }

    #[test]
    fn bad_fields_name_themselves() {
        let cfg = ExperimentConfig {
            txn_sizes: vec![100],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("txn_size"));
        let cfg = ExperimentConfig {
            cores: vec![9],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("cores"));
    }

    #[test]
    fn table3_default_rows() {
        let csv = table3_csv(&ExperimentConfig::default());
        let rows: Vec<&str> = csv.lines().skip(2).collect();
        assert_eq!(rows, ["baseline,47.7343", "sepencr,29.7539", "bbe,54.4297"]);
    }

    #[test]
    fn simulated_recovery_matches_formula_at_small_size() {
        let bbe = simulated_recovery_seconds(SchemeId::Bbe, 256 << 10, EadrModel::WriteComputeOrder).unwrap();
        let sep = simulated_recovery_seconds(SchemeId::Sepencr, 256 << 10, EadrModel::WriteOnly).unwrap();
        assert_eq!(bbe, recovery_time(SchemeId::Bbe, 256 << 10, 200));
        assert_eq!(sep, recovery_time(SchemeId::Sepencr, 256 << 10, 200));
    }
}
