//! Simulator for counter-mode memory encryption on eADR persistent-memory
//! systems.
//!
//! With eADR the CPU caches become part of the persistence domain: on power
//! loss a battery drains every dirty line to NVM. If memory is encrypted in
//! the memory controller, that drain has to encrypt on battery power too, and
//! what the battery can sustain (the [`EadrModel`]) decides whether a scheme
//! keeps user data confidential and persistent. This crate models five
//! schemes over a shared cache hierarchy, NVM and AES-based pad generator,
//! injects crashes, and audits the adversary-visible bus trace.
//!
//! ```
//! use eadr_sim::{DataLine, EadrModel, PhysAddr, SchemeId, System, SystemConfig};
//!
//! let mut sys = System::new(SchemeId::Sepencr, SystemConfig::default())?;
//! sys.host_write(0, PhysAddr(0x40), DataLine::splat_u64(7))?;
//! sys.crash(EadrModel::WriteOnly)?;
//! sys.recover()?;
//! assert_eq!(sys.host_read(0, PhysAddr(0x40))?, DataLine::splat_u64(7));
//! # Ok::<(), eadr_sim::Error>(())
//! ```

pub mod cache;
pub mod cme;
pub mod crash_audit;
pub mod error;
pub mod experiment;
pub mod line;
pub mod metrics;
pub mod nvm;
pub mod schemes;
pub mod workloads;

pub use cache::{CacheGeometry, Hierarchy, LevelSpec};
pub use cme::{Key128, OtpEngine, PadPurpose, Seed, SeedDomain, SeedLog};
pub use crash_audit::{
    audit_confidentiality, audit_pad_uniqueness, audit_persistence, model_allows, run_scenario, AuditReport, CrashOp,
    EadrModel, GroundTruth, Scenario,
};
pub use error::{Error, Result};
pub use line::{DataLine, PhysAddr};
pub use metrics::{energy_crash_flush, recovery_time, EnergyTable, LatencyTable, RunStats};
pub use nvm::{AddressMap, AdversaryTrace, Nvm};
pub use schemes::{CrashPolicy, Fault, SchemeId, System, SystemConfig};
pub use workloads::{generate_trace, interleave_cores, multicore_trace, random_trace, Op, OpKind, OpTrace, TxnSpec, WorkloadKind};
