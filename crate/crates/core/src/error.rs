use thiserror::Error;

use crate::crash_audit::{CrashOp, EadrModel};
use crate::line::PhysAddr;
use crate::schemes::SchemeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("address {0} is not 64-byte aligned")]
    Misaligned(PhysAddr),

    #[error("address {addr} lies outside user memory [0, {nvm_size:#x})")]
    NotUserAddress { addr: PhysAddr, nvm_size: u64 },

    #[error("address {0} is beyond NVM and its metadata regions")]
    AddressOutOfRange(PhysAddr),

    #[error("address {0} is a seed-only address and cannot be used for storage")]
    SeedOnlyAddress(PhysAddr),

    #[error("cache level {level} out of range (geometry has {levels} levels)")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("core {core} out of range (geometry has {cores} cores)")]
    CoreOutOfRange { core: usize, cores: usize },

    #[error("invalid cache geometry: {0}")]
    InvalidGeometry(String),

    #[error("{scheme} cannot run under the {model} model: {reason}")]
    IncompatibleModel {
        scheme: SchemeId,
        model: EadrModel,
        reason: &'static str,
    },

    #[error("the {model} model does not permit {op} operations during a crash flush")]
    ForbiddenCrashOp { model: EadrModel, op: CrashOp },

    #[error("unrecoverable state: {0}")]
    Unrecoverable(String),

    #[error("no crash is pending; recover() called without a preceding crash")]
    NoPendingCrash,

    #[error("a crash is pending; recover() must run before further accesses")]
    CrashPending,

    #[error("arena of {arena} bytes is too small: {reason}")]
    ArenaTooSmall { arena: u64, reason: String },

    #[error("per-core arenas overlap: cores {0} and {1}")]
    OverlappingArenas(usize, usize),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
