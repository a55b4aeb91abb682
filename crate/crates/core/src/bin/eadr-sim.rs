use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eadr_sim::experiment::{
    audit_saved, recovery_curve_csv, run_experiment, simulated_recovery_seconds, table3_csv, CrashSpec,
    ExperimentConfig, RECOVERY_CURVE_MIB,
};
use eadr_sim::{EadrModel, SchemeId, WorkloadKind};

#[derive(Parser)]
#[command(name = "eadr-sim", version, about = "Encrypted eADR persistent-memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured cells.
    Run(MatrixArgs),
    /// Run a matrix; unset axes cover every value and incompatible pairs are skipped.
    Sweep(MatrixArgs),
    /// Crash-flush energy of a fully dirty cache.
    Table3(CommonArgs),
    /// Recovery time over data cache sizes.
    RecoveryCurve {
        #[command(flatten)]
        common: CommonArgs,
        /// Cache sizes in MiB.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u64>>,
        /// Also measure each point by crashing a simulated full cache.
        #[arg(long)]
        simulate: bool,
    },
    /// Re-run the confidentiality and pad-uniqueness audits on saved traces.
    Audit {
        #[arg(long)]
        ops: PathBuf,
        #[arg(long)]
        bus: PathBuf,
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        first_k: usize,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    scheme: Option<Vec<SchemeId>>,
    #[arg(long, value_delimiter = ',')]
    model: Option<Vec<EadrModel>>,
    #[arg(long, value_delimiter = ',')]
    workload: Option<Vec<WorkloadKind>>,
    #[arg(long, value_delimiter = ',')]
    txn: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    cores: Option<Vec<usize>>,
    #[arg(long)]
    n_txns: Option<u64>,
    /// Cap on ops per cell.
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long)]
    arena: Option<u64>,
    /// none | step:K | steps:A,B | sweep:K
    #[arg(long)]
    crash: Option<CrashSpec>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    value_seed: Option<u64>,
    /// AES key as 32 hex digits.
    #[arg(long)]
    key: Option<String>,
    /// Drop dirty lines at crash instead of flushing.
    #[arg(long)]
    discard: bool,
    /// Succeed only if every cell leaks.
    #[arg(long)]
    expect_leak: bool,
    /// Save op, bus and seed traces next to the audits.
    #[arg(long)]
    save_traces: bool,
}

fn load(common: &CommonArgs, base: ExperimentConfig) -> eadr_sim::Result<ExperimentConfig> {
    match &common.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(base),
    }
}

fn apply(args: MatrixArgs, mut cfg: ExperimentConfig) -> ExperimentConfig {
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    set!(schemes, args.scheme);
    set!(models, args.model);
    set!(workloads, args.workload);
    set!(txn_sizes, args.txn);
    set!(cores, args.cores);
    set!(n_txns, args.n_txns);
    set!(arena_bytes, args.arena);
    set!(crash, args.crash);
    set!(rng_seed, args.seed);
    set!(value_seed, args.value_seed);
    set!(key, args.key);
    if args.ops.is_some() {
        cfg.ops = args.ops;
    }
    cfg.discard_on_crash |= args.discard;
    cfg.expect_leak |= args.expect_leak;
    cfg.save_traces |= args.save_traces;
    if args.common.out.is_some() {
        cfg.output = args.common.out;
    }
    cfg
}

fn emit(out: Option<&PathBuf>, text: &str) -> eadr_sim::Result<()> {
    match out {
        Some(path) => Ok(std::fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> eadr_sim::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let base = load(&args.common, ExperimentConfig::default())?;
            let cfg = apply(args, base);
            matrix(cfg)
        }
        Command::Sweep(args) => {
            let base = load(&args.common, ExperimentConfig::full_matrix())?;
            let cfg = apply(args, base);
            matrix(ExperimentConfig {
                skip_incompatible: true,
                ..cfg
            })
        }
        Command::Table3(common) => {
            let cfg = load(&common, ExperimentConfig::default())?;
            emit(common.out.as_ref(), &table3_csv(&cfg))?;
            Ok(true)
        }
        Command::RecoveryCurve {
            common,
            sizes,
            simulate,
        } => {
            let cfg = load(&common, ExperimentConfig::default())?;
            let sizes = sizes.unwrap_or_else(|| RECOVERY_CURVE_MIB.to_vec());
            let mut text = recovery_curve_csv(&cfg, &sizes);
            if simulate {
                text.push_str("# simulated\ncache_mib,bbe_s,sepencr_s\n");
                for &mib in &sizes {
                    let bbe = simulated_recovery_seconds(SchemeId::Bbe, mib << 20, EadrModel::WriteComputeOrder)?;
                    let sep = simulated_recovery_seconds(SchemeId::Sepencr, mib << 20, EadrModel::WriteOnly)?;
                    text.push_str(&format!("{mib},{bbe:.7},{sep:.7}\n"));
                }
            }
            emit(common.out.as_ref(), &text)?;
            Ok(true)
        }
        Command::Audit {
            ops,
            bus,
            seeds,
            first_k,
        } => {
            let seeds = seeds.map(std::fs::read_to_string).transpose()?;
            let report = audit_saved(
                &std::fs::read_to_string(ops)?,
                &std::fs::read_to_string(bus)?,
                seeds.as_deref(),
            )?;
            println!("{}", serde_json::to_string_pretty(&report.to_json(first_k))?);
            Ok(report.passed())
        }
    }
}

fn matrix(cfg: ExperimentConfig) -> eadr_sim::Result<bool> {
    let output = run_experiment(&cfg)?;
    if cfg.output.is_none() {
        print!("{}", output.csv);
    }
    for cell in output.cells.iter().filter(|c| !c.as_expected) {
        eprintln!("unexpected audit outcome: {} ({} violations)", cell.cell.label(), cell.report.violations());
    }
    Ok(output.all_as_expected())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
