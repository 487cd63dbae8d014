//! `gradsync` command line: `simulate`, `sweep`, `perf`, `gen-workload`.
//!
//! Results are written atomically (temp file + rename) and start with a
//! header block carrying the resolved config, seed and tool version, so the
//! same invocation always produces byte-identical files.
//!
//! Exit codes: 0 ok, 2 config error, 3 deadlock, 1 anything else.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::backend::Algorithm;
use crate::config::{ConfigError, RunConfig};
use crate::fusion::{equal_byte_groups, GroupSpec};
use crate::perf::{self, LayerFile, PerfError, TimingColumn, TimingTable};
use crate::sim::sweep::{efficiency_sweep, Strategy, CSV_HEADER};
use crate::sim::{self, write_timeline, CoordinatorKind, SimError, TimelineFormat};
use crate::workload::{gen_workload, GenParams, JitterSpec, Profile, WorkloadError, WorkloadGraph};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEADLOCK: i32 = 3;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "gradsync",
    version,
    about = "Gradient-reduction coordination simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its metrics (and optionally a timeline).
    Simulate(SimulateArgs),
    /// Scaling-efficiency sweep over worker counts and strategies.
    Sweep(SweepArgs),
    /// Sustained/peak performance from a kernel timing table.
    Perf(PerfArgs),
    /// Generate a synthetic workload file.
    GenWorkload(GenWorkloadArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Workload file; defaults to the built-in fc-densenet-like workload.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Group spec file (JSON map tensor name -> group id).
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    /// Equal-byte group count when no group spec is given.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub cycle_time_ms: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    pub seconds_per_record: Option<f64>,
    #[arg(long)]
    pub stall_sigma_us: Option<f64>,
    #[arg(long)]
    pub t_misc_ms: Option<f64>,
    #[arg(long)]
    pub cycle_limit: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgorithmArg {
    Ring,
    DoubleBinaryTree,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CoordinatorArg {
    MasterWorker,
    Bitvector,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TimelineArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub coordinator: Option<CoordinatorArg>,
    /// Use grouped fusion (implied by --grouping).
    #[arg(long)]
    pub grouped: bool,
    /// Also write the event timeline.
    #[arg(long, value_enum)]
    pub timeline: Option<TimelineArg>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Worker counts, e.g. `1,2,4,...,1024`.
    #[arg(long, default_value = "1,2,4,...,1024")]
    pub workers: String,
    /// Comma-separated strategies or `all`.
    #[arg(long, default_value = "all")]
    pub strategies: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ColumnArg {
    Tc,
    NoTc,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    /// Kernel timing table (JSON rows).
    #[arg(long)]
    pub timings: PathBuf,
    /// Conv layer file; defaults to the table's analytical op count.
    #[arg(long)]
    pub layers: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tc")]
    pub column: ColumnArg,
    /// GPUs for the aggregate report.
    #[arg(long, default_value_t = 1)]
    pub gpus: u64,
    /// Scaling efficiency applied to the aggregate.
    #[arg(long, default_value_t = 1.0)]
    pub efficiency: f64,
    /// Output directory for perf.json; omitted means stdout only.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    FcDensenetLike,
    Uniform,
}

#[derive(Debug, Args)]
pub struct GenWorkloadArgs {
    #[arg(long, value_enum, default_value = "fc-densenet-like")]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = crate::workload::FC_DENSENET_PARAMS)]
    pub total_params: u64,
    #[arg(long = "tensors", default_value_t = crate::workload::FC_DENSENET_TENSORS)]
    pub tensor_count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub element_bytes: u32,
    /// Backprop compute per step, milliseconds.
    #[arg(long)]
    pub compute_ms: Option<f64>,
    /// Readiness jitter: `none`, `uniform:<half width us>` or `normal:<sigma us>`.
    #[arg(long)]
    pub jitter: Option<String>,
    /// Embed an equal-byte group spec with this many groups.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Deadlock(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Deadlock(_) => EXIT_DEADLOCK,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Deadlock(m) => write!(f, "{m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Fusion(_) => CliError::Config(e.to_string()),
            SimError::DeadlockDetected { .. } => CliError::Deadlock(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<PerfError> for CliError {
    fn from(e: PerfError) -> Self {
        match e {
            PerfError::Overflow => CliError::Other(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

/// Parses `1,2,4,...,1024`-style lists. `...` continues the geometric
/// (or, failing that, arithmetic) progression of the two preceding values
/// up to the following value, which must be hit exactly.
pub fn parse_worker_list(s: &str) -> Result<Vec<usize>, String> {
    let tokens: Vec<&str> = s.split(',').map(str::trim).collect();
    let mut out: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i];
        if tok == "..." {
            let (a, b) = match out.as_slice() {
                [.., a, b] => (*a, *b),
                _ => return Err(format!("`...` in `{s}` needs two preceding values")),
            };
            let end: usize = tokens
                .get(i + 1)
                .ok_or_else(|| format!("`...` in `{s}` needs a final value"))?
                .parse()
                .map_err(|_| format!("bad worker count after `...` in `{s}`"))?;
            let next = |x: usize| -> Option<usize> {
                if a > 0 && b > a && b % a == 0 {
                    x.checked_mul(b / a)
                } else if b > a {
                    x.checked_add(b - a)
                } else {
                    None
                }
            };
            let mut x = b;
            while x < end {
                x = next(x).ok_or_else(|| format!("`{s}` is not increasing"))?;
                out.push(x);
            }
            if x != end {
                return Err(format!("progression in `{s}` does not reach {end}"));
            }
            i += 2;
            continue;
        }
        let v: usize = tok
            .parse()
            .map_err(|_| format!("bad worker count `{tok}` in `{s}`"))?;
        if v == 0 {
            return Err("worker counts must be at least 1".into());
        }
        out.push(v);
        i += 1;
    }
    if out.is_empty() {
        return Err("empty worker list".into());
    }
    Ok(out)
}

pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>, String> {
    if s == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    s.split(',').map(|t| t.trim().parse()).collect()
}

pub fn parse_jitter(s: &str) -> Result<JitterSpec, String> {
    let us = |v: &str| -> Result<u64, String> {
        let x: f64 = v.parse().map_err(|_| format!("bad jitter width `{v}`"))?;
        if x >= 0.0 && x.is_finite() {
            Ok((x * 1e3).round() as u64)
        } else {
            Err(format!("bad jitter width `{v}`"))
        }
    };
    match s.split_once(':') {
        None if s == "none" => Ok(JitterSpec::None),
        Some(("uniform", v)) => Ok(JitterSpec::Uniform {
            half_width_ns: us(v)?,
        }),
        Some(("normal", v)) => Ok(JitterSpec::Normal { sigma_ns: us(v)? }),
        _ => Err(format!(
            "bad jitter `{s}` (none | uniform:<us> | normal:<us>)"
        )),
    }
}

/// Writes `contents` to `path` via a temp file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(contents).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn resolve_config(run: &RunArgs) -> Result<RunConfig, CliError> {
    let mut c = match &run.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($f:ident => $g:ident),* $(,)?) => { $( if let Some(v) = run.$f { c.$g = v; } )* };
    }
    set!(
        steps => steps,
        warmup_steps => warmup_steps,
        cycle_time_ms => cycle_time_ms,
        seed => seed,
        alpha => alpha,
        beta => beta,
        seconds_per_record => seconds_per_record,
        stall_sigma_us => stall_sigma_us,
        t_misc_ms => t_misc_ms,
        cycle_limit => cycle_limit,
        groups => group_count,
    );
    if let Some(a) = run.algorithm {
        c.algorithm = match a {
            AlgorithmArg::Ring => Algorithm::Ring,
            AlgorithmArg::DoubleBinaryTree => Algorithm::DoubleBinaryTree,
        };
    }
    Ok(c)
}

#[derive(Debug, Serialize)]
struct WorkloadInfo {
    source: String,
    tensors: usize,
    total_bytes: u64,
    jitter: String,
}

fn load_workload(run: &RunArgs) -> Result<(WorkloadGraph, WorkloadInfo), CliError> {
    let (graph, source) = match &run.workload {
        Some(p) => (WorkloadGraph::load(p)?, p.display().to_string()),
        None => (
            gen_workload(&GenParams::default())?,
            "builtin:fc-densenet-like".to_string(),
        ),
    };
    let info = WorkloadInfo {
        source,
        tensors: graph.len(),
        total_bytes: graph.total_bytes(),
        jitter: graph.jitter().to_string(),
    };
    Ok((graph, info))
}

fn load_groups(path: &Path) -> Result<GroupSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Group spec file, else the workload's own groups, else equal-byte groups.
fn resolve_groups(
    run: &RunArgs,
    config: &RunConfig,
    workload: &WorkloadGraph,
) -> Result<(GroupSpec, String), CliError> {
    if let Some(p) = &run.grouping {
        return Ok((load_groups(p)?, p.display().to_string()));
    }
    if let Some(g) = workload.groups() {
        return Ok((g.clone(), "workload".to_string()));
    }
    let spec = equal_byte_groups(&workload.backprop_tensors(), config.group_count)
        .map_err(|e| CliError::Config(format!("group_count: {e}")))?;
    Ok((spec, format!("equal-bytes:{}", config.group_count)))
}

fn header(
    command: &str,
    config: &RunConfig,
    workload: &WorkloadInfo,
    grouping: Option<&str>,
) -> serde_json::Value {
    json!({
        "tool": "gradsync",
        "version": VERSION,
        "command": command,
        "seed": config.seed,
        "config": config,
        "workload": workload,
        "grouping": grouping,
    })
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut config = resolve_config(&args.run)?;
    if let Some(w) = args.workers {
        config.world_size = w;
    }
    if let Some(c) = args.coordinator {
        config.coordinator = match c {
            CoordinatorArg::MasterWorker => CoordinatorKind::MasterWorker,
            CoordinatorArg::Bitvector => CoordinatorKind::Bitvector,
        };
    }
    config.grouped |= args.grouped || args.run.grouping.is_some();
    config.validate()?;
    let (workload, info) = load_workload(&args.run)?;
    let groups = if config.grouped {
        Some(resolve_groups(&args.run, &config, &workload)?)
    } else {
        None
    };
    let mut sim_config = config.to_sim(groups.as_ref().map(|g| g.0.clone()))?;
    sim_config.record_events = args.timeline.is_some();
    log::info!(
        "simulate P={} steps={} coordinator={:?} grouped={}",
        config.world_size,
        config.steps,
        config.coordinator,
        config.grouped
    );
    let metrics = sim::run(&sim_config, &workload)?;
    let head = header(
        "simulate",
        &config,
        &info,
        groups.as_ref().map(|g| g.1.as_str()),
    );
    let doc = json!({ "header": head, "metrics": metrics });
    let mut text =
        serde_json::to_string_pretty(&doc).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_atomic(&args.run.out.join("simulate.json"), text.as_bytes())?;

    if let Some(fmt) = args.timeline {
        let (format, name) = match fmt {
            TimelineArg::Jsonl => (TimelineFormat::JsonLines, "timeline.jsonl"),
            TimelineArg::Csv => (TimelineFormat::Csv, "timeline.csv"),
        };
        let mut buf = Vec::new();
        match format {
            TimelineFormat::JsonLines => {
                serde_json::to_writer(&mut buf, &json!({ "header": head }))
                    .map_err(|e| CliError::Other(e.to_string()))?;
                buf.push(b'\n');
            }
            TimelineFormat::Csv => {
                writeln!(buf, "# {head}").map_err(|e| CliError::Other(e.to_string()))?;
            }
        }
        write_timeline(&metrics.events, format, &mut buf)
            .map_err(|e| CliError::Other(e.to_string()))?;
        write_atomic(&args.run.out.join(name), &buf)?;
    }
    println!(
        "P={} throughput={:.4}/s t_exec={:.3} ms t_comm={:.3} ms t_comp={:.3} ms fallback_steps={:?}",
        metrics.world_size,
        metrics.throughput_per_s,
        metrics.mean_t_exec_ns * 1e-6,
        metrics.mean_t_comm_ns * 1e-6,
        metrics.mean_t_comp_ns * 1e-6,
        metrics.fallback_steps()
    );
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let config = resolve_config(&args.run)?;
    let workers =
        parse_worker_list(&args.workers).map_err(|e| CliError::Config(format!("workers: {e}")))?;
    let strategies = parse_strategies(&args.strategies)
        .map_err(|e| CliError::Config(format!("strategies: {e}")))?;
    config.validate()?;
    let (workload, info) = load_workload(&args.run)?;
    let (groups, group_source) = resolve_groups(&args.run, &config, &workload)?;
    let base = config.to_sim(None)?;
    log::info!("sweep P={workers:?} strategies={strategies:?}");
    let rows = efficiency_sweep(&base, &workload, &workers, &strategies, &groups)?;

    let head = header("sweep", &config, &info, Some(&group_source));
    let mut table = format!("{CSV_HEADER}\n");
    for row in &rows {
        table.push_str(&row.csv_line());
        table.push('\n');
    }
    let text = format!("# {head}\n{table}");
    write_atomic(&args.run.out.join("sweep.csv"), text.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn perf_cmd(args: &PerfArgs) -> Result<(), CliError> {
    let table = TimingTable::load(&args.timings)?;
    let column = match args.column {
        ColumnArg::Tc => TimingColumn::TensorCores,
        ColumnArg::NoTc => TimingColumn::NoTensorCores,
    };
    let (ops, ops_source) = match &args.layers {
        Some(p) => {
            let layers = LayerFile::load(p)?;
            (layers.total_ops()? as f64, p.display().to_string())
        }
        None => (
            table.analytical_ops().ok_or(PerfError::NoOps)?,
            "timings:analytical_ops".to_string(),
        ),
    };
    let per_gpu = perf::performance(ops, &table.records(column))?;
    let agg = perf::aggregate(&per_gpu, args.gpus, args.efficiency)?;
    println!(
        "conv ops/direction {:.4e}; t_exec {:.3} ms; t_comp {:.3} ms",
        ops, per_gpu.t_exec_ms, per_gpu.t_comp_ms
    );
    println!(
        "per GPU: sustained {:.2} TFLOPS, peak {:.2} TFLOPS",
        per_gpu.sustained_tflops(),
        per_gpu.peak_tflops()
    );
    if args.gpus > 1 || args.efficiency < 1.0 {
        println!(
            "{} GPUs at efficiency {}: sustained {:.3} EFLOPS, peak {:.3} EFLOPS",
            args.gpus,
            args.efficiency,
            agg.sustained_flops / 1e18,
            agg.peak_flops / 1e18
        );
    }
    if let Some(out) = &args.out {
        let doc = json!({
            "header": {
                "tool": "gradsync",
                "version": VERSION,
                "command": "perf",
                "timings": args.timings.display().to_string(),
                "ops_source": ops_source,
                "column": match column { TimingColumn::TensorCores => "tc", TimingColumn::NoTensorCores => "no-tc" },
                "gpus": args.gpus,
                "efficiency": args.efficiency,
            },
            "per_gpu": per_gpu,
            "aggregate": agg,
        });
        let mut text =
            serde_json::to_string_pretty(&doc).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        write_atomic(&out.join("perf.json"), text.as_bytes())?;
    }
    Ok(())
}

fn gen_workload_cmd(args: &GenWorkloadArgs) -> Result<(), CliError> {
    let defaults = GenParams::default();
    let params = GenParams {
        profile: match args.profile {
            ProfileArg::FcDensenetLike => Profile::FcDensenetLike,
            ProfileArg::Uniform => Profile::Uniform,
        },
        total_params: args.total_params,
        tensor_count: args.tensor_count,
        seed: args.seed,
        element_bytes: args.element_bytes,
        compute_ns: match args.compute_ms {
            Some(ms) if ms > 0.0 && ms.is_finite() => (ms * 1e6).round() as u64,
            Some(ms) => {
                return Err(CliError::Config(format!(
                    "compute_ms: must be positive, got {ms}"
                )))
            }
            None => defaults.compute_ns,
        },
        jitter: match &args.jitter {
            Some(s) => parse_jitter(s).map_err(|e| CliError::Config(format!("jitter: {e}")))?,
            None => defaults.jitter,
        },
    };
    let mut graph = gen_workload(&params)?;
    if let Some(g) = args.groups {
        let spec = equal_byte_groups(&graph.backprop_tensors(), g)
            .map_err(|e| CliError::Config(format!("groups: {e}")))?;
        graph = graph.with_groups(spec);
    }
    let mut text = serde_json::to_string_pretty(&graph.to_file())
        .map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_atomic(&args.out, text.as_bytes())?;
    println!(
        "wrote {} tensors, {} params, {} bytes to {}",
        graph.len(),
        graph.total_params(),
        graph.total_bytes(),
        args.out.display()
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Perf(a) => perf_cmd(a),
        Command::GenWorkload(a) => gen_workload_cmd(a),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("gradsync: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worker_lists() {
        assert_eq!(
            parse_worker_list("1,2,4,...,1024").unwrap(),
            vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024]
        );
        assert_eq!(
            parse_worker_list("8,16,...,64").unwrap(),
            vec![8, 16, 32, 64]
        );
        assert_eq!(
            parse_worker_list("3,5,...,11").unwrap(),
            vec![3, 5, 7, 9, 11]
        );
        assert_eq!(parse_worker_list("4, 2").unwrap(), vec![4, 2]);
        assert!(parse_worker_list("1,2,4,...,1000").is_err());
        assert!(parse_worker_list("2,...,8").is_err());
        assert!(parse_worker_list("0").is_err());
        assert!(parse_worker_list("x").is_err());
    }

    #[test]
    fn strategies() {
        assert_eq!(parse_strategies("all").unwrap().len(), 3);
        assert_eq!(
            parse_strategies("bitvector,master-worker").unwrap(),
            vec![Strategy::Bitvector, Strategy::MasterWorker]
        );
        assert!(parse_strategies("ring").is_err());
    }

    #[test]
    fn jitter_specs() {
        assert_eq!(parse_jitter("none").unwrap(), JitterSpec::None);
        assert_eq!(
            parse_jitter("uniform:200").unwrap(),
            JitterSpec::Uniform {
                half_width_ns: 200_000
            }
        );
        assert_eq!(
            parse_jitter("normal:1.5").unwrap(),
            JitterSpec::Normal { sigma_ns: 1500 }
        );
        assert!(parse_jitter("uniform:-1").is_err());
        assert!(parse_jitter("gauss:1").is_err());
    }
}
