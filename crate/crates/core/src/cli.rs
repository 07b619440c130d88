//! Command-line front end; see [`run`].

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::gtp::{decode_gtpu, encode_gtpu, GtpuPacket};
use crate::harness::{add_named_checks, named_script, run_script, write_ldjson, Harness, ScenarioStep, TopologyConfig};
use crate::sim::{run_experiment, run_single, write_csv, write_metadata, ExperimentConfig, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "megw", version, about = "Mobile edge gateway toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect or build GTP-U frames.
    Codec {
        #[command(subcommand)]
        op: CodecOp,
    },
    /// Run a scenario on the virtual fabric and write its trace as LDJSON.
    Harness {
        /// Named scenario, or a path to a JSON script of steps.
        #[arg(long)]
        scenario: String,
        /// Topology JSON; the built-in sample when omitted.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Trace destination; standard output when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Simulate one world under the policy in its config.
    Sim {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep migration rates under both policies with replications.
    SimSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated fractions of the population moved per minute.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<u32>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CodecOp {
    /// Decode a hex-encoded frame.
    Decode {
        hex: String,
        /// Print the packet as JSON instead of key=value pairs.
        #[arg(long)]
        json: bool,
    },
    /// Encode a JSON packet (or `-` to read it from stdin) and print hex.
    Encode { packet: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad hex: {0}")]
    Hex(#[from] hex::FromHexError),
    #[error("decode failed: {0}")]
    Decode(#[from] crate::gtp::DecodeError),
    #[error("encode failed: {0}")]
    Encode(#[from] crate::gtp::EncodeError),
    #[error("bad JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Topology(#[from] crate::harness::ConfigError),
    #[error(transparent)]
    Harness(#[from] crate::harness::HarnessError),
    #[error(transparent)]
    Sim(#[from] crate::sim::ConfigError),
    #[error(transparent)]
    Experiment(#[from] crate::sim::ExperimentError),
    #[error("scenario {name} failed: {}", failures.join("; "))]
    ScenarioFailed { name: String, failures: Vec<String> },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_owned(), source })
}

/// `results.csv` -> `results.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn codec(op: CodecOp, out: &mut dyn Write) -> Result<(), CliError> {
    match op {
        CodecOp::Decode { hex, json } => {
            let bytes = hex::decode(hex.trim())?;
            let pkt = decode_gtpu(&bytes)?;
            if json {
                serde_json::to_writer(&mut *out, &pkt)?;
                writeln!(out)?;
            } else {
                writeln!(
                    out,
                    "message_type={:?} teid={} outer_src={} outer_dst={} inner_len={}",
                    pkt.message_type,
                    pkt.teid,
                    pkt.outer_src,
                    pkt.outer_dst,
                    pkt.inner.len()
                )?;
            }
        }
        CodecOp::Encode { packet } => {
            let text = if packet == "-" {
                let mut s = String::new();
                io::stdin().read_to_string(&mut s)?;
                s
            } else {
                packet
            };
            let pkt: GtpuPacket = serde_json::from_str(&text)?;
            writeln!(out, "{}", hex::encode(encode_gtpu(&pkt)?))?;
        }
    }
    Ok(())
}

fn harness(scenario: &str, topology: Option<&Path>, trace: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = match topology {
        Some(p) => TopologyConfig::from_json(&read(p)?)?,
        None => TopologyConfig::sample(),
    };
    let mut h = Harness::from_config(&cfg)?;
    let script_path = Path::new(scenario);
    let (name, script) = if scenario.ends_with(".json") && script_path.exists() {
        let steps: Vec<ScenarioStep> = serde_json::from_str(&read(script_path)?)?;
        (script_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), steps)
    } else {
        (scenario.to_owned(), named_script(h.topology(), scenario)?)
    };
    let mut report = run_script(&mut h, &name, &script)?;
    add_named_checks(&mut report);
    match trace {
        Some(p) => write_ldjson(h.trace(), create(p)?)?,
        None => write_ldjson(h.trace(), &mut *out)?,
    }
    if !report.passed() {
        return Err(CliError::ScenarioFailed { name, failures: report.failures });
    }
    Ok(())
}

fn sim(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: SimConfig = match config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rows = run_single(&cfg)?;
    write_csv(&rows, create(out)?)?;
    let sweep = ExperimentConfig { base: cfg.clone(), rates: vec![cfg.migration_rate], replications: 1 };
    let result = crate::sim::ExperimentResult { config: sweep, seed: cfg.seed, rows };
    write_metadata(&result, create(&sidecar_path(out))?)?;
    Ok(())
}

fn sim_sweep(
    config: Option<&Path>,
    rates: Option<Vec<f64>>,
    out: &Path,
    seed: Option<u64>,
    replications: Option<u32>,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::from_json(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(r) = rates {
        cfg.rates = r;
    }
    if let Some(n) = replications {
        cfg.replications = n;
    }
    let seed = seed.unwrap_or(cfg.base.seed);
    cfg.base.seed = seed;
    let result = run_experiment(&cfg, seed)?;
    write_csv(&result.rows, create(out)?)?;
    write_metadata(&result, create(&sidecar_path(out))?)?;
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Codec { op } => codec(op, out),
        Command::Harness { scenario, topology, trace } => harness(&scenario, topology.as_deref(), trace.as_deref(), out),
        Command::Sim { config, out: path, seed } => sim(config.as_deref(), &path, seed),
        Command::SimSweep { config, rates, out: path, seed, replications } => {
            sim_sweep(config.as_deref(), rates, &path, seed, replications)
        }
    }
}

/// Runs the tool on `args` (program name first), writing data to `out`
/// and diagnostics to `err`.
///
/// Returns the exit code: 0 on success, 1 on a usage error and 2 when the
/// command itself fails.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{}", e.render());
                    return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 1 } else { 0 };
                }
                _ => 1,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            2
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let mut out = stdout.lock();
    run_with(args, &mut out, &mut io::stderr())
}
