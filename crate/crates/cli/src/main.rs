mod commands;

use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ehrchain_core::crypto::DEFAULT_KDF_ITERATIONS;
use ehrchain_core::ledger::{DEFAULT_MAX_TXS, DEFAULT_POW_BITS};
use ehrchain_service::LedgerMode;

#[derive(Parser)]
#[command(
    name = "ehrchain",
    version,
    about = "Operator tooling for the health record ledger"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an account key bundle and seal it under a passphrase
    Keygen(KeygenArgs),
    /// Run the HTTP service on an embedded ledger
    #[command(subcommand)]
    Node(NodeCommand),
    /// Deterministic consensus simulations
    #[command(subcommand)]
    Sim(SimCommand),
    /// Sign and commit a transaction
    #[command(subcommand)]
    Tx(TxCommand),
    /// Read or re-validate a stored chain
    #[command(subcommand)]
    Chain(ChainCommand),
}

#[derive(Args)]
struct KeygenArgs {
    /// Where to write the sealed key file
    #[arg(long, short)]
    out: PathBuf,
    /// 32-byte master seed as 64 hex characters; omit for a random key
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, env = "EHRCHAIN_PASSPHRASE", hide_env_values = true)]
    passphrase: String,
    /// PBKDF2 iterations for the key file
    #[arg(long, default_value_t = DEFAULT_KDF_ITERATIONS)]
    iterations: u32,
    /// Replace an existing key file
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct LedgerArgs {
    /// Data directory; without one the ledger lives in memory
    #[arg(long, env = "EHRCHAIN_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Consensus mode: bft or pow
    #[arg(long, env = "EHRCHAIN_MODE", default_value = "bft")]
    mode: LedgerMode,
    /// Validators in the embedded BFT cluster
    #[arg(long, env = "EHRCHAIN_NODES", default_value_t = 4)]
    nodes: usize,
    #[arg(long, env = "EHRCHAIN_BLOCK_TIME_MS", default_value_t = 100)]
    block_time_ms: u64,
    #[arg(long, env = "EHRCHAIN_POW_BITS", default_value_t = DEFAULT_POW_BITS)]
    pow_bits: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_TXS)]
    max_txs: usize,
    /// Seed for validator keys
    #[arg(long, env = "EHRCHAIN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum NodeCommand {
    /// Serve the API until interrupted
    Run(NodeRunArgs),
}

#[derive(Args)]
struct NodeRunArgs {
    #[command(flatten)]
    ledger: LedgerArgs,
    #[arg(long, env = "EHRCHAIN_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "EHRCHAIN_SESSION_TTL_SECS", default_value_t = 1800)]
    session_ttl_secs: u64,
    /// Vital-sign readings per committed record
    #[arg(long, default_value_t = 1)]
    vitals_batch: usize,
    /// Fixed seed for one-time codes (testing only)
    #[arg(long)]
    otp_seed: Option<u64>,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario and write its trace as NDJSON
    Run {
        scenario: PathBuf,
        /// Trace output; stdout when omitted
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Override the scenario seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a trace for safety, finality, validity and certificate soundness
    Check { trace: PathBuf },
}

#[derive(Subcommand)]
enum TxCommand {
    /// Sign a CREATE or TRANSFER with a key file and commit it
    Submit(TxSubmitArgs),
}

#[derive(Args)]
struct TxSubmitArgs {
    #[command(flatten)]
    ledger: LedgerArgs,
    /// Key file written by `ehrchain keygen`
    #[arg(long)]
    key: PathBuf,
    #[arg(long, env = "EHRCHAIN_PASSPHRASE", hide_env_values = true)]
    passphrase: String,
    /// Asset data for a new CREATE, as a JSON object
    #[arg(
        long,
        conflicts_with = "transfer",
        required_unless_present = "transfer"
    )]
    create: Option<String>,
    /// Asset id (hex) whose current output to spend
    #[arg(long, requires = "to")]
    transfer: Option<String>,
    /// Recipient signing key (hex) for a TRANSFER
    #[arg(long)]
    to: Option<String>,
    /// Transaction metadata, as a JSON object
    #[arg(long)]
    metadata: Option<String>,
}

#[derive(Subcommand)]
enum ChainCommand {
    /// Print every block's height, hash and transactions
    Inspect {
        /// Node directory or chain dump file
        path: PathBuf,
    },
    /// Re-validate every block and compare the unspent set with a replay
    Verify {
        /// Node directory or chain dump file
        path: PathBuf,
        /// node.json holding the chain config; found next to the dump by default
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

/// Result of a command that ran to completion.
pub enum Outcome {
    Pass,
    Fail,
}

/// Bad arguments or unreadable inputs, as opposed to a failed check.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Keygen(a) => commands::keygen(a),
        Command::Node(NodeCommand::Run(a)) => commands::node_run(a),
        Command::Sim(SimCommand::Run {
            scenario,
            out,
            seed,
        }) => commands::sim_run(&scenario, out.as_deref(), seed),
        Command::Sim(SimCommand::Check { trace }) => commands::sim_check(&trace),
        Command::Tx(TxCommand::Submit(a)) => commands::tx_submit(a),
        Command::Chain(ChainCommand::Inspect { path }) => commands::chain_inspect(&path),
        Command::Chain(ChainCommand::Verify { path, meta }) => {
            commands::chain_verify(&path, meta.as_deref())
        }
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}
