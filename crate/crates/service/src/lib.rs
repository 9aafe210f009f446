//! HTTP+JSON front end for the record exchange.
//!
//! Data directory layout:
//!
//! ```text
//! ledger/        validator directories (node-<i>/...), or one PoW node in node-0
//! documents/     account profiles and grant pointers
//! keys/          per-account key files, sealed under the account password
//! audit.ndjson   one line per record access
//! ```
//!
//! Sessions and the keys they unlock stay in memory.

mod error;
mod routes;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use ehrchain_core::cluster::{BftCluster, ClusterConfig, LedgerBackend, NodeError, PowNode};
use ehrchain_core::crypto::{
    CryptoError, FileKeyStore, KeyStore, MemoryKeyStore, DEFAULT_KDF_ITERATIONS,
};
use ehrchain_core::ehr::{
    AuditLog, DocumentStore, Ehr, EhrConfig, EhrError, FileDocumentStore, LogOtpSender,
    MemoryDocumentStore, OtpSender,
};
use ehrchain_core::ledger::{DEFAULT_MAX_TXS, DEFAULT_POW_BITS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use error::{ApiError, ErrorBody};
pub use routes::router;
pub use session::Sessions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerMode {
    Bft,
    Pow,
}

impl std::str::FromStr for LedgerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bft" => Ok(LedgerMode::Bft),
            "pow" => Ok(LedgerMode::Pow),
            other => Err(format!("unknown consensus mode {other:?} (bft or pow)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub listen: SocketAddr,
    pub mode: LedgerMode,
    pub nodes: usize,
    pub block_time_ms: u64,
    pub pow_bits: u32,
    pub max_txs: usize,
    /// Validator keys derive from this seed.
    pub seed: u64,
    pub session_ttl: Duration,
    pub vitals_batch: usize,
    pub otp_seed: Option<u64>,
    pub kdf_iterations: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            mode: LedgerMode::Bft,
            nodes: 4,
            block_time_ms: 100,
            pow_bits: DEFAULT_POW_BITS,
            max_txs: DEFAULT_MAX_TXS,
            seed: 0,
            session_ttl: Duration::from_secs(30 * 60),
            vitals_batch: 1,
            otp_seed: None,
            kdf_iterations: DEFAULT_KDF_ITERATIONS,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Ehr(#[from] EhrError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub const LEDGER_DIR: &str = "ledger";

/// Opens the ledger deployment selected by `config`, resuming from disk
/// when a data directory is set.
pub fn open_ledger(config: &ServiceConfig) -> Result<Arc<dyn LedgerBackend>, NodeError> {
    let dir = config.data_dir.as_ref().map(|d| d.join(LEDGER_DIR));
    Ok(match config.mode {
        LedgerMode::Bft => {
            let cc = ClusterConfig {
                nodes: config.nodes,
                block_time_ms: config.block_time_ms,
                max_txs: config.max_txs,
                seed: config.seed,
            };
            Arc::new(match dir {
                Some(d) => BftCluster::open(&d, cc)?,
                None => BftCluster::in_memory(cc)?,
            })
        }
        LedgerMode::Pow => Arc::new(match dir {
            Some(d) => PowNode::open(&d.join("node-0"), config.pow_bits)?,
            None => PowNode::in_memory(config.pow_bits),
        }),
    })
}

#[derive(Clone)]
pub struct AppState {
    pub ehr: Arc<Ehr>,
    pub sessions: Arc<Sessions>,
}

impl AppState {
    pub fn build(config: &ServiceConfig) -> Result<Self, ServiceError> {
        Self::build_with_otp(config, Arc::new(LogOtpSender))
    }

    pub fn build_with_otp(
        config: &ServiceConfig,
        otp: Arc<dyn OtpSender>,
    ) -> Result<Self, ServiceError> {
        let ledger = open_ledger(config)?;
        let (docs, keys, audit): (Arc<dyn DocumentStore>, Arc<dyn KeyStore>, AuditLog) =
            match &config.data_dir {
                Some(d) => (
                    Arc::new(FileDocumentStore::open(d.join("documents"))?),
                    Arc::new(FileKeyStore::new(d.join("keys"), config.kdf_iterations)?),
                    AuditLog::open(d.join("audit.ndjson"))?,
                ),
                None => (
                    Arc::new(MemoryDocumentStore::new()),
                    Arc::new(MemoryKeyStore::new(config.kdf_iterations)),
                    AuditLog::in_memory(),
                ),
            };
        let ehr = Ehr::new(
            ledger,
            docs,
            keys,
            otp,
            audit,
            EhrConfig {
                vitals_batch: config.vitals_batch,
                otp_seed: config.otp_seed,
            },
        );
        Ok(Self {
            ehr: Arc::new(ehr),
            sessions: Arc::new(Sessions::new(config.session_ttl)),
        })
    }
}

/// Serves the API until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = tokio::task::block_in_place(|| AppState::build(&config))?;
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
