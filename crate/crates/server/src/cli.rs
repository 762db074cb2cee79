//! Command-line flags and service startup.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use thiserror::Error;
use tokio::net::TcpListener;

use coimagine_core::domain::{Locale, SessionConfig};
use coimagine_core::grammar::{LocalePacks, PackError};
use coimagine_core::images::{
    Credentials, FixtureProvider, ImageError, ImageSearch, ImageService, LiveProvider,
    ENGINE_ID_ENV, KEY_ENV,
};
use coimagine_core::{
    Clock, Coordinator, CoordinatorError, CoordinatorOptions, SimulatedClock, SystemClock,
    Timestamp,
};

use crate::AppState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderMode {
    /// Image search over HTTP; needs COIMAGINE_SEARCH_KEY and COIMAGINE_SEARCH_ENGINE_ID.
    Live,
    /// Images from a local directory laid out as <locale>/<keyword>/<rank>.jpg.
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 300 s preparation, 90 s speaking and QA slots.
    Elder,
    /// 300 s speaking and QA slots, no preparation phase.
    TrialRun,
}

/// Runs the coimagination session service.
///
/// Image search credentials are read only from the COIMAGINE_SEARCH_KEY and
/// COIMAGINE_SEARCH_ENGINE_ID environment variables.
#[derive(Debug, Clone, Parser)]
#[command(name = "coimagine", version)]
pub struct Cli {
    /// Address to listen on.
    #[arg(long, env = "COIMAGINE_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,

    /// Directory for session logs and recordings.
    #[arg(long, env = "COIMAGINE_DATA_DIR", default_value = "./data")]
    pub data_dir: PathBuf,

    /// Default locale for new sessions (en or ja).
    #[arg(long, env = "COIMAGINE_LOCALE", default_value = "en")]
    pub locale: String,

    /// Timing preset for the first session.
    #[arg(long, env = "COIMAGINE_PRESET", value_enum, default_value = "elder")]
    pub preset: Preset,

    /// Directory of <locale>.ini packs overriding the built-in command words.
    #[arg(long, env = "COIMAGINE_LOCALE_DIR")]
    pub locale_dir: Option<PathBuf>,

    /// Where topic images come from.
    #[arg(long, env = "COIMAGINE_PROVIDER", value_enum, default_value = "live")]
    pub provider: ProviderMode,

    /// Image directory for the fixture provider.
    #[arg(long, env = "COIMAGINE_FIXTURE_DIR")]
    pub fixture_dir: Option<PathBuf>,

    /// Image cache directory. Defaults to <data-dir>/images.
    #[arg(long, env = "COIMAGINE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,

    /// Search endpoint for the live provider.
    #[arg(long, env = "COIMAGINE_SEARCH_ENDPOINT")]
    pub search_endpoint: Option<String>,

    /// Live provider request timeout in seconds.
    #[arg(long, env = "COIMAGINE_SEARCH_TIMEOUT_S", default_value_t = 10)]
    pub search_timeout_s: u64,

    /// Start the clock at zero and advance it only through POST /api/clock/advance.
    #[arg(long, env = "COIMAGINE_SIMULATED_CLOCK")]
    pub simulated_clock: bool,

    /// Log filter, e.g. info or coimagine_server=debug.
    #[arg(long, env = "COIMAGINE_LOG", default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("{0}")]
    BadFlag(String),
    #[error("live image search needs {KEY_ENV} and {ENGINE_ID_ENV} in the environment")]
    MissingCredentials,
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("locale pack: {0}")]
    LocalePack(#[from] PackError),
    #[error("data directory {path} is not writable: {source}")]
    DataDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image provider: {0}")]
    Provider(#[from] ImageError),
    #[error("opening sessions: {0}")]
    Open(#[from] CoordinatorError),
    #[error("server: {0}")]
    Serve(std::io::Error),
}

fn check_writable(dir: &Path) -> Result<(), StartupError> {
    let fail = |source| StartupError::DataDir {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    Ok(())
}

fn provider(cli: &Cli) -> Result<Arc<dyn ImageSearch>, StartupError> {
    match cli.provider {
        ProviderMode::Fixture => {
            let dir = cli.fixture_dir.clone().ok_or_else(|| {
                StartupError::BadFlag("--provider fixture needs --fixture-dir".into())
            })?;
            if !dir.is_dir() {
                return Err(StartupError::BadFlag(format!(
                    "fixture directory {} does not exist",
                    dir.display()
                )));
            }
            Ok(Arc::new(FixtureProvider::new(dir)))
        }
        ProviderMode::Live => {
            let credentials = Credentials::from_env().ok_or(StartupError::MissingCredentials)?;
            Ok(Arc::new(LiveProvider::new(
                cli.search_endpoint.clone(),
                credentials,
                Duration::from_secs(cli.search_timeout_s),
            )?))
        }
    }
}

/// Validates flags, locale packs and the data directory, then opens the
/// coordinator.
pub fn build(cli: &Cli) -> Result<AppState, StartupError> {
    let locale: Locale = cli.locale.parse().map_err(|_| {
        StartupError::BadFlag(format!("unknown locale `{}` (use en or ja)", cli.locale))
    })?;
    let packs = LocalePacks::load(cli.locale_dir.as_deref())?;
    check_writable(&cli.data_dir)?;
    let images = ImageService::new(
        provider(cli)?,
        cli.cache_dir
            .clone()
            .unwrap_or_else(|| cli.data_dir.join("images")),
    )?;
    let config = match cli.preset {
        Preset::Elder => SessionConfig::elder(locale),
        Preset::TrialRun => SessionConfig::trial_run(locale),
    };
    let simulated = cli
        .simulated_clock
        .then(|| SimulatedClock::new(Timestamp::ZERO));
    let clock: Arc<dyn Clock> = match &simulated {
        Some(c) => Arc::new(c.clone()),
        None => Arc::new(SystemClock::new()),
    };
    let coordinator = Coordinator::open(
        CoordinatorOptions {
            data_dir: cli.data_dir.clone(),
            config,
            packs,
        },
        images,
        clock,
    )?;
    Ok(AppState::new(coordinator, simulated))
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, StartupError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| match source.kind() {
            std::io::ErrorKind::AddrInUse => StartupError::AddressInUse(addr),
            _ => StartupError::Bind { addr, source },
        })
}

/// Serves until ctrl-c. A real clock gets a background ticker so timers
/// fire without client traffic.
pub async fn serve(listener: TcpListener, state: AppState) -> Result<(), StartupError> {
    let ticker = state
        .clock
        .is_none()
        .then(|| crate::spawn_ticker(state.coordinator.clone(), Duration::from_millis(250)));
    let app = crate::router(state);
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(StartupError::Serve);
    if let Some(t) = ticker {
        t.abort();
    }
    result
}
