use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;

/// Runtime configuration. Every flag can also come from the environment;
/// an explicit flag wins.
#[derive(Debug, Clone, Parser)]
#[command(name = "perception-server", version, about = "Pairwise carbon-footprint quiz service")]
pub struct ServiceConfig {
    /// Address to listen on.
    #[arg(long, env = "PERCEPTION_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,

    /// Catalog JSON file.
    #[arg(long, env = "PERCEPTION_CATALOG")]
    pub catalog: PathBuf,

    /// Triplet log (created if missing).
    #[arg(long = "log", env = "PERCEPTION_LOG")]
    pub log: PathBuf,

    /// Observation noise variance.
    #[arg(long, env = "PERCEPTION_SIGMA_N_SQ", default_value_t = 1.0)]
    pub sigma_n_sq: f64,

    /// Spherical prior variance.
    #[arg(long, env = "PERCEPTION_SIGMA_P_SQ", default_value_t = 10.0)]
    pub sigma_p_sq: f64,

    /// Smallest accepted impact ratio.
    #[arg(long, env = "PERCEPTION_Y_MIN", default_value_t = 0.001)]
    pub y_min: f64,

    /// Largest accepted impact ratio.
    #[arg(long, env = "PERCEPTION_Y_MAX", default_value_t = 1000.0)]
    pub y_max: f64,

    /// Origins allowed by CORS (repeatable, or comma-separated in the env).
    #[arg(long = "cors-origin", env = "PERCEPTION_CORS_ORIGINS", value_delimiter = ',')]
    pub cors_origins: Vec<String>,

    /// Answers per second accepted from one client IP; 0 disables the limit.
    #[arg(long, env = "PERCEPTION_RATE_LIMIT", default_value_t = 5.0)]
    pub rate_limit: f64,

    /// Retry a failed precision factorization with a tiny diagonal load.
    #[arg(long, env = "PERCEPTION_JITTER_FALLBACK")]
    pub jitter_fallback: bool,
}

impl ServiceConfig {
    /// Defaults for everything except the two file paths.
    pub fn with_paths(catalog: impl Into<PathBuf>, log: impl Into<PathBuf>) -> Self {
        Self {
            bind: "127.0.0.1:0".parse().unwrap(),
            catalog: catalog.into(),
            log: log.into(),
            sigma_n_sq: 1.0,
            sigma_p_sq: 10.0,
            y_min: 0.001,
            y_max: 1000.0,
            cors_origins: Vec::new(),
            rate_limit: 5.0,
            jitter_fallback: false,
        }
    }
}
