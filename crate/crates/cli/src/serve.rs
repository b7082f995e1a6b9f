use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use featsearch_service::config::ENV_CONFIG;
use featsearch_service::{AppState, ServiceConfig};

use crate::exit::user;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Service config JSON; falls back to $FEATSEARCH_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides $FEATSEARCH_PORT and the config file.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value_t = Ipv4Addr::LOCALHOST.into())]
    host: std::net::IpAddr,
}

pub fn run(args: Args) -> anyhow::Result<ExitCode> {
    let path = args
        .config
        .or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from))
        .ok_or_else(|| user(format!("--config or ${ENV_CONFIG} is required")))?;
    let cfg = ServiceConfig::load(&path)?;
    let port = cfg.resolve_port(args.port)?;

    // Mount before binding so a bad store never leaves a half-working server.
    let state = AppState::mount_all(&cfg)?;
    for m in &state.mounts {
        log::info!(
            "mounted {} ({} images, {})",
            m.name,
            m.store.len(),
            if m.is_resident() { "in memory" } else { "streamed" }
        );
    }

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(featsearch_service::serve(
        Arc::new(state),
        cfg.cors_origin.clone(),
        SocketAddr::new(args.host, port),
        async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        },
    ))?;
    Ok(ExitCode::SUCCESS)
}
