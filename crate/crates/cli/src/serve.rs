use std::sync::Arc;

use clap::Args;
use vps_core::backend::stub::StubServer;
use vps_core::backend::toy::{ToyScorer, ToyWorld};
use vps_core::backend::wire::BACKEND_TOKEN_ENV;

use crate::{runtime, usage, CliResult};

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8750")]
    bind: String,
    #[arg(long, default_value_t = 4)]
    labels: usize,
    #[arg(long, default_value_t = 0.55)]
    accuracy: f64,
}

/// Blocks until the process is killed. Requests must carry the bearer token
/// in `VPS_BACKEND_TOKEN` when it is set.
pub fn cmd_serve(a: ServeArgs) -> CliResult {
    let world = ToyWorld::symmetric(a.labels, a.accuracy).map_err(|e| usage(e.to_string()))?;
    let token = std::env::var(BACKEND_TOKEN_ENV).ok().filter(|t| !t.is_empty());
    let server = StubServer::bind(&a.bind, Arc::new(ToyScorer::new(world)), token)
        .map_err(|e| runtime(format!("cannot bind {}: {e}", a.bind)))?;
    eprintln!("serving the toy world at {}", server.url());
    server.join();
    Ok(())
}
