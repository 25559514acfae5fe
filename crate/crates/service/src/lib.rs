//! HTTP service: tile browsing and on-demand mask-conditioned generation
//! with consistency scoring.
//!
//! | route | |
//! |---|---|
//! | `GET /v1/tiles?dataset=&limit=&offset=` | paged tiles, sorted by id |
//! | `GET /v1/tiles/{id}/pre` | pre-event tile as PNG |
//! | `GET /v1/models` | model tags and load status |
//! | `POST /v1/generate` | generate and score |
//!
//! Errors are `{"code", "message"}` JSON.

pub mod api;
pub mod config;
pub mod error;
pub mod routes;
pub mod state;

use std::sync::Arc;

pub use config::ServeArgs;
pub use error::{ApiError, Error, Result};
pub use floodviz_experiments::evaluate::ImageModel;
pub use routes::router;
pub use state::AppState;

/// Binds, starts loading checkpoints in the background and serves until
/// ctrl-c. Requests for a model still loading get 409.
pub async fn serve(args: ServeArgs) -> Result<()> {
    let state = Arc::new(AppState::new(&args)?);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || loader.load_checkpoints());
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
