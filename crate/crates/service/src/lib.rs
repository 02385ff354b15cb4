//! Read-only HTTP API over a built artifact tree. The tree is loaded into
//! memory at startup and never touched again; restart to pick up a rebuild.

mod tree;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use sustain_core::store::StoreError;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};

pub use tree::{ApiError, DrillKind, DrillRecord, ProjectEntry, RangeQuery, Tree};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("artifact tree {0} does not exist")]
    NoTree(PathBuf),
    #[error("artifact tree {0} contains no projects; run `build` first")]
    EmptyTree(PathBuf),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("static asset directory {0} does not exist")]
    NoStatic(PathBuf),
    #[error("invalid CORS origin `{0}`")]
    BadOrigin(String),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub addr: SocketAddr,
    pub root: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub cors_origins: Vec<String>,
}

fn json(status: u16, body: Vec<u8>) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

fn reply(result: Result<Vec<u8>, ApiError>) -> Response {
    match result {
        Ok(body) => json(200, body),
        Err(e) => json(e.status, e.body()),
    }
}

type Shared = State<Arc<Tree>>;

async fn projects(State(t): Shared) -> Response {
    json(200, t.projects())
}

async fn info(State(t): Shared, UrlPath(id): UrlPath<String>) -> Response {
    reply(t.info(&id))
}

async fn forecast(State(t): Shared, UrlPath(id): UrlPath<String>) -> Response {
    reply(t.forecast(&id))
}

async fn network(State(t): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<RangeQuery>) -> Response {
    reply(t.network(&id, &q))
}

async fn metrics(State(t): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<RangeQuery>) -> Response {
    reply(t.metrics(&id, &q))
}

async fn report(State(t): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<RangeQuery>) -> Response {
    reply(t.report(&id, &q))
}

async fn drilldown(State(t): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<RangeQuery>) -> Response {
    reply(t.drilldown(&id, &q))
}

async fn api_not_found() -> Response {
    reply(Err(ApiError::not_found("no such route")))
}

fn cors_layer(origins: &[String]) -> Result<CorsLayer, ServiceError> {
    let values = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::BadOrigin(o.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorsLayer::new().allow_methods([Method::GET]).allow_origin(AllowOrigin::list(values)))
}

/// API routes over `tree`, optionally serving a static dashboard build for
/// every non-API path.
pub fn router(tree: Arc<Tree>, static_dir: Option<&Path>, cors_origins: &[String]) -> Result<Router, ServiceError> {
    let api = Router::new()
        .route("/projects", get(projects))
        .route("/projects/{id}/info", get(info))
        .route("/projects/{id}/network", get(network))
        .route("/projects/{id}/metrics", get(metrics))
        .route("/projects/{id}/forecast", get(forecast))
        .route("/projects/{id}/report", get(report))
        .route("/projects/{id}/drilldown", get(drilldown))
        .fallback(api_not_found)
        .with_state(tree);
    let mut app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(ServiceError::NoStatic(dir.to_owned()));
            }
            let index = dir.join("index.html");
            app = app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)));
        }
        None => app = app.fallback(api_not_found),
    }
    if !cors_origins.is_empty() {
        app = app.layer(cors_layer(cors_origins)?);
    }
    Ok(app)
}

/// Loads the tree and serves until the process is stopped.
pub async fn serve(config: ApiConfig) -> Result<(), ServiceError> {
    let tree = Arc::new(Tree::load(&config.root)?);
    let app = router(tree, config.static_dir.as_deref(), &config.cors_origins)?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
