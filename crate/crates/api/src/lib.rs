//! JSON-over-HTTP facade for the records system.
//!
//! Every authenticated request re-checks the caller's address against the
//! account's bound IP. Errors are returned as [`ErrorBody`] documents whose
//! `code` is one of the closed [`ErrorCode`] set and whose `message` is
//! rendered in Kurdish (default) or English.

pub mod catalog;
pub mod config;
pub mod error;
pub mod extract;
mod routes;

use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;

use axum::extract::{Request, State};
use axum::http::{header, HeaderValue};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::Router;
use dlms_core::{DepartmentKind, NewDepartment, Registry, SystemClock};
use tokio::net::TcpListener;

pub use catalog::Locale;
pub use config::{BootstrapConfig, ServerConfig};
pub use error::{ApiError, ErrorBody, ErrorCode};
pub use routes::{
    ApplicationDetail, BackupParams, LoginRequest, LoginResponse, NewsRequest, PageParams, RebindRequest,
    RedirectRequest, UserView, BACKUP_CHECKSUM_HEADER,
};

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub config: Arc<ServerConfig>,
}

impl AppState {
    pub fn new(registry: Arc<Registry>, config: ServerConfig) -> Self {
        AppState {
            registry,
            config: Arc::new(config),
        }
    }
}

/// Re-renders errors in the caller's language and declares UTF-8 on JSON.
async fn localize(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let locale = extract::request_locale(req.uri().query(), req.headers(), state.config.default_locale);
    let mut res = next.run(req).await;
    if let Some(err) = res.extensions_mut().remove::<ApiError>() {
        return err.into_localized_response(locale);
    }
    let plain_json = res
        .headers()
        .get(header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes() == b"application/json");
    if plain_json {
        res.headers_mut().insert(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json; charset=utf-8"),
        );
    }
    res.into_response()
}

/// The complete route table.
///
/// # Panics
///
/// If the configured admin path is empty or `/`.
pub fn router(state: AppState) -> Router {
    let prefix = state.config.admin_prefix();
    assert!(prefix != "/", "admin_path must not be the site root");
    let app = routes::public_routes(&state).nest(&prefix, routes::admin_routes(&state));
    routes::fallbacks(app)
        .layer(middleware::from_fn_with_state(state.clone(), localize))
        .with_state(state)
}

/// Opens the store named by `config` (or an in-memory one) and creates the
/// bootstrap admin if the store has no accounts yet.
pub fn open_registry(config: &ServerConfig, bootstrap_password: Option<&str>) -> dlms_core::Result<Registry> {
    let clock = Arc::new(SystemClock);
    let registry = match &config.data_dir {
        Some(dir) => Registry::open(dir, clock, config.core_config())?,
        None => Registry::new(
            dlms_core::store::Store::in_memory(),
            Arc::new(dlms_core::MemoryBlobStore::new()),
            clock,
            config.core_config(),
        )?,
    };
    if let (Some(boot), Some(password)) = (&config.bootstrap, bootstrap_password) {
        let dept = NewDepartment {
            code: boot.dept_code,
            name: boot.dept_name.clone(),
            kind: DepartmentKind::Admin,
        };
        if let Some(acct) = registry.bootstrap_admin(dept, &boot.username, password, boot.bound_ip)? {
            tracing::info!(username = %acct.username, bound_ip = %acct.bound_ip, "created bootstrap admin");
        }
    }
    Ok(registry)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(
        listener,
        router(state).into_make_service_with_connect_info::<SocketAddr>(),
    )
    .with_graceful_shutdown(shutdown)
    .await
}

/// Whether `ip` is loopback, after unwrapping IPv4-mapped IPv6.
pub fn is_loopback(ip: IpAddr) -> bool {
    ip.to_canonical().is_loopback()
}
