use std::net::IpAddr;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use dlms_core::{
    AppId, Application, ApplicationChanges, Attachment, AttachmentAudit, BackupMode, DeptId, FilterQuery,
    NewApplication, NewDepartment, NewUser, NewsId, PublishRecord, PublishRequest, Registry, Role, UserAccount,
    UserContext, UserId,
};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::catalog::{catalog, Catalog, Locale};
use crate::error::{ApiError, ErrorCode};
use crate::extract::{AdminAuth, ApiJson, ApiPath, ApiQuery, Auth, ClientIp, RawBody, SESSION_COOKIE};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

/// Runs registry work off the async workers; password hashing and backups
/// are CPU-bound and store writes may wait on the lock.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Registry) -> dlms_core::Result<T> + Send + 'static,
{
    let reg = state.registry.clone();
    tokio::task::spawn_blocking(move || f(&reg))
        .await
        .map_err(|_| ApiError::new(ErrorCode::Internal))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoginResponse {
    pub token: String,
    pub expires_at: DateTime<Utc>,
    pub user: UserContext,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RedirectRequest {
    pub to_dept: DeptId,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PageParams {
    pub page: u32,
    pub page_size: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadParams {
    pub filename: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewsRequest {
    pub title: String,
    #[serde(default)]
    pub body: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RebindRequest {
    pub ip: IpAddr,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackupParams {
    pub mode: Option<BackupMode>,
}

/// An application together with its publish record and attachment metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationDetail {
    #[serde(flatten)]
    pub application: Application,
    pub publish_record: Option<PublishRecord>,
    pub attachment_meta: Option<Attachment>,
}

/// An account as shown to admins: everything but the password digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserView {
    pub user_id: UserId,
    pub username: String,
    pub dept_id: DeptId,
    pub bound_ip: IpAddr,
    pub role: Role,
}

impl From<UserAccount> for UserView {
    fn from(u: UserAccount) -> Self {
        UserView {
            user_id: u.user_id,
            username: u.username,
            dept_id: u.dept_id,
            bound_ip: u.bound_ip,
            role: u.role,
        }
    }
}

pub const BACKUP_CHECKSUM_HEADER: &str = "x-dlms-checksum";

fn session_cookie(state: &AppState, token: &str, max_age: i64) -> HeaderValue {
    let secure = if state.config.secure_cookie { "; Secure" } else { "" };
    let value = format!("{SESSION_COOKIE}={token}; Path=/; HttpOnly; SameSite=Strict; Max-Age={max_age}{secure}");
    HeaderValue::from_str(&value).expect("token is URL-safe base64")
}

async fn login(
    State(state): State<AppState>,
    ClientIp(ip): ClientIp,
    ApiJson(req): ApiJson<LoginRequest>,
) -> ApiResult<Response> {
    let (session, user) = blocking(&state, move |reg| {
        let session = reg.login(&req.username, &req.password, ip)?;
        let user = reg.impersonate(session.user_id)?;
        Ok((session, user))
    })
    .await?;
    let max_age = (session.expires_at - session.issued_at).num_seconds();
    let cookie = session_cookie(&state, &session.token, max_age);
    let body = LoginResponse {
        token: session.token,
        expires_at: session.expires_at,
        user,
    };
    Ok(([(header::SET_COOKIE, cookie)], Json(body)).into_response())
}

async fn logout(State(state): State<AppState>, auth: Auth) -> Response {
    state.registry.logout(&auth.token);
    (
        StatusCode::NO_CONTENT,
        [(header::SET_COOKIE, session_cookie(&state, "", 0))],
    )
        .into_response()
}

async fn me(auth: Auth) -> Json<UserContext> {
    Json(auth.user)
}

async fn create_application(
    State(state): State<AppState>,
    auth: Auth,
    ApiJson(draft): ApiJson<NewApplication>,
) -> ApiResult<(StatusCode, Json<Application>)> {
    let app = blocking(&state, move |reg| reg.register_application(draft, &auth.user)).await?;
    Ok((StatusCode::CREATED, Json(app)))
}

async fn list_applications(
    State(state): State<AppState>,
    auth: Auth,
    ApiQuery(query): ApiQuery<FilterQuery>,
) -> ApiResult<Json<dlms_core::Page<Application>>> {
    Ok(Json(state.registry.filter_applications(&query, &auth.user)?))
}

async fn get_application(
    State(state): State<AppState>,
    _auth: Auth,
    ApiPath(id): ApiPath<AppId>,
) -> ApiResult<Json<ApplicationDetail>> {
    let reg = &state.registry;
    let application = reg.get_application(id)?;
    let publish_record = reg.get_publish_record(id)?;
    let attachment_meta = application
        .attachment
        .and_then(|a| reg.store().read(|t| t.attachment(a).cloned()));
    Ok(Json(ApplicationDetail {
        application,
        publish_record,
        attachment_meta,
    }))
}

async fn update_application(
    State(state): State<AppState>,
    auth: Auth,
    ApiPath(id): ApiPath<AppId>,
    ApiJson(changes): ApiJson<ApplicationChanges>,
) -> ApiResult<Json<Application>> {
    let app = blocking(&state, move |reg| reg.update_application(id, &changes, &auth.user)).await?;
    Ok(Json(app))
}

async fn redirect_application(
    State(state): State<AppState>,
    auth: Auth,
    ApiPath(id): ApiPath<AppId>,
    ApiJson(req): ApiJson<RedirectRequest>,
) -> ApiResult<(StatusCode, Json<dlms_core::RoutingEvent>)> {
    let ev = blocking(&state, move |reg| {
        reg.redirect_application(id, req.to_dept, &auth.user, &req.note)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(ev)))
}

async fn publish_application(
    State(state): State<AppState>,
    auth: Auth,
    ApiPath(id): ApiPath<AppId>,
    ApiJson(req): ApiJson<PublishRequest>,
) -> ApiResult<(StatusCode, Json<PublishRecord>)> {
    let rec = blocking(&state, move |reg| reg.publish_application(id, &req, &auth.user)).await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn application_events(
    State(state): State<AppState>,
    _auth: Auth,
    ApiPath(id): ApiPath<AppId>,
) -> ApiResult<Json<Vec<dlms_core::RoutingEvent>>> {
    Ok(Json(state.registry.track_application(id)?))
}

fn content_disposition(filename: &str) -> HeaderValue {
    let fallback: String = filename
        .chars()
        .map(|c| if c.is_ascii_graphic() && c != '"' && c != '\\' || c == ' ' { c } else { '_' })
        .collect();
    let encoded = utf8_percent_encode(filename, NON_ALPHANUMERIC);
    HeaderValue::from_str(&format!("attachment; filename=\"{fallback}\"; filename*=UTF-8''{encoded}"))
        .unwrap_or_else(|_| HeaderValue::from_static("attachment"))
}

async fn download_attachment(
    State(state): State<AppState>,
    auth: Auth,
    ApiPath(id): ApiPath<AppId>,
) -> ApiResult<Response> {
    let (meta, bytes) = blocking(&state, move |reg| reg.retrieve_attachment(id, &auth.user)).await?;
    let content_type =
        HeaderValue::from_str(&meta.media_type).unwrap_or(HeaderValue::from_static("application/octet-stream"));
    Ok((
        [
            (header::CONTENT_TYPE, content_type),
            (header::CONTENT_DISPOSITION, content_disposition(&meta.original_filename)),
            (header::ETAG, HeaderValue::from_str(&format!("\"{}\"", meta.content_digest)).expect("hex")),
        ],
        Body::from(bytes),
    )
        .into_response())
}

async fn upload_attachment(
    State(state): State<AppState>,
    auth: Auth,
    ApiPath(id): ApiPath<AppId>,
    ApiQuery(params): ApiQuery<UploadParams>,
    headers: HeaderMap,
    RawBody(bytes): RawBody,
) -> ApiResult<(StatusCode, Json<Attachment>)> {
    let media_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream")
        .to_owned();
    let meta = blocking(&state, move |reg| {
        reg.upload_attachment(id, &params.filename, &media_type, &bytes, &auth.user)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(meta)))
}

async fn list_departments(State(state): State<AppState>, _auth: Auth) -> Json<Vec<dlms_core::Department>> {
    Json(state.registry.list_departments())
}

async fn directed_jobs(
    State(state): State<AppState>,
    auth: Auth,
    ApiPath(dept): ApiPath<DeptId>,
    ApiQuery(p): ApiQuery<PageParams>,
) -> ApiResult<Json<dlms_core::Page<Application>>> {
    Ok(Json(state.registry.list_directed(dept, &auth.user, p.page, p.page_size)?))
}

async fn published(
    State(state): State<AppState>,
    auth: Auth,
    ApiQuery(query): ApiQuery<FilterQuery>,
) -> ApiResult<Json<dlms_core::Page<dlms_core::PublishRow>>> {
    Ok(Json(state.registry.list_published(&query, &auth.user)?))
}

async fn list_news(
    State(state): State<AppState>,
    auth: Auth,
    ApiQuery(p): ApiQuery<PageParams>,
) -> ApiResult<Json<dlms_core::Page<dlms_core::NewsItem>>> {
    Ok(Json(state.registry.list_news(&auth.user, p.page, p.page_size)?))
}

async fn add_news(
    State(state): State<AppState>,
    auth: Auth,
    ApiJson(req): ApiJson<NewsRequest>,
) -> ApiResult<(StatusCode, Json<dlms_core::NewsItem>)> {
    let item = blocking(&state, move |reg| reg.add_news(&auth.user, &req.title, &req.body)).await?;
    Ok((StatusCode::CREATED, Json(item)))
}

async fn delete_news(
    State(state): State<AppState>,
    auth: Auth,
    ApiPath(id): ApiPath<NewsId>,
) -> ApiResult<StatusCode> {
    blocking(&state, move |reg| reg.delete_news(&auth.user, id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_catalog(ApiPath(locale): ApiPath<String>) -> ApiResult<Json<&'static Catalog>> {
    let locale: Locale = locale.parse().map_err(|_| ApiError::new(ErrorCode::NotFound))?;
    Ok(Json(catalog(locale)))
}

async fn admin_list_users(State(state): State<AppState>, AdminAuth(admin): AdminAuth) -> ApiResult<Json<Vec<UserView>>> {
    let users = state.registry.list_users(&admin)?;
    Ok(Json(users.into_iter().map(UserView::from).collect()))
}

async fn admin_create_user(
    State(state): State<AppState>,
    AdminAuth(admin): AdminAuth,
    ApiJson(spec): ApiJson<NewUser>,
) -> ApiResult<(StatusCode, Json<UserView>)> {
    let acct = blocking(&state, move |reg| reg.create_user(&admin, spec)).await?;
    Ok((StatusCode::CREATED, Json(acct.into())))
}

async fn admin_rebind_ip(
    State(state): State<AppState>,
    AdminAuth(admin): AdminAuth,
    ApiPath(id): ApiPath<UserId>,
    ApiJson(req): ApiJson<RebindRequest>,
) -> ApiResult<Json<UserView>> {
    let acct = blocking(&state, move |reg| reg.rebind_ip(&admin, id, req.ip)).await?;
    Ok(Json(acct.into()))
}

async fn admin_list_departments(
    State(state): State<AppState>,
    AdminAuth(_): AdminAuth,
) -> Json<Vec<dlms_core::Department>> {
    Json(state.registry.list_departments())
}

async fn admin_create_department(
    State(state): State<AppState>,
    AdminAuth(admin): AdminAuth,
    ApiJson(spec): ApiJson<NewDepartment>,
) -> ApiResult<(StatusCode, Json<dlms_core::Department>)> {
    let dept = blocking(&state, move |reg| reg.create_department(&admin, spec)).await?;
    Ok((StatusCode::CREATED, Json(dept)))
}

async fn admin_backup(
    State(state): State<AppState>,
    AdminAuth(admin): AdminAuth,
    ApiQuery(p): ApiQuery<BackupParams>,
) -> ApiResult<Response> {
    let mode = p.mode.unwrap_or(BackupMode::Zipped);
    let archive = blocking(&state, move |reg| reg.export_backup(mode, &admin)).await?;
    let stamp = archive
        .created_at()
        .map(|t| t.format("%Y%m%d-%H%M%S").to_string())
        .unwrap_or_else(|| "empty".into());
    let filename = format!("dlms-{stamp}-{}.dlms", mode.to_string().to_lowercase());
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream")),
            (
                header::CONTENT_DISPOSITION,
                HeaderValue::from_str(&format!("attachment; filename=\"{filename}\"")).expect("ascii"),
            ),
            (
                header::HeaderName::from_static(BACKUP_CHECKSUM_HEADER),
                HeaderValue::from_str(&archive.checksum_hex()).expect("hex"),
            ),
        ],
        archive.to_bytes(),
    )
        .into_response())
}

async fn admin_restore(
    State(state): State<AppState>,
    AdminAuth(admin): AdminAuth,
    RawBody(bytes): RawBody,
) -> ApiResult<Json<dlms_core::RestoreReport>> {
    let report = blocking(&state, move |reg| reg.import_backup_bytes(&bytes, &admin)).await?;
    Ok(Json(report))
}

async fn admin_audit(State(state): State<AppState>, AdminAuth(admin): AdminAuth) -> ApiResult<Json<AttachmentAudit>> {
    Ok(Json(blocking(&state, move |reg| reg.audit_attachments(&admin)).await?))
}

async fn admin_sweep(State(state): State<AppState>, AdminAuth(admin): AdminAuth) -> ApiResult<Json<AttachmentAudit>> {
    Ok(Json(blocking(&state, move |reg| reg.sweep_attachments(&admin)).await?))
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::NotFound)
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(ErrorCode::MethodNotAllowed)
}

pub(crate) fn public_routes(state: &AppState) -> Router<AppState> {
    let upload_limit = usize::try_from(state.config.attachments.max_bytes).unwrap_or(usize::MAX);
    Router::new()
        .route("/api/login", post(login))
        .route("/api/logout", post(logout))
        .route("/api/me", get(me))
        .route("/api/applications", post(create_application).get(list_applications))
        .route("/api/applications/{id}", get(get_application).patch(update_application))
        .route("/api/applications/{id}/redirect", post(redirect_application))
        .route("/api/applications/{id}/publish", post(publish_application))
        .route("/api/applications/{id}/events", get(application_events))
        .route(
            "/api/applications/{id}/attachment",
            get(download_attachment)
                .put(upload_attachment)
                .layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route("/api/departments", get(list_departments))
        .route("/api/departments/{id}/directed", get(directed_jobs))
        .route("/api/published", get(published))
        .route("/api/news", get(list_news).post(add_news))
        .route("/api/news/{id}", delete(delete_news))
        .route("/api/catalog/{locale}", get(get_catalog))
}

pub(crate) fn admin_routes(state: &AppState) -> Router<AppState> {
    Router::new()
        .route("/users", get(admin_list_users).post(admin_create_user))
        .route("/users/{id}/rebind-ip", post(admin_rebind_ip))
        .route("/departments", get(admin_list_departments).post(admin_create_department))
        .route("/backup", get(admin_backup))
        .route(
            "/restore",
            post(admin_restore).layer(DefaultBodyLimit::max(state.config.max_restore_bytes)),
        )
        .route("/attachments/audit", get(admin_audit))
        .route("/attachments/sweep", post(admin_sweep))
        .method_not_allowed_fallback(method_not_allowed)
}

pub(crate) fn fallbacks(router: Router<AppState>) -> Router<AppState> {
    router
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
}

