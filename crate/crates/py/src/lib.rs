//! Python bindings. Records cross the boundary as plain dicts with the same
//! field names and value formats the HTTP API uses (ISO dates, snake_case
//! enums, integer ids).

use std::net::IpAddr;
use std::sync::Arc;

use dlms_core as core;
use dlms_core::{
    AppId, ApplicationChanges, BackupArchive, BackupMode, Config, DeptId, FilterQuery, NewApplication, NewDepartment,
    NewUser, NewsId, PasswordConfig, PublishRequest, Scope, SystemClock, UserId,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(dlms, DlmsError, PyException, "A domain operation was refused.");

/// Stable upper-snake name of a domain error, matching the HTTP error codes.
pub fn error_code(e: &core::Error) -> &'static str {
    use core::Error::*;
    match e {
        DuplicateIncomingNumber { .. } => "DUPLICATE_INCOMING_NUMBER",
        UnknownDepartment => "UNKNOWN_DEPARTMENT",
        ValidationFailed(_) => "VALIDATION_FAILED",
        NotAuthorized => "NOT_AUTHORIZED",
        NotFound => "NOT_FOUND",
        AlreadyPublished => "ALREADY_PUBLISHED",
        SelfRedirect => "SELF_REDIRECT",
        ImmutableField(_) => "IMMUTABLE_FIELD",
        NotAtOutgoing => "NOT_AT_OUTGOING",
        BadCredentials => "BAD_CREDENTIALS",
        AccessDeniedIp => "ACCESS_DENIED_IP",
        InvalidSession => "INVALID_SESSION",
        WrongDepartment => "WRONG_DEPARTMENT",
        DuplicateUsername => "DUPLICATE_USERNAME",
        DuplicateDepartmentCode(_) => "DUPLICATE_DEPARTMENT_CODE",
        InvariantViolation(_) => "INVARIANT_VIOLATION",
        InvalidQuery(_) => "INVALID_QUERY",
        StorageFailure(_) => "STORAGE_FAILURE",
        ConflictRetryable => "CONFLICT_RETRYABLE",
        ChecksumMismatch => "CHECKSUM_MISMATCH",
        UnsupportedVersion(_) => "UNSUPPORTED_VERSION",
        CorruptPayload(_) => "CORRUPT_PAYLOAD",
        DisallowedType(_) => "DISALLOWED_TYPE",
        TooLarge { .. } => "TOO_LARGE",
        NoAttachment => "NO_ATTACHMENT",
    }
}

fn domain(e: core::Error) -> PyErr {
    DlmsError::new_err((error_code(&e), e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(value: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn kwargs_or_empty<'py>(py: Python<'py>, kwargs: Option<&Bound<'py, PyDict>>) -> Bound<'py, PyAny> {
    match kwargs {
        Some(d) => d.clone().into_any(),
        None => PyDict::new(py).into_any(),
    }
}

fn parse_ip(ip: &str) -> PyResult<IpAddr> {
    ip.parse().map_err(|_| PyValueError::new_err(format!("not an IP address: {ip:?}")))
}

fn parse_mode(mode: &str) -> PyResult<BackupMode> {
    mode.parse().map_err(|_| PyValueError::new_err(format!("unknown backup mode {mode:?}")))
}

/// An authenticated caller. Obtained from `Registry.authorize` or
/// `Registry.session`.
#[pyclass(frozen, module = "dlms")]
pub struct UserContext(core::UserContext);

#[pymethods]
impl UserContext {
    #[getter]
    fn user_id(&self) -> u64 {
        self.0.user_id().0
    }

    #[getter]
    fn username(&self) -> &str {
        self.0.username()
    }

    #[getter]
    fn dept_id(&self) -> u64 {
        self.0.dept_id().0
    }

    #[getter]
    fn role<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.role())
    }

    #[getter]
    fn dept_kind<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.dept_kind())
    }

    #[getter]
    fn is_admin(&self) -> bool {
        self.0.is_admin()
    }

    fn __repr__(&self) -> String {
        format!("UserContext(username={:?}, dept_id={})", self.0.username(), self.0.dept_id().0)
    }
}

/// A login session. The token is readable but never shown in the repr.
#[pyclass(frozen, module = "dlms")]
pub struct Session(core::Session);

#[pymethods]
impl Session {
    #[getter]
    fn token(&self) -> &str {
        &self.0.token
    }

    #[getter]
    fn user_id(&self) -> u64 {
        self.0.user_id.0
    }

    #[getter]
    fn expires_at(&self) -> String {
        self.0.expires_at.to_rfc3339()
    }

    fn __repr__(&self) -> String {
        format!("Session(user_id={}, expires_at={})", self.0.user_id.0, self.0.expires_at.to_rfc3339())
    }
}

/// The records service. In memory by default, or durable under `data_dir`.
#[pyclass(frozen, module = "dlms")]
pub struct Registry(Arc<core::Registry>);

#[pymethods]
impl Registry {
    #[new]
    #[pyo3(signature = (data_dir=None, *, fast_hashing=false, max_attachment_bytes=None))]
    fn new(data_dir: Option<std::path::PathBuf>, fast_hashing: bool, max_attachment_bytes: Option<u64>) -> PyResult<Self> {
        let mut config = Config::default();
        if fast_hashing {
            config.password = PasswordConfig::insecure_fast();
        }
        if let Some(limit) = max_attachment_bytes {
            config.attachments.max_bytes = limit;
        }
        let reg = match data_dir {
            Some(dir) => core::Registry::open(dir, Arc::new(SystemClock), config),
            None => core::Registry::in_memory(config),
        }
        .map_err(domain)?;
        Ok(Registry(Arc::new(reg)))
    }

    /// Creates the admin department and first admin account on an empty
    /// registry. Returns False when accounts already exist.
    #[pyo3(signature = (username, password, ip, *, code=1, name="Administration"))]
    fn bootstrap_admin(&self, username: &str, password: &str, ip: &str, code: u32, name: &str) -> PyResult<bool> {
        let dept = NewDepartment { code, name: name.to_owned(), kind: core::DepartmentKind::Admin };
        let created = self.0.bootstrap_admin(dept, username, password, parse_ip(ip)?).map_err(domain)?;
        Ok(created.is_some())
    }

    fn login(&self, username: &str, password: &str, ip: &str) -> PyResult<Session> {
        self.0.login(username, password, parse_ip(ip)?).map(Session).map_err(domain)
    }

    fn logout(&self, token: &str) {
        self.0.logout(token);
    }

    fn authorize(&self, token: &str, ip: &str) -> PyResult<UserContext> {
        self.0.authorize(token, Scope::Authenticated, parse_ip(ip)?).map(UserContext).map_err(domain)
    }

    /// Login followed by authorize.
    fn session(&self, username: &str, password: &str, ip: &str) -> PyResult<UserContext> {
        let s = self.login(username, password, ip)?;
        self.authorize(&s.0.token, ip)
    }

    fn create_department<'py>(
        &self,
        py: Python<'py>,
        admin: &UserContext,
        code: u32,
        name: &str,
        kind: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = NewDepartment { code, name: name.to_owned(), kind: from_py(kind, "kind")? };
        to_py(py, &self.0.create_department(&admin.0, spec).map_err(domain)?)
    }

    fn departments<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.list_departments())
    }

    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (admin, username, password, dept_id, ip, role="clerk"))]
    fn create_user<'py>(
        &self,
        py: Python<'py>,
        admin: &UserContext,
        username: &str,
        password: &str,
        dept_id: u64,
        ip: &str,
        role: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = NewUser {
            username: username.to_owned(),
            password: password.to_owned(),
            dept_id: DeptId(dept_id),
            bound_ip: parse_ip(ip)?,
            role: from_py(&role.into_pyobject(py)?.into_any(), "role")?,
        };
        let account = self.0.create_user(&admin.0, spec).map_err(domain)?;
        user_row(py, &account)
    }

    fn users<'py>(&self, py: Python<'py>, admin: &UserContext) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let accounts = self.0.list_users(&admin.0).map_err(domain)?;
        accounts.iter().map(|a| user_row(py, a)).collect()
    }

    fn rebind_ip<'py>(&self, py: Python<'py>, admin: &UserContext, user_id: u64, ip: &str) -> PyResult<Bound<'py, PyAny>> {
        let account = self.0.rebind_ip(&admin.0, UserId(user_id), parse_ip(ip)?).map_err(domain)?;
        user_row(py, &account)
    }

    /// Registers an application from a dict of `NewApplication` fields.
    #[pyo3(signature = (actor, draft=None, **fields))]
    fn register<'py>(
        &self,
        py: Python<'py>,
        actor: &UserContext,
        draft: Option<&Bound<'py, PyAny>>,
        fields: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let draft: NewApplication = match draft {
            Some(d) => from_py(d, "draft")?,
            None => from_py(&kwargs_or_empty(py, fields), "draft")?,
        };
        to_py(py, &self.0.register_application(draft, &actor.0).map_err(domain)?)
    }

    #[pyo3(signature = (actor, app_id, to_dept, note=""))]
    fn redirect<'py>(
        &self,
        py: Python<'py>,
        actor: &UserContext,
        app_id: u64,
        to_dept: u64,
        note: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let event = self.0.redirect_application(AppId(app_id), DeptId(to_dept), &actor.0, note).map_err(domain)?;
        to_py(py, &event)
    }

    #[pyo3(signature = (actor, app_id, **changes))]
    fn update<'py>(
        &self,
        py: Python<'py>,
        actor: &UserContext,
        app_id: u64,
        changes: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let changes: ApplicationChanges = from_py(&kwargs_or_empty(py, changes), "changes")?;
        to_py(py, &self.0.update_application(AppId(app_id), &changes, &actor.0).map_err(domain)?)
    }

    fn publish<'py>(
        &self,
        py: Python<'py>,
        actor: &UserContext,
        app_id: u64,
        date_of_signature: &str,
        publish_date: &str,
        office_goto: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let date = |s: &str| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| PyValueError::new_err(format!("not a date: {s:?}")))
        };
        let req = PublishRequest {
            date_of_signature: date(date_of_signature)?,
            publish_date: date(publish_date)?,
            office_goto: office_goto.to_owned(),
        };
        to_py(py, &self.0.publish_application(AppId(app_id), &req, &actor.0).map_err(domain)?)
    }

    fn get<'py>(&self, py: Python<'py>, app_id: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.get_application(AppId(app_id)).map_err(domain)?)
    }

    fn track<'py>(&self, py: Python<'py>, app_id: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.track_application(AppId(app_id)).map_err(domain)?)
    }

    /// Filters applications; keyword arguments are `FilterQuery` fields.
    #[pyo3(signature = (viewer, **query))]
    fn filter<'py>(
        &self,
        py: Python<'py>,
        viewer: &UserContext,
        query: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let q: FilterQuery = from_py(&kwargs_or_empty(py, query), "query")?;
        to_py(py, &self.0.filter_applications(&q, &viewer.0).map_err(domain)?)
    }

    #[pyo3(signature = (viewer, **query))]
    fn published<'py>(
        &self,
        py: Python<'py>,
        viewer: &UserContext,
        query: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let q: FilterQuery = from_py(&kwargs_or_empty(py, query), "query")?;
        to_py(py, &self.0.list_published(&q, &viewer.0).map_err(domain)?)
    }

    fn upload<'py>(
        &self,
        py: Python<'py>,
        actor: &UserContext,
        app_id: u64,
        filename: &str,
        media_type: &str,
        data: &[u8],
    ) -> PyResult<Bound<'py, PyAny>> {
        let att = self.0.upload_attachment(AppId(app_id), filename, media_type, data, &actor.0).map_err(domain)?;
        to_py(py, &att)
    }

    /// Returns `(metadata, content)`.
    fn download<'py>(
        &self,
        py: Python<'py>,
        viewer: &UserContext,
        app_id: u64,
    ) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyBytes>)> {
        let (att, bytes) = self.0.retrieve_attachment(AppId(app_id), &viewer.0).map_err(domain)?;
        Ok((to_py(py, &att)?, PyBytes::new(py, &bytes)))
    }

    fn add_news<'py>(&self, py: Python<'py>, admin: &UserContext, title: &str, body: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.add_news(&admin.0, title, body).map_err(domain)?)
    }

    #[pyo3(signature = (viewer, page=1, page_size=None))]
    fn news<'py>(
        &self,
        py: Python<'py>,
        viewer: &UserContext,
        page: u32,
        page_size: Option<u32>,
    ) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.list_news(&viewer.0, page, page_size).map_err(domain)?)
    }

    fn delete_news(&self, admin: &UserContext, news_id: u64) -> PyResult<()> {
        self.0.delete_news(&admin.0, NewsId(news_id)).map_err(domain)
    }

    #[pyo3(signature = (admin, mode="zipped"))]
    fn backup<'py>(&self, py: Python<'py>, admin: &UserContext, mode: &str) -> PyResult<Bound<'py, PyBytes>> {
        let archive = self.0.export_backup(parse_mode(mode)?, &admin.0).map_err(domain)?;
        Ok(PyBytes::new(py, &archive.to_bytes()))
    }

    fn restore<'py>(&self, py: Python<'py>, admin: &UserContext, data: &[u8]) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.import_backup_bytes(data, &admin.0).map_err(domain)?)
    }

    /// Flushes the journal into a snapshot. A no-op for in-memory registries.
    fn checkpoint(&self) -> PyResult<()> {
        self.0.store().checkpoint().map_err(domain)
    }
}

fn user_row<'py>(py: Python<'py>, account: &core::UserAccount) -> PyResult<Bound<'py, PyAny>> {
    #[derive(Serialize)]
    struct Row<'a> {
        user_id: UserId,
        username: &'a str,
        dept_id: DeptId,
        bound_ip: IpAddr,
        role: core::Role,
    }
    to_py(
        py,
        &Row {
            user_id: account.user_id,
            username: &account.username,
            dept_id: account.dept_id,
            bound_ip: account.bound_ip,
            role: account.role,
        },
    )
}

/// Verifies a backup file and describes it without touching any registry.
#[pyfunction]
fn inspect_backup<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let archive = BackupArchive::from_bytes(data).map_err(domain)?;
    let info = serde_json::json!({
        "mode": archive.mode().to_string(),
        "format_version": archive.format_version(),
        "checksum": archive.checksum_hex(),
        "created_at": archive.created_at().map(|t| t.to_rfc3339()),
        "tables": archive.table_counts(),
        "bytes": data.len(),
        "payload_bytes": archive.canonical_payload().len(),
    });
    to_py(py, &info)
}

#[pymodule]
fn dlms(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Registry>()?;
    m.add_class::<UserContext>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(inspect_backup, m)?)?;
    m.add("DlmsError", m.py().get_type::<DlmsError>())?;
    Ok(())
}
