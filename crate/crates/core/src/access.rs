//! Accounts, sessions and department-scoped authorization.
//!
//! Every account is bound to one source address. A login or an authorized
//! call coming from any other address is refused with
//! [`Error::AccessDeniedIp`], even when the credentials or the session token
//! are valid.

use std::fmt;
use std::net::IpAddr;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ids::{DeptId, UserId};
use crate::model::{Department, DepartmentKind, NewDepartment};
use crate::registry::Registry;
use crate::store::Mutation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clerk,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: UserId,
    pub username: String,
    /// PHC-format argon2id string; never the password itself.
    pub password_digest: String,
    pub dept_id: DeptId,
    pub bound_ip: IpAddr,
    pub role: Role,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct NewUser {
    pub username: String,
    pub password: String,
    pub dept_id: DeptId,
    pub bound_ip: IpAddr,
    pub role: Role,
}

impl fmt::Debug for NewUser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NewUser")
            .field("username", &self.username)
            .field("password", &"<redacted>")
            .field("dept_id", &self.dept_id)
            .field("bound_ip", &self.bound_ip)
            .field("role", &self.role)
            .finish()
    }
}

/// A freshly issued session. The token is only ever held by the caller; the
/// registry keeps a digest of it.
#[derive(Clone, Serialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub issue_ip: IpAddr,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("token", &"<redacted>")
            .field("user_id", &self.user_id)
            .field("issued_at", &self.issued_at)
            .field("expires_at", &self.expires_at)
            .field("issue_ip", &self.issue_ip)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SessionRecord {
    pub user_id: UserId,
    pub expires_at: DateTime<Utc>,
    pub issue_ip: IpAddr,
}

pub(crate) type TokenDigest = [u8; 32];

pub(crate) fn token_digest(token: &str) -> TokenDigest {
    Sha256::digest(token.as_bytes()).into()
}

/// The authenticated caller of an operation.
///
/// Only produced by [`Registry::authorize`] or [`Registry::impersonate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserContext {
    user_id: UserId,
    username: String,
    dept_id: DeptId,
    dept_kind: DepartmentKind,
    role: Role,
}

impl UserContext {
    pub fn user_id(&self) -> UserId {
        self.user_id
    }

    pub fn username(&self) -> &str {
        &self.username
    }

    pub fn dept_id(&self) -> DeptId {
        self.dept_id
    }

    pub fn dept_kind(&self) -> DepartmentKind {
        self.dept_kind
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }

    pub(crate) fn require_admin(&self) -> Result<()> {
        if self.is_admin() {
            Ok(())
        } else {
            Err(Error::NotAuthorized)
        }
    }
}

/// What an operation demands of its caller. Admins satisfy every scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Any authenticated user.
    Authenticated,
    Department(DeptId),
    Kind(DepartmentKind),
    Admin,
}

impl Scope {
    fn admits(self, ctx: &UserContext) -> bool {
        if ctx.is_admin() {
            return true;
        }
        match self {
            Scope::Authenticated => true,
            Scope::Department(d) => ctx.dept_id == d,
            Scope::Kind(k) => ctx.dept_kind == k,
            Scope::Admin => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasswordConfig {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for PasswordConfig {
    fn default() -> Self {
        PasswordConfig {
            memory_kib: 19 * 1024,
            iterations: 2,
            parallelism: 1,
        }
    }
}

impl PasswordConfig {
    /// Cheap parameters for tests and throwaway instances.
    pub fn insecure_fast() -> Self {
        PasswordConfig {
            memory_kib: 64,
            iterations: 1,
            parallelism: 1,
        }
    }

    fn hasher(&self) -> Result<Argon2<'static>> {
        let params = Params::new(self.memory_kib, self.iterations, self.parallelism, None)
            .map_err(|e| Error::InvariantViolation(format!("password parameters: {e}")))?;
        Ok(Argon2::new(Algorithm::Argon2id, Version::V0x13, params))
    }

    pub fn digest(&self, password: &str) -> Result<String> {
        let salt = SaltString::generate(&mut OsRng);
        self.hasher()?
            .hash_password(password.as_bytes(), &salt)
            .map(|h| h.to_string())
            .map_err(Error::storage)
    }
}

/// Checks a password against a stored PHC string. Parameters come from the
/// digest itself, so accounts survive a change of [`PasswordConfig`].
pub fn verify_password(digest: &str, password: &str) -> bool {
    match PasswordHash::new(digest) {
        Ok(parsed) => Argon2::default()
            .verify_password(password.as_bytes(), &parsed)
            .is_ok(),
        Err(_) => false,
    }
}

/// Compares addresses treating `::ffff:a.b.c.d` as `a.b.c.d`.
pub fn same_ip(a: IpAddr, b: IpAddr) -> bool {
    a.to_canonical() == b.to_canonical()
}

fn new_token() -> String {
    let mut raw = [0u8; 32];
    OsRng.fill_bytes(&mut raw);
    URL_SAFE_NO_PAD.encode(raw)
}

fn validate_username(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::validation("username"))
    }
}

impl Registry {
    /// Logs in from `source_ip`.
    ///
    /// Unknown users and wrong passwords are indistinguishable. Correct
    /// credentials from an address other than the account's bound one yield
    /// [`Error::AccessDeniedIp`].
    pub fn login(&self, username: &str, password: &str, source_ip: IpAddr) -> Result<Session> {
        let account = self
            .store()
            .read(|t| t.user_by_name(username).cloned());
        let Some(account) = account else {
            // keep the timing of unknown users close to that of wrong passwords
            let _ = verify_password(self.dummy_digest(), password);
            return Err(Error::BadCredentials);
        };
        if !verify_password(&account.password_digest, password) {
            return Err(Error::BadCredentials);
        }
        if !same_ip(account.bound_ip, source_ip) {
            tracing::warn!(user = %account.username, %source_ip, "login from unbound address");
            return Err(Error::AccessDeniedIp);
        }
        let issued_at = self.clock().now();
        let expires_at = issued_at + self.config().session_ttl;
        let token = new_token();
        self.sessions().write().insert(
            token_digest(&token),
            SessionRecord {
                user_id: account.user_id,
                expires_at,
                issue_ip: source_ip,
            },
        );
        Ok(Session {
            token,
            user_id: account.user_id,
            issued_at,
            expires_at,
            issue_ip: source_ip,
        })
    }

    /// Ends a session. Unknown tokens are ignored.
    pub fn logout(&self, token: &str) {
        self.sessions().write().remove(&token_digest(token));
    }

    pub fn authorize(&self, token: &str, scope: Scope, source_ip: IpAddr) -> Result<UserContext> {
        let key = token_digest(token);
        let record = self
            .sessions()
            .read()
            .get(&key)
            .cloned()
            .ok_or(Error::InvalidSession)?;
        if self.clock().now() >= record.expires_at {
            self.sessions().write().remove(&key);
            return Err(Error::InvalidSession);
        }
        let ctx = self.context_for(record.user_id).map_err(|_| Error::InvalidSession)?;
        let bound_ip = self
            .store()
            .read(|t| t.users.get(&record.user_id).map(|u| u.bound_ip))
            .ok_or(Error::InvalidSession)?;
        if !same_ip(source_ip, record.issue_ip) || !same_ip(source_ip, bound_ip) {
            return Err(Error::AccessDeniedIp);
        }
        if !scope.admits(&ctx) {
            return Err(Error::WrongDepartment);
        }
        Ok(ctx)
    }

    /// Builds a context for a user without a session. Intended for trusted
    /// in-process callers such as bootstrap tooling and embedding hosts.
    pub fn impersonate(&self, user_id: UserId) -> Result<UserContext> {
        self.context_for(user_id)
    }

    pub(crate) fn context_for(&self, user_id: UserId) -> Result<UserContext> {
        self.store().read(|t| {
            let user = t.users.get(&user_id).ok_or(Error::NotFound)?;
            let dept = t
                .departments
                .get(&user.dept_id)
                .ok_or(Error::UnknownDepartment)?;
            Ok(UserContext {
                user_id,
                username: user.username.clone(),
                dept_id: dept.dept_id,
                dept_kind: dept.kind,
                role: user.role,
            })
        })
    }

    pub fn create_user(&self, admin: &UserContext, spec: NewUser) -> Result<UserAccount> {
        admin.require_admin()?;
        validate_username(&spec.username)?;
        if spec.password.is_empty() {
            return Err(Error::validation("password"));
        }
        let digest = self.config().password.digest(&spec.password)?;
        self.store().write(self.clock().now(), |tx| {
            let dept = tx
                .tables()
                .departments
                .get(&spec.dept_id)
                .ok_or(Error::UnknownDepartment)?;
            if spec.role == Role::Admin && dept.kind != DepartmentKind::Admin {
                return Err(Error::validation("role"));
            }
            if tx.tables().user_by_name(&spec.username).is_some() {
                return Err(Error::DuplicateUsername);
            }
            let account = UserAccount {
                user_id: tx.next_user_id(),
                username: spec.username.clone(),
                password_digest: digest.clone(),
                dept_id: spec.dept_id,
                bound_ip: spec.bound_ip,
                role: spec.role,
            };
            tx.stage(Mutation::PutUser(account.clone()))?;
            Ok(account)
        })
    }

    /// Moves a user's binding to `new_ip` and drops all of their sessions.
    pub fn rebind_ip(&self, admin: &UserContext, user_id: UserId, new_ip: IpAddr) -> Result<UserAccount> {
        admin.require_admin()?;
        let account = self.store().write(self.clock().now(), |tx| {
            let mut account = tx
                .tables()
                .users
                .get(&user_id)
                .cloned()
                .ok_or(Error::NotFound)?;
            account.bound_ip = new_ip;
            tx.stage(Mutation::PutUser(account.clone()))?;
            Ok(account)
        })?;
        self.sessions().write().retain(|_, s| s.user_id != user_id);
        Ok(account)
    }

    pub fn list_users(&self, admin: &UserContext) -> Result<Vec<UserAccount>> {
        admin.require_admin()?;
        Ok(self.store().read(|t| t.users.values().cloned().collect()))
    }

    pub fn create_department(&self, admin: &UserContext, spec: NewDepartment) -> Result<Department> {
        admin.require_admin()?;
        self.insert_department(spec)
    }

    fn insert_department(&self, spec: NewDepartment) -> Result<Department> {
        if spec.code == 0 {
            return Err(Error::validation("code"));
        }
        if spec.name.trim().is_empty() {
            return Err(Error::validation("name"));
        }
        self.store().write(self.clock().now(), |tx| {
            let t = tx.tables();
            if t.dept_by_code(spec.code).is_some() {
                return Err(Error::DuplicateDepartmentCode(spec.code));
            }
            if spec.kind.is_singleton() && t.dept_of_kind(spec.kind).is_some() {
                return Err(Error::InvariantViolation(format!(
                    "a {:?} department already exists",
                    spec.kind
                )));
            }
            let dept = Department {
                dept_id: tx.next_dept_id(),
                code: spec.code,
                name: spec.name.clone(),
                kind: spec.kind,
            };
            tx.stage(Mutation::PutDepartment(dept.clone()))?;
            Ok(dept)
        })
    }

    pub fn list_departments(&self) -> Vec<Department> {
        self.store().read(|t| t.departments.values().cloned().collect())
    }

    /// Creates the admin department and the first admin account on an empty
    /// system. Does nothing (and returns `None`) once any account exists.
    pub fn bootstrap_admin(
        &self,
        admin_dept: NewDepartment,
        username: &str,
        password: &str,
        bound_ip: IpAddr,
    ) -> Result<Option<UserAccount>> {
        if self.store().read(|t| !t.users.is_empty()) {
            return Ok(None);
        }
        if admin_dept.kind != DepartmentKind::Admin {
            return Err(Error::validation("kind"));
        }
        let dept = match self.store().read(|t| t.dept_of_kind(DepartmentKind::Admin).cloned()) {
            Some(d) => d,
            None => self.insert_department(admin_dept)?,
        };
        validate_username(username)?;
        if password.is_empty() {
            return Err(Error::validation("password"));
        }
        let digest = self.config().password.digest(password)?;
        self.store()
            .write(self.clock().now(), |tx| {
                if !tx.tables().users.is_empty() {
                    return Ok(None);
                }
                let account = UserAccount {
                    user_id: tx.next_user_id(),
                    username: username.to_owned(),
                    password_digest: digest.clone(),
                    dept_id: dept.dept_id,
                    bound_ip,
                    role: Role::Admin,
                };
                tx.stage(Mutation::PutUser(account.clone()))?;
                Ok(Some(account))
            })
    }

    pub(crate) fn purge_expired_sessions(&self) {
        let now = self.clock().now();
        self.sessions().write().retain(|_, s| s.expires_at > now);
    }
}

pub(crate) fn default_session_ttl() -> Duration {
    Duration::hours(8)
}
