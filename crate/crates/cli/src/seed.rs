//! Seed files describe the department structure and initial accounts.
//!
//! ```toml
//! [[department]]
//! code = 10
//! name = "Incoming archive"
//! kind = "incoming_archive"   # or outgoing, functional, admin
//!
//! [[user]]
//! username = "inbox1"
//! department = 10             # department code
//! bound_ip = "10.0.0.5"
//! role = "clerk"              # optional, clerk by default
//! password_env = "INBOX1_PW"  # optional, DLMS_SEED_PASSWORD by default
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use dlms_core::{Department, DepartmentKind, DeptId, NewDepartment, Role};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_PASSWORD_ENV: &str = "DLMS_SEED_PASSWORD";

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedFile {
    #[serde(default, rename = "department")]
    pub departments: Vec<NewDepartment>,
    #[serde(default, rename = "user")]
    pub users: Vec<SeedUser>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedUser {
    pub username: String,
    /// Department code.
    pub department: u32,
    pub bound_ip: IpAddr,
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default)]
    pub password_env: Option<String>,
}

impl SeedUser {
    pub fn role(&self) -> Role {
        self.role.unwrap_or(Role::Clerk)
    }

    pub fn password_env(&self) -> &str {
        self.password_env.as_deref().unwrap_or(DEFAULT_PASSWORD_ENV)
    }
}

/// An account as the service lists it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRow {
    pub user_id: u64,
    pub username: String,
    pub dept_id: DeptId,
    pub bound_ip: IpAddr,
    pub role: Role,
}

impl SeedFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            what: origin.to_owned(),
            message: e.to_string().trim().to_owned(),
        })
    }

    /// Checks the file on its own: unique codes and usernames, exactly one
    /// incoming archive, outgoing and admin department, and users pointing
    /// at listed departments.
    pub fn validate(&self) -> Result<()> {
        let mut codes = BTreeSet::new();
        for d in &self.departments {
            if d.code == 0 {
                return Err(CliError::Invariant(format!("department {:?} has code 0", d.name)));
            }
            if d.name.trim().is_empty() {
                return Err(CliError::Invariant(format!("department {} has no name", d.code)));
            }
            if !codes.insert(d.code) {
                return Err(CliError::Invariant(format!("department code {} appears twice", d.code)));
            }
        }
        for kind in [DepartmentKind::IncomingArchive, DepartmentKind::Outgoing, DepartmentKind::Admin] {
            let n = self.departments.iter().filter(|d| d.kind == kind).count();
            if n != 1 {
                return Err(CliError::Invariant(format!(
                    "expected exactly one {} department, found {n}",
                    kind_name(kind)
                )));
            }
        }
        let mut names = BTreeSet::new();
        for u in &self.users {
            if !names.insert(u.username.as_str()) {
                return Err(CliError::Invariant(format!("user {:?} appears twice", u.username)));
            }
            if !codes.contains(&u.department) {
                return Err(CliError::Invariant(format!(
                    "user {:?} names unknown department {}",
                    u.username, u.department
                )));
            }
        }
        Ok(())
    }
}

fn kind_name(kind: DepartmentKind) -> &'static str {
    match kind {
        DepartmentKind::IncomingArchive => "incoming_archive",
        DepartmentKind::Outgoing => "outgoing",
        DepartmentKind::Functional => "functional",
        DepartmentKind::Admin => "admin",
    }
}

/// What applying a seed would change.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Plan {
    pub create_departments: Vec<NewDepartment>,
    pub unchanged_departments: usize,
    pub create_users: Vec<SeedUser>,
    pub unchanged_users: usize,
}

impl Plan {
    pub fn is_noop(&self) -> bool {
        self.create_departments.is_empty() && self.create_users.is_empty()
    }
}

/// Compares a validated seed with what the server already holds. Entries
/// that exist unchanged are skipped; entries that exist differently are an
/// error rather than being overwritten.
pub fn plan(seed: &SeedFile, departments: &[Department], users: &[UserRow]) -> Result<Plan> {
    let mut plan = Plan::default();
    let by_code: BTreeMap<u32, &Department> = departments.iter().map(|d| (d.code, d)).collect();
    for d in &seed.departments {
        match by_code.get(&d.code) {
            Some(existing) if existing.kind == d.kind && existing.name == d.name => plan.unchanged_departments += 1,
            Some(existing) => {
                return Err(CliError::Invariant(format!(
                    "department {} exists on the server as {:?} ({})",
                    d.code,
                    existing.name,
                    kind_name(existing.kind)
                )))
            }
            None => {
                if d.kind != DepartmentKind::Functional {
                    if let Some(other) = departments.iter().find(|x| x.kind == d.kind) {
                        return Err(CliError::Invariant(format!(
                            "the server already has a {} department (code {})",
                            kind_name(d.kind),
                            other.code
                        )));
                    }
                }
                plan.create_departments.push(d.clone());
            }
        }
    }
    let code_of: BTreeMap<DeptId, u32> = departments.iter().map(|d| (d.dept_id, d.code)).collect();
    for u in &seed.users {
        match users.iter().find(|x| x.username == u.username) {
            Some(existing) => {
                let same = code_of.get(&existing.dept_id) == Some(&u.department)
                    && existing.bound_ip.to_canonical() == u.bound_ip.to_canonical()
                    && existing.role == u.role();
                if !same {
                    return Err(CliError::Invariant(format!(
                        "user {:?} exists on the server with different settings",
                        u.username
                    )));
                }
                plan.unchanged_users += 1;
            }
            None => plan.create_users.push(u.clone()),
        }
    }
    Ok(plan)
}
