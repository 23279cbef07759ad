use std::net::IpAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dlms_core::backup::HEADER_LEN;
use dlms_core::{BackupArchive, BackupMode, Department, NewDepartment, RestoreReport, Role};
use serde_json::json;

use crate::client::Client;
use crate::config::{CliConfig, FileConfig, Overrides};
use crate::error::{CliError, Result, EXIT_CODES};
use crate::seed::{plan, SeedFile, UserRow};

fn exit_code_help() -> String {
    let mut s = String::from("Exit codes:\n");
    for (code, class, meaning) in EXIT_CODES {
        s.push_str(&format!("  {code}  {class:<9} {meaning}\n"));
    }
    s.push_str(
        "\nCredentials are read from DLMS_TOKEN, or DLMS_ADMIN_USER and DLMS_ADMIN_PASSWORD.\n\
         They are never accepted as flags and never printed.",
    );
    s
}

/// Operator tool for the departmental records service.
#[derive(Debug, Parser)]
#[command(name = "dlms-admin", version, after_help = exit_code_help())]
pub struct Cli {
    /// Base URL of the service.
    #[arg(long, global = true, env = "DLMS_API")]
    pub api: Option<String>,
    /// Mount point of the administrative endpoints.
    #[arg(long, global = true, env = "DLMS_ADMIN_PATH")]
    pub admin_path: Option<String>,
    /// Language for messages from the service (ku or en).
    #[arg(long, global = true, env = "DLMS_LOCALE")]
    pub locale: Option<String>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// TOML file with api, admin_path, locale and username.
    #[arg(long, global = true, env = "DLMS_ADMIN_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the departments and accounts listed in a seed file. Safe to re-run.
    Seed {
        file: PathBuf,
        /// Only report what would change.
        #[arg(long)]
        dry_run: bool,
    },
    /// Download a backup archive.
    Backup {
        #[arg(long, value_enum, default_value_t = Mode::Zipped)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the service's entire store with an archive.
    Restore {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Manage accounts.
    #[command(subcommand)]
    User(UserCommand),
    /// List departments.
    Departments,
}

#[derive(Debug, Subcommand)]
pub enum UserCommand {
    /// Create an account. The password is read from an environment variable.
    Add(UserAdd),
    /// Bind an account to a different address. Its sessions end.
    RebindIp {
        #[arg(long)]
        username: String,
        #[arg(long)]
        ip: IpAddr,
    },
    List,
}

#[derive(Debug, Args)]
pub struct UserAdd {
    #[arg(long)]
    pub username: String,
    /// Department code.
    #[arg(long)]
    pub dept: u32,
    #[arg(long)]
    pub ip: IpAddr,
    #[arg(long, value_enum, default_value_t = RoleArg::Clerk)]
    pub role: RoleArg,
    /// Variable holding the new account's password.
    #[arg(long, default_value = "DLMS_NEW_USER_PASSWORD")]
    pub password_env: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    None,
    Zipped,
}

impl From<Mode> for BackupMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::None => BackupMode::None,
            Mode::Zipped => BackupMode::Zipped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Clerk,
    Admin,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Clerk => Role::Clerk,
            RoleArg::Admin => Role::Admin,
        }
    }
}

/// A command's result, in both output forms.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
}

pub type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

impl Cli {
    pub fn config(&self, env: Env) -> Result<CliConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let flags = Overrides {
            api: self.api.clone(),
            admin_path: self.admin_path.clone(),
            locale: self.locale.clone(),
        };
        CliConfig::resolve(&flags, &file, env)
    }
}

/// Runs the parsed command. Local input is checked before contacting the
/// service.
pub fn run(cli: &Cli, env: Env) -> Result<Report> {
    let cfg = cli.config(env)?;
    match &cli.command {
        Command::Seed { file, dry_run } => {
            let seed = read_seed(file)?;
            let client = Client::connect(&cfg)?;
            seed_cmd(&client, &seed, *dry_run, env)
        }
        Command::Backup { mode, out } => {
            let client = Client::connect(&cfg)?;
            backup_cmd(&client, (*mode).into(), out)
        }
        Command::Restore { input } => {
            let bytes = std::fs::read(input).map_err(|e| CliError::io(input.display(), e))?;
            let archive = BackupArchive::from_bytes(&bytes)?;
            let mut client = Client::connect(&cfg)?;
            restore_cmd(&mut client, &archive, bytes)
        }
        Command::User(UserCommand::Add(args)) => {
            let password = env(&args.password_env)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| CliError::Usage(format!("set {} to the new account's password", args.password_env)))?;
            let client = Client::connect(&cfg)?;
            user_add_cmd(&client, args, &password)
        }
        Command::User(UserCommand::RebindIp { username, ip }) => {
            let client = Client::connect(&cfg)?;
            rebind_cmd(&client, username, *ip)
        }
        Command::User(UserCommand::List) => {
            let client = Client::connect(&cfg)?;
            let users: Vec<UserRow> = client.get(&client.admin("/users"))?;
            let text = users
                .iter()
                .map(|u| format!("{:>5}  {:<20} dept {:<5} {:<40} {:?}", u.user_id, u.username, u.dept_id.0, u.bound_ip, u.role))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Report { text, json: json!(users) })
        }
        Command::Departments => {
            let client = Client::connect(&cfg)?;
            let depts: Vec<Department> = client.get("/api/departments")?;
            let text = depts
                .iter()
                .map(|d| format!("{:>5}  {:<18} {}", d.code, format!("{:?}", d.kind), d.name))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Report { text, json: json!(depts) })
        }
    }
}

fn read_seed(path: &Path) -> Result<SeedFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let seed = SeedFile::parse(&text, &path.display().to_string())?;
    seed.validate()?;
    Ok(seed)
}

fn seed_cmd(client: &Client, seed: &SeedFile, dry_run: bool, env: Env) -> Result<Report> {
    let depts: Vec<Department> = client.get(&client.admin("/departments"))?;
    let users: Vec<UserRow> = client.get(&client.admin("/users"))?;
    let plan = plan(seed, &depts, &users)?;
    let mut passwords = Vec::with_capacity(plan.create_users.len());
    for u in &plan.create_users {
        let var = u.password_env();
        let pw = env(var)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| CliError::Usage(format!("set {var} to the password for {:?}", u.username)))?;
        passwords.push(pw);
    }
    if !dry_run {
        for d in &plan.create_departments {
            let _: Department = client.post(&client.admin("/departments"), d)?;
        }
        let depts: Vec<Department> = client.get(&client.admin("/departments"))?;
        for (u, password) in plan.create_users.iter().zip(&passwords) {
            let dept = depts
                .iter()
                .find(|d| d.code == u.department)
                .ok_or_else(|| CliError::Invariant(format!("department {} vanished", u.department)))?;
            let body = json!({
                "username": u.username,
                "password": password,
                "dept_id": dept.dept_id,
                "bound_ip": u.bound_ip,
                "role": u.role(),
            });
            let _: UserRow = client.post(&client.admin("/users"), &body)?;
        }
    }
    let total: usize = if dry_run {
        depts.len() + plan.create_departments.len()
    } else {
        client.get::<Vec<Department>>(&client.admin("/departments"))?.len()
    };
    let verb = if dry_run { "would create" } else { "created" };
    let text = format!(
        "{verb} {} departments and {} users; {} departments and {} users unchanged; {total} departments in total",
        plan.create_departments.len(),
        plan.create_users.len(),
        plan.unchanged_departments,
        plan.unchanged_users,
    );
    let created: Vec<&NewDepartment> = plan.create_departments.iter().collect();
    Ok(Report {
        text,
        json: json!({
            "dry_run": dry_run,
            "departments_created": created,
            "users_created": plan.create_users.iter().map(|u| &u.username).collect::<Vec<_>>(),
            "departments_unchanged": plan.unchanged_departments,
            "users_unchanged": plan.unchanged_users,
            "departments_total": total,
            "changed": !plan.is_noop() && !dry_run,
        }),
    })
}

/// Size of the same archive stored without compression.
pub fn uncompressed_size(archive: &BackupArchive) -> usize {
    HEADER_LEN + archive.canonical_payload().len()
}

fn backup_cmd(client: &Client, mode: BackupMode, out: &Path) -> Result<Report> {
    let query = match mode {
        BackupMode::None => "none",
        BackupMode::Zipped => "zipped",
    };
    let (bytes, checksum) = client.get_bytes(&client.admin(&format!("/backup?mode={query}")), "x-dlms-checksum")?;
    let archive = BackupArchive::from_bytes(&bytes)?;
    if checksum.as_deref().is_some_and(|c| c != archive.checksum_hex()) {
        return Err(CliError::Checksum("checksum header does not match the archive".into()));
    }
    if archive.mode() != mode {
        return Err(CliError::Checksum(format!("asked for {mode}, received {}", archive.mode())));
    }
    std::fs::write(out, &bytes).map_err(|e| CliError::io(out.display(), e))?;
    let full = uncompressed_size(&archive);
    let ratio = bytes.len() as f64 / full as f64;
    Ok(Report {
        text: format!(
            "wrote {} ({} bytes, {mode}, {:.2}% of {full} uncompressed bytes, sha256 {})",
            out.display(),
            bytes.len(),
            ratio * 100.0,
            archive.checksum_hex()
        ),
        json: json!({
            "path": out,
            "mode": mode,
            "bytes": bytes.len(),
            "uncompressed_bytes": full,
            "ratio": ratio,
            "checksum": archive.checksum_hex(),
            "tables": archive.table_counts(),
        }),
    })
}

fn restore_cmd(client: &mut Client, archive: &BackupArchive, bytes: Vec<u8>) -> Result<Report> {
    let report: RestoreReport = client.post_bytes(&client.admin("/restore"), bytes)?;
    client.abandon_session();
    let tables = report
        .tables
        .iter()
        .map(|(t, n)| format!("{t}={n}"))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Report {
        text: format!(
            "restored {} rows ({tables}); checksum {} verified; all sessions ended",
            report.rows,
            archive.checksum_hex()
        ),
        json: json!(report),
    })
}

fn user_add_cmd(client: &Client, args: &UserAdd, password: &str) -> Result<Report> {
    let depts: Vec<Department> = client.get(&client.admin("/departments"))?;
    let dept = depts
        .iter()
        .find(|d| d.code == args.dept)
        .ok_or_else(|| CliError::Usage(format!("no department with code {}", args.dept)))?;
    let body = json!({
        "username": args.username,
        "password": password,
        "dept_id": dept.dept_id,
        "bound_ip": args.ip,
        "role": Role::from(args.role),
    });
    let user: UserRow = client.post(&client.admin("/users"), &body)?;
    Ok(Report {
        text: format!(
            "created {} (id {}) in department {} bound to {}",
            user.username, user.user_id, dept.code, user.bound_ip
        ),
        json: json!(user),
    })
}

fn rebind_cmd(client: &Client, username: &str, ip: IpAddr) -> Result<Report> {
    let users: Vec<UserRow> = client.get(&client.admin("/users"))?;
    let user = users
        .iter()
        .find(|u| u.username == username)
        .ok_or_else(|| CliError::Usage(format!("no user named {username:?}")))?;
    let updated: UserRow = client.post(&client.admin(&format!("/users/{}/rebind-ip", user.user_id)), &json!({"ip": ip}))?;
    Ok(Report {
        text: format!("{} is now bound to {} (was {})", updated.username, updated.bound_ip, user.bound_ip),
        json: json!({"user": updated, "previous_ip": user.bound_ip}),
    })
}
