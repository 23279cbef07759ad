#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use dlms_api::{open_registry, serve, AppState, BootstrapConfig, ServerConfig};
use dlms_core::{PasswordConfig, Registry};

pub const ADMIN_PASSWORD: &str = "Zebra-Secret-991";

/// A live service on an ephemeral loopback port.
pub struct Server {
    pub addr: SocketAddr,
    pub registry: Arc<Registry>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    rt: tokio::runtime::Runtime,
}

impl Server {
    pub fn start() -> Self {
        let config = ServerConfig {
            password: PasswordConfig::insecure_fast(),
            bootstrap: Some(BootstrapConfig {
                username: "root".into(),
                bound_ip: "127.0.0.1".parse().unwrap(),
                dept_code: 1,
                dept_name: "Administration".into(),
                password_env: "UNUSED".into(),
            }),
            ..ServerConfig::default()
        };
        let registry = Arc::new(open_registry(&config, Some(ADMIN_PASSWORD)).unwrap());
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let state = AppState::new(registry.clone(), config);
        rt.spawn(serve(listener, state, async {
            let _ = stopped.await;
        }));
        Server { addr, registry, stop: Some(stop), rt }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Runs the binary against this server as `root`.
    pub fn admin(&self, args: &[&str]) -> Run {
        self.admin_with(args, &[])
    }

    pub fn admin_with(&self, args: &[&str], env: &[(&str, &str)]) -> Run {
        let mut all = vec![("DLMS_ADMIN_USER", "root"), ("DLMS_ADMIN_PASSWORD", ADMIN_PASSWORD)];
        all.extend_from_slice(env);
        cli(&self.url(), args, &all)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

#[derive(Debug)]
pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {self:?}"))
    }

    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "{self:?}");
        self
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.stdout.contains(needle) || self.stderr.contains(needle)
    }
}

/// Runs the binary with a clean credential environment.
pub fn cli(api: &str, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dlms-admin"));
    for var in [
        "DLMS_API",
        "DLMS_ADMIN_PATH",
        "DLMS_LOCALE",
        "DLMS_ADMIN_CONFIG",
        "DLMS_TOKEN",
        "DLMS_ADMIN_USER",
        "DLMS_ADMIN_PASSWORD",
        "DLMS_SEED_PASSWORD",
        "DLMS_NEW_USER_PASSWORD",
    ] {
        cmd.env_remove(var);
    }
    cmd.arg("--api").arg(api).args(args).envs(env.iter().copied());
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

pub const FOUNDATION: &str = r#"
[[department]]
code = 1
name = "Administration"
kind = "admin"

[[department]]
code = 10
name = "ئەرشیفی هاتوو"
kind = "incoming_archive"

[[department]]
code = 20
name = "Outgoing"
kind = "outgoing"

[[department]]
code = 31
name = "Engineering"
kind = "functional"

[[department]]
code = 32
name = "Finance"
kind = "functional"

[[department]]
code = 33
name = "Personnel"
kind = "functional"

[[department]]
code = 34
name = "Planning"
kind = "functional"

[[user]]
username = "inbox1"
department = 10
bound_ip = "10.0.0.5"

[[user]]
username = "outbox1"
department = 20
bound_ip = "10.0.0.6"
password_env = "OUTBOX_PW"
"#;

pub fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

pub const SEED_ENV: &[(&str, &str)] = &[("DLMS_SEED_PASSWORD", "seed-pw-1"), ("OUTBOX_PW", "seed-pw-2")];
