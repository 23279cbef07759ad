use std::time::Duration;

use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use reqwest::header::{ACCEPT_LANGUAGE, AUTHORIZATION, CONTENT_TYPE};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::config::{CliConfig, Credentials, Secret};
use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
struct ErrorBody {
    code: String,
    #[serde(default)]
    message: String,
}

#[derive(Deserialize)]
struct LoginReply {
    token: String,
}

/// An authenticated connection to the service.
pub struct Client {
    http: Http,
    base: Url,
    admin_path: String,
    locale: String,
    token: Secret,
    /// Whether this client opened the session and should close it.
    owns_session: bool,
}

fn transport(url: &Url, err: reqwest::Error) -> CliError {
    CliError::Api {
        status: 0,
        code: "UNREACHABLE".into(),
        message: format!("cannot reach {}: {}", url.origin().ascii_serialization(), err.without_url()),
    }
}

fn check(url: &Url, res: std::result::Result<Response, reqwest::Error>) -> Result<Response> {
    let res = res.map_err(|e| transport(url, e))?;
    if res.status().is_success() {
        return Ok(res);
    }
    let status = res.status().as_u16();
    let body = res.bytes().unwrap_or_default();
    let (code, message) = match serde_json::from_slice::<ErrorBody>(&body) {
        Ok(e) => (e.code, e.message),
        Err(_) => ("HTTP_ERROR".into(), String::from_utf8_lossy(&body).into_owned()),
    };
    if code == "CHECKSUM_MISMATCH" {
        return Err(CliError::Checksum(format!("{message} [{code}]")));
    }
    Err(CliError::Api { status, code, message })
}

impl Client {
    /// Connects and authenticates, logging in when only a username and
    /// password were supplied.
    pub fn connect(cfg: &CliConfig) -> Result<Self> {
        let http = Http::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| CliError::Usage(format!("HTTP client: {e}")))?;
        let mut client = Client {
            http,
            base: cfg.api.clone(),
            admin_path: cfg.admin_path.clone(),
            locale: cfg.locale.clone(),
            token: Secret::new(""),
            owns_session: false,
        };
        match &cfg.credentials {
            None => {
                return Err(CliError::Usage(format!(
                    "no credentials: set {} or both {} and {}",
                    crate::config::ENV_TOKEN,
                    crate::config::ENV_USER,
                    crate::config::ENV_PASSWORD
                )))
            }
            Some(Credentials::Token(t)) => client.token = t.clone(),
            Some(Credentials::Login { username, password }) => {
                let body = serde_json::json!({"username": username, "password": password.expose()});
                let url = client.url("/api/login");
                let res = check(&url, client.request(reqwest::Method::POST, url.clone()).json(&body).send())?;
                let reply: LoginReply = res.json().map_err(|e| transport(&url, e))?;
                client.token = Secret::new(reply.token);
                client.owns_session = true;
            }
        }
        Ok(client)
    }

    pub fn url(&self, path: &str) -> Url {
        let mut url = self.base.clone();
        let base_path = url.path().trim_end_matches('/').to_owned();
        let (path, query) = path.split_once('?').unwrap_or((path, ""));
        url.set_path(&format!("{base_path}{path}"));
        url.set_query((!query.is_empty()).then_some(query));
        url
    }

    pub fn admin(&self, path: &str) -> String {
        format!("{}{path}", self.admin_path)
    }

    fn request(&self, method: reqwest::Method, url: Url) -> RequestBuilder {
        let rb = self.http.request(method, url).header(ACCEPT_LANGUAGE, &self.locale);
        if self.token.expose().is_empty() {
            rb
        } else {
            rb.header(AUTHORIZATION, format!("Bearer {}", self.token.expose()))
        }
    }

    fn send(&self, method: reqwest::Method, path: &str, f: impl FnOnce(RequestBuilder) -> RequestBuilder) -> Result<Response> {
        let url = self.url(path);
        check(&url, f(self.request(method, url.clone())).send())
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = self.url(path);
        self.send(reqwest::Method::GET, path, |r| r)?
            .json()
            .map_err(|e| transport(&url, e))
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = self.url(path);
        self.send(reqwest::Method::POST, path, |r| r.json(body))?
            .json()
            .map_err(|e| transport(&url, e))
    }

    /// Raw body and the value of `header`, if present.
    pub fn get_bytes(&self, path: &str, header: &str) -> Result<(Vec<u8>, Option<String>)> {
        let url = self.url(path);
        let res = self.send(reqwest::Method::GET, path, |r| r)?;
        let value = res
            .headers()
            .get(header)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let bytes = res.bytes().map_err(|e| transport(&url, e))?;
        Ok((bytes.to_vec(), value))
    }

    pub fn post_bytes<T: DeserializeOwned>(&self, path: &str, body: Vec<u8>) -> Result<T> {
        let url = self.url(path);
        self.send(reqwest::Method::POST, path, |r| {
            r.header(CONTENT_TYPE, "application/octet-stream").body(body)
        })?
        .json()
        .map_err(|e| transport(&url, e))
    }

    /// Forgets the session without logging out, e.g. after a restore ended
    /// it server-side.
    pub fn abandon_session(&mut self) {
        self.owns_session = false;
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        if self.owns_session {
            let url = self.url("/api/logout");
            let _ = self.request(reqwest::Method::POST, url).send();
        }
    }
}
