#![allow(dead_code)]

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::ConnectInfo;
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{NaiveDate, TimeZone, Utc};
use dlms_api::{router, AppState, ErrorCode, ServerConfig};
use dlms_core::store::Store;
use dlms_core::{
    AppId, Department, DepartmentKind, ManualClock, MemoryBlobStore, NewApplication, NewDepartment, NewUser,
    PasswordConfig, PublishRequest, Registry, Role, UserContext,
};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower::ServiceExt;

pub const PASSWORD: &str = "correct horse";
pub const ADMIN_IP: &str = "10.0.0.1";
pub const ADMIN_PATH: &str = "/_ops";

pub fn ip(s: &str) -> IpAddr {
    s.parse().unwrap()
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

pub fn clerk_ip(i: usize) -> IpAddr {
    ip(&format!("10.0.0.{}", 10 + i))
}

pub fn test_server_config() -> ServerConfig {
    ServerConfig {
        password: PasswordConfig::insecure_fast(),
        secure_cookie: false,
        ..ServerConfig::default()
    }
}

#[derive(Clone)]
pub struct Clerk {
    pub dept: Department,
    pub ctx: UserContext,
    pub username: String,
    pub ip: IpAddr,
}

/// A router over a configured foundation: admin, incoming archive, outgoing
/// and four functional departments, one clerk each.
pub struct Harness {
    pub app: Router,
    pub state: AppState,
    pub clock: ManualClock,
    pub admin: UserContext,
    pub incoming: Department,
    pub outgoing: Department,
    pub functional: Vec<Department>,
    pub clerks: Vec<Clerk>,
}

impl Harness {
    pub fn new() -> Self {
        Self::with_config(test_server_config())
    }

    pub fn with_config(config: ServerConfig) -> Self {
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2009, 9, 1, 8, 0, 0).unwrap());
        let reg = Registry::new(
            Store::in_memory(),
            Arc::new(MemoryBlobStore::new()),
            Arc::new(clock.clone()),
            config.core_config(),
        )
        .unwrap();
        let admin_dept = NewDepartment {
            code: 1,
            name: "Administration".into(),
            kind: DepartmentKind::Admin,
        };
        let root = reg
            .bootstrap_admin(admin_dept, "root", PASSWORD, ip(ADMIN_IP))
            .unwrap()
            .unwrap();
        let admin = reg.impersonate(root.user_id).unwrap();
        let mk = |code, name: &str, kind| {
            reg.create_department(&admin, NewDepartment { code, name: name.into(), kind })
                .unwrap()
        };
        let incoming = mk(10, "ئەرشیفی هاتوو", DepartmentKind::IncomingArchive);
        let outgoing = mk(20, "Outgoing", DepartmentKind::Outgoing);
        let functional: Vec<_> = [(31, "Engineering"), (32, "Finance"), (33, "Personnel"), (34, "Planning")]
            .into_iter()
            .map(|(c, n)| mk(c, n, DepartmentKind::Functional))
            .collect();
        let mut clerks = Vec::new();
        let all: Vec<Department> = [incoming.clone(), outgoing.clone()]
            .into_iter()
            .chain(functional.iter().cloned())
            .collect();
        for (i, dept) in all.into_iter().enumerate() {
            let username = format!("clerk{}", dept.code);
            let acct = reg
                .create_user(
                    &admin,
                    NewUser {
                        username: username.clone(),
                        password: PASSWORD.into(),
                        dept_id: dept.dept_id,
                        bound_ip: clerk_ip(i),
                        role: Role::Clerk,
                    },
                )
                .unwrap();
            let ctx = reg.impersonate(acct.user_id).unwrap();
            clerks.push(Clerk { dept, ctx, username, ip: clerk_ip(i) });
        }
        let state = AppState::new(Arc::new(reg), config);
        Harness {
            app: router(state.clone()),
            state,
            clock,
            admin,
            incoming,
            outgoing,
            functional,
            clerks,
        }
    }

    pub fn reg(&self) -> &Registry {
        &self.state.registry
    }

    pub fn clerk_of(&self, dept: dlms_core::DeptId) -> &Clerk {
        self.clerks.iter().find(|c| c.dept.dept_id == dept).unwrap()
    }

    pub fn inbox(&self) -> &Clerk {
        self.clerk_of(self.incoming.dept_id)
    }

    pub fn outbox(&self) -> &Clerk {
        self.clerk_of(self.outgoing.dept_id)
    }

    pub fn routable(&self) -> Vec<dlms_core::DeptId> {
        [self.incoming.dept_id, self.outgoing.dept_id]
            .into_iter()
            .chain(self.functional.iter().map(|d| d.dept_id))
            .collect()
    }

    /// A session for `username`, opened directly on the registry.
    pub fn token(&self, username: &str, from: IpAddr) -> String {
        self.reg().login(username, PASSWORD, from).unwrap().token
    }

    pub fn admin_token(&self) -> String {
        self.token("root", ip(ADMIN_IP))
    }

    pub fn clerk_token(&self, clerk: &Clerk) -> String {
        self.token(&clerk.username, clerk.ip)
    }

    pub async fn call(&self, req: Req) -> Resp {
        send(&self.app, req).await
    }

    /// The canonical store payload, used to detect any mutation.
    pub fn payload(&self) -> Vec<u8> {
        self.reg().export_payload().unwrap()
    }

    /// Registers `n` random applications, routes some and publishes a few.
    pub fn populate(&self, n: u32, seed: u64) {
        populate(self.reg(), self, n, seed)
    }
}

pub fn populate(reg: &Registry, h: &Harness, n: u32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depts = h.routable();
    let codes: Vec<u32> = h.functional.iter().map(|d| d.code).collect();
    let publish = PublishRequest {
        date_of_signature: date(2009, 9, 9),
        publish_date: date(2009, 12, 7),
        office_goto: "office".into(),
    };
    for i in 0..n {
        let year = rng.gen_range(2006..=2010);
        let subject = format!("{} {}", WORDS.choose(&mut rng).unwrap(), WORDS.choose(&mut rng).unwrap());
        let draft = NewApplication {
            year,
            incoming_number: i + 1,
            type_code: *codes.choose(&mut rng).unwrap(),
            subject,
            person_name: WORDS.choose(&mut rng).unwrap().to_string(),
            office_of_origin: OFFICES.choose(&mut rng).unwrap().to_string(),
            incoming_date: Some(date(year, rng.gen_range(1..=12), rng.gen_range(1..=28))),
            ..Default::default()
        };
        let app = reg.register_application(draft, &h.inbox().ctx).unwrap();
        let mut here = h.incoming.dept_id;
        for _ in 0..rng.gen_range(0..4) {
            let to = *depts.choose(&mut rng).unwrap();
            if to != here {
                reg.redirect_application(app.app_id, to, &h.clerk_of(here).ctx, "")
                    .unwrap();
                here = to;
            }
        }
        if here == h.outgoing.dept_id && rng.gen_bool(0.7) {
            reg.publish_application(app.app_id, &publish, &h.outbox().ctx)
                .unwrap();
        }
    }
}

pub const WORDS: &[&str] = &[
    "support",
    "request",
    "transfer",
    "salary",
    "بەڕێوەبەرایەتی",
    "داواکاری",
    "گواستنەوە",
    "café",
    "cafe\u{301}",
    "dina yousif",
    "هاوڕێ",
    "résumé",
];

pub const OFFICES: &[&str] = &[
    "engenering collage",
    "college of science",
    "کۆلێژی ئەندازیاری",
    "presidency office",
    "finance department",
];

pub fn fig11_draft() -> NewApplication {
    NewApplication {
        year: 2009,
        incoming_number: 365,
        type_code: 31,
        subject: "support".into(),
        person_name: "dina yousif".into(),
        office_of_origin: "engenering collage".into(),
        incoming_date: Some(date(2009, 9, 1)),
        ..Default::default()
    }
}

pub fn fig11_publish() -> PublishRequest {
    PublishRequest {
        date_of_signature: date(2009, 9, 9),
        publish_date: date(2009, 12, 7),
        office_goto: "engenering collage".into(),
    }
}

/// A request under construction. Cloneable so the same call can be replayed
/// from several addresses.
#[derive(Debug, Clone)]
pub struct Req {
    pub method: Method,
    pub path: String,
    pub from: IpAddr,
    pub token: Option<String>,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

impl Req {
    pub fn new(method: Method, path: impl Into<String>) -> Self {
        Req {
            method,
            path: path.into(),
            from: IpAddr::V4(Ipv4Addr::LOCALHOST),
            token: None,
            headers: Vec::new(),
            body: Bytes::new(),
        }
    }

    pub fn get(path: impl Into<String>) -> Self {
        Self::new(Method::GET, path)
    }

    pub fn post(path: impl Into<String>) -> Self {
        Self::new(Method::POST, path)
    }

    pub fn from(mut self, ip: IpAddr) -> Self {
        self.from = ip;
        self
    }

    pub fn token(mut self, token: &str) -> Self {
        self.token = Some(token.to_owned());
        self
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_owned(), value.to_owned()));
        self
    }

    pub fn json(self, value: &impl Serialize) -> Self {
        let mut r = self.header("content-type", "application/json");
        r.body = serde_json::to_vec(value).unwrap().into();
        r
    }

    pub fn bytes(self, content_type: &str, body: impl Into<Bytes>) -> Self {
        let mut r = self.header("content-type", content_type);
        r.body = body.into();
        r
    }

    pub fn build(&self) -> Request<Body> {
        let mut b = Request::builder().method(self.method.clone()).uri(&self.path);
        if let Some(t) = &self.token {
            b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        for (k, v) in &self.headers {
            b = b.header(k.as_str(), v.as_str());
        }
        let mut req = b.body(Body::from(self.body.clone())).unwrap();
        req.extensions_mut()
            .insert(ConnectInfo(SocketAddr::new(self.from, 50_000)));
        req
    }
}

#[derive(Debug)]
pub struct Resp {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl Resp {
    pub fn json<T: DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn value(&self) -> serde_json::Value {
        self.json()
    }

    /// The `code` of an error body, if this is one.
    pub fn code(&self) -> Option<ErrorCode> {
        let v: serde_json::Value = serde_json::from_slice(&self.body).ok()?;
        serde_json::from_value(v.get("code")?.clone()).ok()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).and_then(|v| v.to_str().ok())
    }
}

pub async fn send(app: &Router, req: Req) -> Resp {
    let res = app.clone().oneshot(req.build()).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes();
    Resp { status, headers, body }
}

/// A random source address that is not `bound` in any spelling.
pub fn foreign_ip(rng: &mut impl Rng, bound: IpAddr) -> IpAddr {
    loop {
        let candidate = match rng.gen_range(0..3) {
            0 => IpAddr::V4(Ipv4Addr::from(rng.gen::<u32>())),
            1 => IpAddr::V6(Ipv6Addr::from(rng.gen::<u128>())),
            _ => IpAddr::V6(Ipv4Addr::from(rng.gen::<u32>()).to_ipv6_mapped()),
        };
        if candidate.to_canonical() != bound.to_canonical() {
            return candidate;
        }
    }
}

/// Every route that requires a session, as `METHOD template`.
pub fn authenticated_routes() -> BTreeSet<String> {
    [
        "POST /api/logout",
        "GET /api/me",
        "POST /api/applications",
        "GET /api/applications",
        "GET /api/applications/{id}",
        "PATCH /api/applications/{id}",
        "POST /api/applications/{id}/redirect",
        "POST /api/applications/{id}/publish",
        "GET /api/applications/{id}/events",
        "GET /api/applications/{id}/attachment",
        "PUT /api/applications/{id}/attachment",
        "GET /api/departments",
        "GET /api/departments/{id}/directed",
        "GET /api/published",
        "GET /api/news",
        "POST /api/news",
        "DELETE /api/news/{id}",
        "GET /_ops/users",
        "POST /_ops/users",
        "POST /_ops/users/{id}/rebind-ip",
        "GET /_ops/departments",
        "POST /_ops/departments",
        "GET /_ops/backup",
        "POST /_ops/restore",
        "GET /_ops/attachments/audit",
        "POST /_ops/attachments/sweep",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Default)]
pub struct AclReport {
    pub attempts: usize,
    pub denied: usize,
    /// Foreign-address requests that got anything but `ACCESS_DENIED_IP`.
    pub leaks: Vec<String>,
    /// Routes whose foreign-address attempts changed the store.
    pub mutated: Vec<String>,
    /// Valid requests from the bound address that failed.
    pub false_denials: Vec<String>,
    pub covered: BTreeSet<String>,
}

impl AclReport {
    pub fn clean(&self) -> bool {
        self.attempts > 0
            && self.denied == self.attempts
            && self.leaks.is_empty()
            && self.mutated.is_empty()
            && self.false_denials.is_empty()
    }
}

struct Sweep<'a> {
    h: &'a Harness,
    rng: ChaCha8Rng,
    per_route: usize,
    report: AclReport,
}

impl Sweep<'_> {
    /// Replays `req` from `per_route` foreign addresses, then once from its
    /// own address, which must succeed.
    async fn probe(&mut self, route: &str, req: Req) -> Resp {
        let before = self.h.payload();
        for _ in 0..self.per_route {
            let from = foreign_ip(&mut self.rng, req.from);
            let res = self.h.call(req.clone().from(from)).await;
            self.report.attempts += 1;
            if res.status == StatusCode::FORBIDDEN && res.code() == Some(ErrorCode::AccessDeniedIp) {
                self.report.denied += 1;
            } else {
                self.report
                    .leaks
                    .push(format!("{route} from {from}: {} {:?}", res.status, res.code()));
            }
        }
        if self.h.payload() != before {
            self.report.mutated.push(route.to_owned());
        }
        let res = self.h.call(req).await;
        if !res.status.is_success() {
            self.report.false_denials.push(format!(
                "{route}: {} {}",
                res.status,
                String::from_utf8_lossy(&res.body)
            ));
        }
        self.report.covered.insert(route.to_owned());
        res
    }
}

/// Drives every authenticated route plus login through a full workflow,
/// probing each step from `per_route` random foreign addresses first.
pub async fn acl_sweep(h: &Harness, per_route: usize, seed: u64) -> AclReport {
    let mut s = Sweep {
        h,
        rng: ChaCha8Rng::seed_from_u64(seed),
        per_route,
        report: AclReport::default(),
    };
    let inbox = h.inbox().clone();
    let outbox = h.outbox().clone();
    let admin_ip = ip(ADMIN_IP);

    let login = Req::post("/api/login").from(inbox.ip).json(&serde_json::json!({
        "username": inbox.username,
        "password": PASSWORD,
    }));
    let t_in: String = s.probe("POST /api/login", login).await.value()["token"]
        .as_str()
        .unwrap_or_default()
        .to_owned();
    let t_out = h.clerk_token(&outbox);
    let t_admin = h.admin_token();
    let as_in = |r: Req| r.from(inbox.ip).token(&t_in);
    let as_out = |r: Req| r.from(outbox.ip).token(&t_out);
    let as_admin = |r: Req| r.from(admin_ip).token(&t_admin);

    s.probe("GET /api/me", as_in(Req::get("/api/me"))).await;
    let created = s
        .probe(
            "POST /api/applications",
            as_in(Req::post("/api/applications").json(&fig11_draft())),
        )
        .await;
    let id: AppId = created.value()["app_id"].as_u64().map(AppId).unwrap_or(AppId(0));
    let app = format!("/api/applications/{}", id.0);
    s.probe("GET /api/applications", as_in(Req::get("/api/applications?year=2009"))).await;
    s.probe("GET /api/applications/{id}", as_in(Req::get(&app))).await;
    s.probe(
        "PATCH /api/applications/{id}",
        as_in(Req::new(Method::PATCH, &app).json(&serde_json::json!({"notes": "تێبینی"}))),
    )
    .await;
    s.probe(
        "PUT /api/applications/{id}/attachment",
        as_in(
            Req::new(Method::PUT, format!("{app}/attachment?filename=scan.pdf"))
                .bytes("application/pdf", &b"%PDF-1.4 scan"[..]),
        ),
    )
    .await;
    s.probe("GET /api/applications/{id}/attachment", as_in(Req::get(format!("{app}/attachment")))).await;
    s.probe(
        "GET /api/departments/{id}/directed",
        as_in(Req::get(format!("/api/departments/{}/directed", inbox.dept.dept_id.0))),
    )
    .await;
    s.probe("GET /api/departments", as_in(Req::get("/api/departments"))).await;
    s.probe(
        "POST /api/applications/{id}/redirect",
        as_in(Req::post(format!("{app}/redirect")).json(&serde_json::json!({
            "to_dept": outbox.dept.dept_id,
            "note": "بۆ ناردن",
        }))),
    )
    .await;
    s.probe(
        "POST /api/applications/{id}/publish",
        as_out(Req::post(format!("{app}/publish")).json(&fig11_publish())),
    )
    .await;
    s.probe("GET /api/applications/{id}/events", as_out(Req::get(format!("{app}/events")))).await;
    s.probe("GET /api/published", as_out(Req::get("/api/published"))).await;
    s.probe("GET /api/news", as_out(Req::get("/api/news"))).await;
    let news = s
        .probe(
            "POST /api/news",
            as_admin(Req::post("/api/news").json(&serde_json::json!({"title": "ئاگاداری", "body": "text"}))),
        )
        .await;
    let news_id = news.value()["news_id"].as_u64().unwrap_or(0);
    s.probe(
        "DELETE /api/news/{id}",
        as_admin(Req::new(Method::DELETE, format!("/api/news/{news_id}"))),
    )
    .await;

    let ops = ADMIN_PATH;
    s.probe("GET /_ops/users", as_admin(Req::get(format!("{ops}/users")))).await;
    let user = s
        .probe(
            "POST /_ops/users",
            as_admin(Req::post(format!("{ops}/users")).json(&serde_json::json!({
                "username": "newclerk",
                "password": PASSWORD,
                "dept_id": h.functional[0].dept_id,
                "bound_ip": "10.0.1.1",
                "role": "clerk",
            }))),
        )
        .await;
    let user_id = user.value()["user_id"].as_u64().unwrap_or(0);
    s.probe(
        "POST /_ops/users/{id}/rebind-ip",
        as_admin(Req::post(format!("{ops}/users/{user_id}/rebind-ip")).json(&serde_json::json!({"ip": "10.0.1.2"}))),
    )
    .await;
    s.probe("GET /_ops/departments", as_admin(Req::get(format!("{ops}/departments")))).await;
    s.probe(
        "POST /_ops/departments",
        as_admin(Req::post(format!("{ops}/departments")).json(&serde_json::json!({
            "code": 35,
            "name": "پلاندانان",
            "kind": "functional",
        }))),
    )
    .await;
    s.probe("GET /_ops/attachments/audit", as_admin(Req::get(format!("{ops}/attachments/audit")))).await;
    s.probe("POST /_ops/attachments/sweep", as_admin(Req::post(format!("{ops}/attachments/sweep")))).await;
    let backup = s
        .probe("GET /_ops/backup", as_admin(Req::get(format!("{ops}/backup?mode=zipped"))))
        .await;
    s.probe("POST /api/logout", as_in(Req::post("/api/logout"))).await;
    s.probe(
        "POST /_ops/restore",
        as_admin(Req::post(format!("{ops}/restore")).bytes("application/octet-stream", backup.body)),
    )
    .await;
    s.report
}
