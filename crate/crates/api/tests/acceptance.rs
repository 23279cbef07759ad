//! Release criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use common::*;
use dlms_core::{
    AppStatus, Application, ApplicationChanges, BackupArchive, BackupMode, DepartmentKind, DeptId, EventKind,
    FilterQuery, ManualClock, MemoryBlobStore, NewApplication, NewDepartment, NewUser, PasswordConfig, Registry,
    Role, RoutingEvent, UserContext,
};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::runtime::Runtime;
use unicode_normalization::UnicodeNormalization;

type Outcome = Result<String, String>;
type Check = fn(&Runtime) -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < limit.as_secs_f64(), || format!("took {secs:.2}s, limit {}s", limit.as_secs()))?;
    Ok(secs)
}

fn inflate(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    flate2::read::DeflateDecoder::new(raw).read_to_end(&mut out).unwrap();
    out
}

fn backup_compression(_: &Runtime) -> Outcome {
    let start = Instant::now();
    let h = Harness::new();
    h.populate(1_000, 2009);
    let none = h.reg().export_backup(BackupMode::None, &h.admin).map_err(|e| e.to_string())?;
    let zipped = h.reg().export_backup(BackupMode::Zipped, &h.admin).map_err(|e| e.to_string())?;
    ensure(zipped.to_bytes()[..4] == *b"DLMS", || "bad magic".into())?;
    ensure(inflate(zipped.payload()) == none.payload(), || "inflate(ZIPPED) differs from NONE".into())?;
    let ratio = zipped.payload().len() as f64 / none.payload().len() as f64;
    ensure(ratio <= 0.15, || format!("ratio {ratio:.4} > 0.15"))?;
    let secs = within(start, Duration::from_secs(10))?;
    Ok(format!(
        "NONE {} B, ZIPPED {} B, ratio {:.2}%, {secs:.2}s",
        none.payload().len(),
        zipped.payload().len(),
        ratio * 100.0
    ))
}

/// Random store: up to 1,000 routed records and some attachments.
fn random_store(seed: u64) -> Harness {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Harness::new();
    let n = rng.gen_range(1..=1_000);
    h.populate(n, seed);
    let apps: Vec<Application> = h.reg().store().read(|t| t.applications().cloned().collect());
    for app in apps.iter().filter(|a| a.status != AppStatus::Published) {
        if rng.gen_bool(0.05) {
            let size = rng.gen_range(0..32 * 1024);
            let bytes: Vec<u8> = (0..size).map(|_| rng.gen()).collect();
            let clerk = h.clerk_of(app.current_location);
            h.reg()
                .upload_attachment(app.app_id, "مۆڵەت.pdf", "application/pdf", &bytes, &clerk.ctx)
                .unwrap();
        }
    }
    h
}

fn round_trip_identity(_: &Runtime) -> Outcome {
    let start = Instant::now();
    let mut rows = 0;
    let mut blobs = 0;
    for seed in 0..50u64 {
        let h = random_store(seed);
        rows += h.reg().store().read(|t| t.applications().count());
        blobs += h.reg().store().read(|t| t.attachments().count());
        let zipped = h.reg().export_backup(BackupMode::Zipped, &h.admin).unwrap().to_bytes();
        let none = h.reg().export_backup(BackupMode::None, &h.admin).unwrap().to_bytes();

        let wiped = Harness::new();
        wiped
            .reg()
            .import_backup_bytes(&zipped, &wiped.admin)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let admin = wiped.reg().impersonate(h.admin.user_id()).unwrap();
        let again_z = wiped.reg().export_backup(BackupMode::Zipped, &admin).unwrap().to_bytes();
        let again_n = wiped.reg().export_backup(BackupMode::None, &admin).unwrap().to_bytes();
        ensure(again_z == zipped, || format!("seed {seed}: ZIPPED archives differ"))?;
        ensure(again_n == none, || format!("seed {seed}: NONE archives differ"))?;
    }
    let secs = within(start, Duration::from_secs(60))?;
    Ok(format!("50 stores, {rows} rows, {blobs} attachments, {secs:.2}s"))
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

fn oracle(apps: &[Application], q: &FilterQuery) -> (Vec<Application>, u64) {
    let mut hits: Vec<Application> = apps
        .iter()
        .filter(|a| {
            let checks = [
                q.year.map(|y| a.year == y),
                q.type_code.map(|c| a.type_code == c),
                q.incoming_number.map(|n| a.incoming_number == n),
                q.directed_to.map(|d| a.current_location == d),
                q.date_from.map(|d| a.incoming_date >= d),
                q.date_to.map(|d| a.incoming_date <= d),
                q.subject_contains.as_ref().map(|s| nfc(&a.subject).contains(&nfc(s))),
                q.person_contains.as_ref().map(|s| nfc(&a.person_name).contains(&nfc(s))),
            ];
            checks.into_iter().flatten().all(|ok| ok)
        })
        .cloned()
        .collect();
    hits.sort_by(|a, b| {
        (b.year, b.incoming_number, a.app_id).cmp(&(a.year, a.incoming_number, b.app_id))
    });
    let total = hits.len() as u64;
    let size = q.page_size.unwrap_or(20) as usize;
    (hits.into_iter().skip(q.page as usize * size).take(size).collect(), total)
}

const SNIPPETS: &[&str] = &["sup", "قاری", "café", "e\u{301}", "وە", "trans", "x", "dina", "ڕێ"];

fn random_query(rng: &mut impl Rng, depts: &[DeptId]) -> FilterQuery {
    let mut maybe = |p: f64| rng.gen_bool(p);
    let (y, t, s, pe, n, d, df, dt, ps) = (
        maybe(0.5),
        maybe(0.4),
        maybe(0.4),
        maybe(0.3),
        maybe(0.1),
        maybe(0.3),
        maybe(0.3),
        maybe(0.3),
        maybe(0.5),
    );
    let day = |rng: &mut dyn rand::RngCore| date(rng.gen_range(2006..=2010), rng.gen_range(1..=12), 1);
    let mut date_from = df.then(|| day(rng));
    let mut date_to = dt.then(|| day(rng));
    if let (Some(a), Some(b)) = (date_from, date_to) {
        if a > b {
            (date_from, date_to) = (Some(b), Some(a));
        }
    }
    FilterQuery {
        year: y.then(|| rng.gen_range(2005..=2011)),
        type_code: t.then(|| rng.gen_range(30..=35)),
        subject_contains: s.then(|| SNIPPETS.choose(rng).unwrap().to_string()),
        person_contains: pe.then(|| SNIPPETS.choose(rng).unwrap().to_string()),
        incoming_number: n.then(|| rng.gen_range(1..=520)),
        directed_to: d.then(|| *depts.choose(rng).unwrap()),
        date_from,
        date_to,
        page: rng.gen_range(0..4),
        page_size: ps.then(|| *[1, 7, 20, 200].choose(rng).unwrap()),
    }
}

fn filter_oracle(_: &Runtime) -> Outcome {
    let start = Instant::now();
    let h = Harness::new();
    h.populate(500, 77);
    let apps: Vec<Application> = h.reg().store().read(|t| t.applications().cloned().collect());
    let depts = h.routable();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut mismatches = 0;
    let mut nonempty = 0;
    for _ in 0..100 {
        let q = random_query(&mut rng, &depts);
        let got = h.reg().filter_applications(&q, &h.inbox().ctx).map_err(|e| e.to_string())?;
        let (items, total) = oracle(&apps, &q);
        if got.items != items || got.total_count != total {
            mismatches += 1;
        }
        nonempty += usize::from(total > 0);
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    let secs = within(start, Duration::from_secs(30))?;
    Ok(format!("100 queries x 500 records, 0 mismatches, {nonempty} non-empty, {secs:.2}s"))
}

fn fold(events: &[RoutingEvent]) -> Option<(DeptId, AppStatus)> {
    let mut state = None;
    for e in events {
        state = match (e.kind, state) {
            (EventKind::Registered, None) => Some((e.to_dept?, AppStatus::Registered)),
            (EventKind::Redirected, Some((loc, _))) if e.from_dept == Some(loc) => {
                Some((e.to_dept?, AppStatus::Directed))
            }
            (EventKind::Updated, s @ Some(_)) => s,
            (EventKind::Published, Some((loc, _))) => Some((loc, AppStatus::Published)),
            _ => return None,
        };
    }
    state
}

struct Foundation {
    reg: Registry,
    incoming: DeptId,
    outgoing: DeptId,
    depts: Vec<DeptId>,
    clerks: Vec<(DeptId, UserContext)>,
}

/// A store with a seeded number of functional departments and one clerk
/// per department.
fn foundation(rng: &mut impl Rng) -> Foundation {
    let reg = Registry::new(
        dlms_core::store::Store::in_memory(),
        Arc::new(MemoryBlobStore::new()),
        Arc::new(ManualClock::new(chrono::Utc::now())),
        dlms_core::Config {
            password: PasswordConfig::insecure_fast(),
            ..Default::default()
        },
    )
    .unwrap();
    let admin_dept = NewDepartment { code: 1, name: "Admin".into(), kind: DepartmentKind::Admin };
    let root = reg
        .bootstrap_admin(admin_dept, "root", PASSWORD, ip(ADMIN_IP))
        .unwrap()
        .unwrap();
    let admin = reg.impersonate(root.user_id).unwrap();
    let functional = rng.gen_range(1..=6);
    let mut specs = vec![(10, DepartmentKind::IncomingArchive), (20, DepartmentKind::Outgoing)];
    specs.extend((0..functional).map(|i| (31 + i, DepartmentKind::Functional)));
    let mut depts = Vec::new();
    let mut clerks = Vec::new();
    for (i, (code, kind)) in specs.into_iter().enumerate() {
        let d = reg
            .create_department(&admin, NewDepartment { code, name: format!("بەش {code}"), kind })
            .unwrap();
        let u = reg
            .create_user(
                &admin,
                NewUser {
                    username: format!("c{code}"),
                    password: PASSWORD.into(),
                    dept_id: d.dept_id,
                    bound_ip: clerk_ip(i),
                    role: Role::Clerk,
                },
            )
            .unwrap();
        depts.push(d.dept_id);
        clerks.push((d.dept_id, reg.impersonate(u.user_id).unwrap()));
    }
    Foundation { reg, incoming: depts[0], outgoing: depts[1], depts, clerks }
}

fn replay_soundness(_: &Runtime) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut mismatches = 0;
    let mut ops_total = 0;
    for seq in 0..200u32 {
        let f = foundation(&mut rng);
        let clerk = |d: DeptId| &f.clerks.iter().find(|(x, _)| *x == d).unwrap().1;
        let draft = NewApplication { incoming_number: seq + 1, ..fig11_draft() };
        let app = f.reg.register_application(draft, clerk(f.incoming)).unwrap();
        let mut model = (f.incoming, AppStatus::Registered);
        let len = rng.gen_range(1..=50);
        for _ in 0..len {
            if model.1 == AppStatus::Published {
                break;
            }
            let here = model.0;
            let roll = rng.gen_range(0..10);
            if here == f.outgoing && roll == 0 {
                f.reg.publish_application(app.app_id, &fig11_publish(), clerk(here)).unwrap();
                model.1 = AppStatus::Published;
            } else if roll < 7 {
                let to = **f.depts.iter().filter(|d| **d != here).collect::<Vec<_>>().choose(&mut rng).unwrap();
                f.reg.redirect_application(app.app_id, to, clerk(here), "").unwrap();
                model = (to, AppStatus::Directed);
            } else {
                let changes = ApplicationChanges {
                    notes: Some(WORDS.choose(&mut rng).unwrap().to_string()),
                    ..Default::default()
                };
                f.reg.update_application(app.app_id, &changes, clerk(here)).unwrap();
            }
            ops_total += 1;
            let trail = f.reg.track_application(app.app_id).unwrap();
            let stored = f.reg.get_application(app.app_id).unwrap();
            let folded = fold(&trail);
            if folded != Some(model) || (stored.current_location, stored.status) != model {
                mismatches += 1;
            }
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok(format!("200 sequences, {ops_total} operations, 0 mismatches, {:.2}s", start.elapsed().as_secs_f64()))
}

fn acl_totality(rt: &Runtime) -> Outcome {
    let h = Harness::new();
    h.populate(20, 4);
    let report = rt.block_on(acl_sweep(&h, 100, 0xAC1));
    let mut wanted = authenticated_routes();
    wanted.insert("POST /api/login".into());
    let missing: Vec<_> = wanted.difference(&report.covered).collect();
    ensure(missing.is_empty(), || format!("routes not exercised: {missing:?}"))?;
    ensure(report.leaks.is_empty(), || format!("{} leaks, first: {}", report.leaks.len(), report.leaks[0]))?;
    ensure(report.mutated.is_empty(), || format!("store changed by denied calls on {:?}", report.mutated))?;
    ensure(report.false_denials.is_empty(), || format!("false denials: {:?}", report.false_denials))?;
    ensure(report.clean(), || "no attempts".into())?;
    Ok(format!(
        "{} routes x 100 foreign addresses: {}/{} denied, 0 false denials",
        report.covered.len(),
        report.denied,
        report.attempts
    ))
}

const KURDISH: &[(&str, &str)] = &[
    ("داواکاری گواستنەوە بۆ بەشی ئەندازیاری", "هاوڕێ عەبدوڵڵا"),
    ("بەڕێوەبەرایەتی گشتیی خوێندن", "ژیلا ئەحمەد"),
    ("مۆڵەتی\u{200c}پشوو", "شێرکۆ بێکەس"),
    ("پێدانی پلەی زانستی ١٢٣", "ڤیان ڕەسوڵ"),
    ("نووسراوی ژمارە ٤٥/٢٠٠٩ - support", "dina yousif"),
    ("cafe\u{301} بۆ کارمەندان", "résumé ئاراس"),
];

fn unicode_fidelity(rt: &Runtime) -> Outcome {
    let h = Harness::new();
    let inbox = h.inbox().clone();
    let t = h.clerk_token(&inbox);
    let admin_ip = ip(ADMIN_IP);
    rt.block_on(async {
        let mut ids = Vec::new();
        for (i, (subject, person)) in KURDISH.iter().enumerate() {
            let draft = NewApplication {
                incoming_number: 900 + i as u32,
                subject: subject.to_string(),
                person_name: person.to_string(),
                notes: format!("{subject} / {person}"),
                ..fig11_draft()
            };
            let res = h.call(Req::post("/api/applications").from(inbox.ip).token(&t).json(&draft)).await;
            ensure(res.status == StatusCode::CREATED, || format!("insert {i}: {}", res.status))?;
            ensure(
                res.header("content-type") == Some("application/json; charset=utf-8"),
                || "missing charset".into(),
            )?;
            ensure(
                res.body.windows(subject.len()).any(|w| w == subject.as_bytes()),
                || format!("insert {i}: subject not sent as raw UTF-8"),
            )?;
            ids.push(res.json::<Application>().app_id);
        }
        for (i, (subject, person)) in KURDISH.iter().enumerate() {
            let q = format!(
                "/api/applications?subject_contains={}&page_size=200",
                utf8_percent_encode(subject, NON_ALPHANUMERIC)
            );
            let page: dlms_core::Page<Application> =
                h.call(Req::get(q).from(inbox.ip).token(&t)).await.json();
            let hit = page.items.iter().find(|a| a.app_id == ids[i]);
            ensure(
                hit.is_some_and(|a| a.subject.as_bytes() == subject.as_bytes() && a.person_name.as_bytes() == person.as_bytes()),
                || format!("filter {i}: record missing or altered"),
            )?;
        }
        let ta = h.admin_token();
        let backup = h.call(Req::get("/_ops/backup?mode=zipped").from(admin_ip).token(&ta)).await;
        ensure(backup.status == StatusCode::OK, || format!("export: {}", backup.status))?;
        let fresh = Harness::new();
        let tf = fresh.admin_token();
        let res = fresh
            .call(
                Req::post("/_ops/restore")
                    .from(admin_ip)
                    .token(&tf)
                    .bytes("application/octet-stream", backup.body.clone()),
            )
            .await;
        ensure(res.status == StatusCode::OK, || format!("import: {}", res.status))?;
        let tc = fresh.clerk_token(&inbox);
        for (i, (subject, person)) in KURDISH.iter().enumerate() {
            let got: Application = fresh
                .call(Req::get(format!("/api/applications/{}", ids[i].0)).from(inbox.ip).token(&tc))
                .await
                .json();
            ensure(
                got.subject.as_bytes() == subject.as_bytes()
                    && got.person_name.as_bytes() == person.as_bytes()
                    && got.notes.as_bytes() == format!("{subject} / {person}").as_bytes(),
                || format!("restored {i}: bytes differ"),
            )?;
        }
        let archive = BackupArchive::from_bytes(&backup.body).map_err(|e| e.to_string())?;
        let plain = archive.canonical_payload();
        for (subject, _) in KURDISH {
            ensure(
                plain.windows(subject.len()).any(|w| w == subject.as_bytes()),
                || "archive payload lacks the exact subject bytes".into(),
            )?;
        }
        Ok(format!("{} Kurdish fixtures byte-identical through insert, filter, export, import", KURDISH.len()))
    })
}

fn throughput(rt: &Runtime) -> Outcome {
    let h = Arc::new(Harness::new());
    h.populate(1_000, 300);
    let inbox = h.inbox().clone();
    let token = h.clerk_token(&inbox);
    let depts = h.routable();
    let done = Arc::new(AtomicU64::new(0));
    let failed = Arc::new(AtomicBool::new(false));
    let window = Duration::from_secs(10);
    let start = Instant::now();
    rt.block_on(async {
        let workers: Vec<_> = (0..8u64)
            .map(|w| {
                let (h, token, depts, done, failed) =
                    (h.clone(), token.clone(), depts.clone(), done.clone(), failed.clone());
                tokio::spawn(async move {
                    let mut rng = ChaCha8Rng::seed_from_u64(w);
                    while start.elapsed() < window {
                        let q = random_query(&mut rng, &depts);
                        let qs = serde_urlencoded::to_string(&q).unwrap();
                        let res = h
                            .call(Req::get(format!("/api/applications?{qs}")).from(inbox.ip).token(&token))
                            .await;
                        if res.status != StatusCode::OK {
                            failed.store(true, Ordering::Relaxed);
                        }
                        done.fetch_add(1, Ordering::Relaxed);
                    }
                })
            })
            .collect();
        for w in workers {
            w.await.unwrap();
        }
    });
    let secs = start.elapsed().as_secs_f64();
    let n = done.load(Ordering::Relaxed);
    let rate = n as f64 / secs;
    ensure(!failed.load(Ordering::Relaxed), || "a filter request failed".into())?;
    ensure(rate >= 300.0, || format!("{rate:.0} queries/s < 300"))?;
    Ok(format!("{n} queries in {secs:.1}s = {rate:.0}/s over 1000 rows"))
}

fn fig11_reproduction(rt: &Runtime) -> Outcome {
    let h = Harness::new();
    let (inbox, outbox) = (h.inbox().clone(), h.outbox().clone());
    let eng = h.clerk_of(h.functional[0].dept_id).clone();
    let (ti, te, to) = (h.clerk_token(&inbox), h.clerk_token(&eng), h.clerk_token(&outbox));
    rt.block_on(async {
        let app: Application = h
            .call(Req::post("/api/applications").from(inbox.ip).token(&ti).json(&fig11_draft()))
            .await
            .json();
        let base = format!("/api/applications/{}", app.app_id.0);
        for (from, token, target) in [(inbox.ip, &ti, eng.dept.dept_id), (eng.ip, &te, outbox.dept.dept_id)] {
            let res = h
                .call(
                    Req::post(format!("{base}/redirect"))
                        .from(from)
                        .token(token)
                        .json(&serde_json::json!({"to_dept": target})),
                )
                .await;
            ensure(res.status == StatusCode::CREATED, || format!("redirect: {}", res.status))?;
        }
        let res = h
            .call(Req::new(Method::POST, format!("{base}/publish")).from(outbox.ip).token(&to).json(&fig11_publish()))
            .await;
        ensure(res.status == StatusCode::CREATED, || format!("publish: {}", res.status))?;
        let page: dlms_core::Page<dlms_core::PublishRow> =
            h.call(Req::get("/api/published").from(outbox.ip).token(&to)).await.json();
        ensure(page.items.len() == 1, || format!("{} published rows", page.items.len()))?;
        let r = &page.items[0];
        let got = (
            r.year,
            r.type_code,
            r.subject.as_str(),
            r.person_name.as_str(),
            r.date_of_signature,
            r.publish_date,
            r.publish_no,
            r.office_goto.as_str(),
        );
        let want = (
            2009,
            31,
            "support",
            "dina yousif",
            date(2009, 9, 9),
            date(2009, 12, 7),
            1,
            "engenering collage",
        );
        ensure(got == want, || format!("got {got:?}"))?;
        Ok(format!("{got:?}"))
    })
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let checks: [(&str, Check); 8] = [
        ("backup compression", backup_compression),
        ("round-trip identity", round_trip_identity),
        ("filter oracle", filter_oracle),
        ("replay soundness", replay_soundness),
        ("ACL totality", acl_totality),
        ("Unicode fidelity", unicode_fidelity),
        ("throughput floor", throughput),
        ("published-list reproduction", fig11_reproduction),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&rt)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failures += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
