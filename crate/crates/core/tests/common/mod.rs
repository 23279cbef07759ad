#![allow(dead_code)]

use std::net::IpAddr;
use std::sync::Arc;

use chrono::{NaiveDate, TimeZone, Utc};
use dlms_core::{
    Config, Department, DepartmentKind, ManualClock, MemoryBlobStore, NewApplication,
    NewDepartment, NewUser, PasswordConfig, Registry, Role, UserContext,
};
use dlms_core::store::Store;

pub const PASSWORD: &str = "correct horse";

/// A configured foundation: admin, incoming archive, outgoing and four
/// functional departments (codes 31..=34), one clerk per department.
pub struct Fixture {
    pub reg: Registry,
    pub clock: ManualClock,
    pub admin: UserContext,
    pub incoming: Department,
    pub outgoing: Department,
    pub functional: Vec<Department>,
    pub clerks: Vec<(Department, UserContext)>,
}

pub fn ip(s: &str) -> IpAddr {
    s.parse().unwrap()
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

pub fn test_config() -> Config {
    Config {
        password: PasswordConfig::insecure_fast(),
        ..Config::default()
    }
}

pub fn clerk_ip(i: usize) -> IpAddr {
    ip(&format!("10.0.0.{}", 10 + i))
}

pub const ADMIN_IP: &str = "10.0.0.1";

impl Fixture {
    pub fn new() -> Self {
        Self::with_store(Store::in_memory())
    }

    pub fn with_store(store: Store) -> Self {
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2009, 9, 1, 8, 0, 0).unwrap());
        let reg = Registry::new(
            store,
            Arc::new(MemoryBlobStore::new()),
            Arc::new(clock.clone()),
            test_config(),
        )
        .unwrap();
        Self::configure(reg, clock)
    }

    pub fn configure(reg: Registry, clock: ManualClock) -> Self {
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
        let incoming = mk(10, "Incoming archive", DepartmentKind::IncomingArchive);
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
        for (i, d) in all.into_iter().enumerate() {
            let acct = reg
                .create_user(
                    &admin,
                    NewUser {
                        username: format!("clerk{}", d.code),
                        password: PASSWORD.into(),
                        dept_id: d.dept_id,
                        bound_ip: clerk_ip(i),
                        role: Role::Clerk,
                    },
                )
                .unwrap();
            clerks.push((d, reg.impersonate(acct.user_id).unwrap()));
        }
        Fixture { reg, clock, admin, incoming, outgoing, functional, clerks }
    }

    pub fn clerk_of(&self, dept: dlms_core::DeptId) -> &UserContext {
        &self
            .clerks
            .iter()
            .find(|(d, _)| d.dept_id == dept)
            .expect("every department has a clerk")
            .1
    }

    pub fn inbox(&self) -> &UserContext {
        self.clerk_of(self.incoming.dept_id)
    }

    pub fn outbox(&self) -> &UserContext {
        self.clerk_of(self.outgoing.dept_id)
    }

    /// Every department an application may be routed through.
    pub fn routable(&self) -> Vec<dlms_core::DeptId> {
        std::iter::once(self.incoming.dept_id)
            .chain(std::iter::once(self.outgoing.dept_id))
            .chain(self.functional.iter().map(|d| d.dept_id))
            .collect()
    }
}

/// The record shown in the published-list screenshot.
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

pub fn draft(year: i32, number: u32, subject: &str) -> NewApplication {
    NewApplication {
        year,
        incoming_number: number,
        type_code: 31,
        subject: subject.into(),
        person_name: "someone".into(),
        office_of_origin: "office".into(),
        incoming_date: Some(date(year, 1, 1)),
        ..Default::default()
    }
}

/// Words mixing Latin, Kurdish (Sorani) and decomposed accents so that
/// substring search has to normalize.
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

pub const SUBJECT_SNIPPETS: &[&str] = &["sup", "قاری", "café", "e\u{301}", "وە", "trans", "x"];

/// Registers `n` applications with random text, routes some of them and
/// publishes a few. Deterministic for a given seed.
pub fn populate(fx: &Fixture, n: u32, seed: u64) {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let depts = fx.routable();
    let codes: Vec<u32> = fx.functional.iter().map(|d| d.code).collect();
    let publish = dlms_core::PublishRequest {
        date_of_signature: date(2009, 9, 9),
        publish_date: date(2009, 12, 7),
        office_goto: "office".into(),
    };
    for i in 0..n {
        let year = rng.gen_range(2006..=2010);
        let subject = format!(
            "{} {}",
            WORDS.choose(&mut rng).unwrap(),
            WORDS.choose(&mut rng).unwrap()
        );
        let d = NewApplication {
            year,
            incoming_number: i + 1,
            type_code: *codes.choose(&mut rng).unwrap(),
            subject,
            person_name: WORDS.choose(&mut rng).unwrap().to_string(),
            office_of_origin: "office".into(),
            incoming_date: Some(date(year, rng.gen_range(1..=12), rng.gen_range(1..=28))),
            ..Default::default()
        };
        let app = fx.reg.register_application(d, fx.inbox()).unwrap();
        let hops = rng.gen_range(0..4);
        let mut here = fx.incoming.dept_id;
        for _ in 0..hops {
            let to = *depts.choose(&mut rng).unwrap();
            if to != here {
                fx.reg
                    .redirect_application(app.app_id, to, fx.clerk_of(here), "")
                    .unwrap();
                here = to;
            }
        }
        if here == fx.outgoing.dept_id && rng.gen_bool(0.7) {
            fx.reg
                .publish_application(app.app_id, &publish, fx.outbox())
                .unwrap();
        }
    }
}

