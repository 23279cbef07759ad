use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::access::UserAccount;
use crate::attachments::Attachment;
use crate::ids::{AppId, AttachmentId, DeptId, EventId, NewsId, UserId};
use crate::model::{Application, Department, DepartmentKind, PublishRecord, RoutingEvent};
use crate::news::NewsItem;
use crate::text::normalize;

use super::{Commit, Mutation};

/// Id counters and the time of the last committed write.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub next_dept_id: u64,
    pub next_app_id: u64,
    pub next_event_id: u64,
    pub next_user_id: u64,
    pub next_news_id: u64,
    pub next_attachment_id: u64,
    pub last_modified: Option<DateTime<Utc>>,
}

/// Listing order: newest year first, then highest incoming number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct ListKey {
    year: Reverse<i32>,
    number: Reverse<u32>,
    pub app_id: AppId,
}

impl ListKey {
    pub fn of(app: &Application) -> Self {
        ListKey {
            year: Reverse(app.year),
            number: Reverse(app.incoming_number),
            app_id: app.app_id,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct NormalizedText {
    pub subject: String,
    pub person_name: String,
}

/// Derived lookup structures. Rebuilt from rows, never exported.
#[derive(Debug, Clone, Default)]
pub(crate) struct Indexes {
    pub events_by_app: HashMap<AppId, Vec<EventId>>,
    pub by_number: HashMap<(i32, u32), AppId>,
    pub listing: BTreeSet<ListKey>,
    pub by_year: HashMap<i32, BTreeSet<ListKey>>,
    pub by_type: HashMap<u32, BTreeSet<ListKey>>,
    pub by_location: HashMap<DeptId, BTreeSet<ListKey>>,
    pub normalized: HashMap<AppId, NormalizedText>,
    pub max_publish_no: HashMap<i32, u32>,
    pub users_by_name: HashMap<String, UserId>,
    pub dept_by_code: HashMap<u32, DeptId>,
}

/// Unindexed table contents.
pub(crate) struct Rows {
    pub meta: Meta,
    pub departments: Vec<Department>,
    pub users: Vec<UserAccount>,
    pub applications: Vec<Application>,
    pub events: Vec<RoutingEvent>,
    pub publish_records: Vec<PublishRecord>,
    pub attachments: Vec<Attachment>,
    pub news: Vec<NewsItem>,
}

#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub(crate) meta: Meta,
    pub(crate) departments: BTreeMap<DeptId, Department>,
    pub(crate) users: BTreeMap<UserId, UserAccount>,
    pub(crate) applications: BTreeMap<AppId, Application>,
    pub(crate) events: BTreeMap<EventId, RoutingEvent>,
    pub(crate) publish_records: BTreeMap<AppId, PublishRecord>,
    pub(crate) attachments: BTreeMap<AttachmentId, Attachment>,
    pub(crate) news: BTreeMap<NewsId, NewsItem>,
    pub(crate) index: Indexes,
}

fn remove_key<K: std::hash::Hash + Eq>(map: &mut HashMap<K, BTreeSet<ListKey>>, k: K, key: &ListKey) {
    if let Some(set) = map.get_mut(&k) {
        set.remove(key);
        if set.is_empty() {
            map.remove(&k);
        }
    }
}

impl Tables {
    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn departments(&self) -> impl Iterator<Item = &Department> {
        self.departments.values()
    }

    pub fn department(&self, id: DeptId) -> Option<&Department> {
        self.departments.get(&id)
    }

    pub fn dept_by_code(&self, code: u32) -> Option<&Department> {
        self.index
            .dept_by_code
            .get(&code)
            .and_then(|id| self.departments.get(id))
    }

    pub fn dept_of_kind(&self, kind: DepartmentKind) -> Option<&Department> {
        self.departments.values().find(|d| d.kind == kind)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserAccount> {
        self.users.values()
    }

    pub fn user(&self, id: UserId) -> Option<&UserAccount> {
        self.users.get(&id)
    }

    pub fn user_by_name(&self, name: &str) -> Option<&UserAccount> {
        self.index
            .users_by_name
            .get(name)
            .and_then(|id| self.users.get(id))
    }

    pub fn applications(&self) -> impl Iterator<Item = &Application> {
        self.applications.values()
    }

    pub fn application(&self, id: AppId) -> Option<&Application> {
        self.applications.get(&id)
    }

    pub fn app_by_number(&self, year: i32, number: u32) -> Option<&Application> {
        self.index
            .by_number
            .get(&(year, number))
            .and_then(|id| self.applications.get(id))
    }

    /// Events of one application in commit order.
    pub fn events_of(&self, app: AppId) -> impl Iterator<Item = &RoutingEvent> {
        self.index
            .events_by_app
            .get(&app)
            .into_iter()
            .flatten()
            .map(|id| &self.events[id])
    }

    pub fn events(&self) -> impl Iterator<Item = &RoutingEvent> {
        self.events.values()
    }

    pub fn publish_record(&self, app: AppId) -> Option<&PublishRecord> {
        self.publish_records.get(&app)
    }

    pub fn publish_records(&self) -> impl Iterator<Item = &PublishRecord> {
        self.publish_records.values()
    }

    pub fn max_publish_no(&self, year: i32) -> u32 {
        self.index.max_publish_no.get(&year).copied().unwrap_or(0)
    }

    pub fn attachment(&self, id: AttachmentId) -> Option<&Attachment> {
        self.attachments.get(&id)
    }

    pub fn attachments(&self) -> impl Iterator<Item = &Attachment> {
        self.attachments.values()
    }

    pub fn news(&self) -> impl Iterator<Item = &NewsItem> {
        self.news.values()
    }

    pub fn row_counts(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([
            ("departments", self.departments.len() as u64),
            ("users", self.users.len() as u64),
            ("applications", self.applications.len() as u64),
            ("events", self.events.len() as u64),
            ("publish_records", self.publish_records.len() as u64),
            ("attachments", self.attachments.len() as u64),
            ("news", self.news.len() as u64),
        ])
    }

    pub(crate) fn apply(&mut self, commit: Commit) {
        self.meta = commit.meta;
        for m in commit.mutations {
            self.apply_one(m);
        }
    }

    pub(crate) fn apply_one(&mut self, m: Mutation) {
        match m {
            Mutation::PutDepartment(d) => {
                if let Some(old) = self.departments.get(&d.dept_id) {
                    self.index.dept_by_code.remove(&old.code);
                }
                self.index.dept_by_code.insert(d.code, d.dept_id);
                self.departments.insert(d.dept_id, d);
            }
            Mutation::PutUser(u) => {
                if let Some(old) = self.users.get(&u.user_id) {
                    self.index.users_by_name.remove(&old.username);
                }
                self.index.users_by_name.insert(u.username.clone(), u.user_id);
                self.users.insert(u.user_id, u);
            }
            Mutation::PutApplication(app) => self.put_application(app),
            Mutation::AppendEvent(ev) => {
                self.index
                    .events_by_app
                    .entry(ev.app_id)
                    .or_default()
                    .push(ev.event_id);
                self.events.insert(ev.event_id, ev);
            }
            Mutation::PutPublishRecord(p) => {
                let year = self.applications.get(&p.app_id).map(|a| a.year);
                if let Some(year) = year {
                    let max = self.index.max_publish_no.entry(year).or_default();
                    *max = (*max).max(p.publish_no);
                }
                self.publish_records.insert(p.app_id, p);
            }
            Mutation::PutAttachment(a) => {
                self.attachments.insert(a.attachment_id, a);
            }
            Mutation::RemoveAttachment(id) => {
                self.attachments.remove(&id);
            }
            Mutation::PutNews(n) => {
                self.news.insert(n.news_id, n);
            }
            Mutation::RemoveNews(id) => {
                self.news.remove(&id);
            }
        }
    }

    fn put_application(&mut self, app: Application) {
        if let Some(old) = self.applications.get(&app.app_id) {
            let key = ListKey::of(old);
            let (year, number, ty, loc) =
                (old.year, old.incoming_number, old.type_code, old.current_location);
            self.index.by_number.remove(&(year, number));
            self.index.listing.remove(&key);
            remove_key(&mut self.index.by_year, year, &key);
            remove_key(&mut self.index.by_type, ty, &key);
            remove_key(&mut self.index.by_location, loc, &key);
        }
        let key = ListKey::of(&app);
        self.index
            .by_number
            .insert((app.year, app.incoming_number), app.app_id);
        self.index.listing.insert(key);
        self.index.by_year.entry(app.year).or_default().insert(key);
        self.index.by_type.entry(app.type_code).or_default().insert(key);
        self.index
            .by_location
            .entry(app.current_location)
            .or_default()
            .insert(key);
        self.index.normalized.insert(
            app.app_id,
            NormalizedText {
                subject: normalize(&app.subject).into_owned(),
                person_name: normalize(&app.person_name).into_owned(),
            },
        );
        self.applications.insert(app.app_id, app);
    }

    /// Rebuilds a table set from raw rows (used by backup import).
    pub(crate) fn from_rows(rows: Rows) -> Self {
        let Rows {
            meta,
            departments,
            users,
            applications,
            events,
            publish_records,
            attachments,
            news,
        } = rows;
        let mut t = Tables {
            meta,
            ..Tables::default()
        };
        let mutations = departments
            .into_iter()
            .map(Mutation::PutDepartment)
            .chain(users.into_iter().map(Mutation::PutUser))
            .chain(applications.into_iter().map(Mutation::PutApplication))
            .chain(events.into_iter().map(Mutation::AppendEvent))
            .chain(publish_records.into_iter().map(Mutation::PutPublishRecord))
            .chain(attachments.into_iter().map(Mutation::PutAttachment))
            .chain(news.into_iter().map(Mutation::PutNews));
        for m in mutations {
            t.apply_one(m);
        }
        t
    }
}
