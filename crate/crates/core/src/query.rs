//! Search, directed-jobs and publish-list queries.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::access::UserContext;
use crate::error::{Error, Result};
use crate::ids::{AppId, DeptId};
use crate::model::{AppStatus, Application};
use crate::registry::Registry;
use crate::store::{ListKey, Tables};
use crate::text::contains_normalized;

/// Conjunction of optional predicates plus a page selector. An empty query
/// matches every application.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterQuery {
    pub year: Option<i32>,
    pub type_code: Option<u32>,
    pub subject_contains: Option<String>,
    pub person_contains: Option<String>,
    pub incoming_number: Option<u32>,
    /// Department the application currently sits at.
    pub directed_to: Option<DeptId>,
    /// Inclusive bounds on `incoming_date`.
    pub date_from: Option<NaiveDate>,
    pub date_to: Option<NaiveDate>,
    /// Zero-based.
    pub page: u32,
    pub page_size: Option<u32>,
}

impl FilterQuery {
    pub fn validate(&self) -> Result<()> {
        if let (Some(from), Some(to)) = (self.date_from, self.date_to) {
            if from > to {
                return Err(Error::InvalidQuery("date_from is after date_to".into()));
            }
        }
        Ok(())
    }

    /// Whether `app` satisfies every predicate except the page selector.
    /// `subject`/`person` are the NFC forms of the application's text.
    fn matches(&self, app: &Application, subject: &str, person: &str) -> bool {
        self.year.is_none_or(|y| app.year == y)
            && self.type_code.is_none_or(|c| app.type_code == c)
            && self.incoming_number.is_none_or(|n| app.incoming_number == n)
            && self.directed_to.is_none_or(|d| app.current_location == d)
            && self.date_from.is_none_or(|d| app.incoming_date >= d)
            && self.date_to.is_none_or(|d| app.incoming_date <= d)
            && self
                .subject_contains
                .as_deref()
                .is_none_or(|s| contains_normalized(subject, s))
            && self
                .person_contains
                .as_deref()
                .is_none_or(|s| contains_normalized(person, s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total_count: u64,
    pub page: u32,
    pub page_size: u32,
}

impl<T> Page<T> {
    /// Cuts page `page` out of an already ordered sequence, counting all of it.
    pub fn slice(all: impl Iterator<Item = T>, page: u32, page_size: u32) -> Self {
        let skip = page as u64 * page_size as u64;
        let mut items = Vec::new();
        let mut total = 0u64;
        for item in all {
            if total >= skip && items.len() < page_size as usize {
                items.push(item);
            }
            total += 1;
        }
        Page {
            items,
            total_count: total,
            page,
            page_size,
        }
    }

    /// Number of pages; an empty result still has one (empty) page.
    pub fn page_count(&self) -> u32 {
        (self.total_count.div_ceil(self.page_size as u64)).max(1) as u32
    }

    pub fn last_page(&self) -> u32 {
        self.page_count() - 1
    }

    pub fn has_previous(&self) -> bool {
        self.page > 0
    }

    pub fn has_next(&self) -> bool {
        self.page < self.last_page()
    }

    pub fn map<U>(self, f: impl FnMut(T) -> U) -> Page<U> {
        Page {
            items: self.items.into_iter().map(f).collect(),
            total_count: self.total_count,
            page: self.page,
            page_size: self.page_size,
        }
    }
}

/// One line of the publish list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishRow {
    pub app_id: AppId,
    pub year: i32,
    pub incoming_number: u32,
    pub type_code: u32,
    pub subject: String,
    pub person_name: String,
    pub date_of_signature: NaiveDate,
    pub publish_date: NaiveDate,
    pub publish_no: u32,
    pub office_goto: String,
}

/// Applications matching `query`, in listing order.
///
/// Starts from the narrowest available index (exact number, then the
/// smallest of the year / type / location buckets) and checks the remaining
/// predicates row by row.
fn matching<'t>(t: &'t Tables, query: &'t FilterQuery) -> Box<dyn Iterator<Item = &'t Application> + 't> {
    let idx = &t.index;
    let row = move |key: &ListKey| {
        let app = &t.applications[&key.app_id];
        let text = &idx.normalized[&key.app_id];
        query
            .matches(app, &text.subject, &text.person_name)
            .then_some(app)
    };

    if let (Some(year), Some(number)) = (query.year, query.incoming_number) {
        let hit = t.app_by_number(year, number).map(ListKey::of);
        return Box::new(hit.into_iter().filter_map(move |k| row(&k)));
    }

    let mut candidates: Option<&std::collections::BTreeSet<ListKey>> = None;
    let mut consider = |set: Option<&'t std::collections::BTreeSet<ListKey>>, present: bool| {
        if !present {
            return true;
        }
        match set {
            // a present predicate with no bucket matches nothing
            None => false,
            Some(s) => {
                if candidates.is_none_or(|c| s.len() < c.len()) {
                    candidates = Some(s);
                }
                true
            }
        }
    };
    let any_hits = consider(query.year.and_then(|y| idx.by_year.get(&y)), query.year.is_some())
        && consider(
            query.type_code.and_then(|c| idx.by_type.get(&c)),
            query.type_code.is_some(),
        )
        && consider(
            query.directed_to.and_then(|d| idx.by_location.get(&d)),
            query.directed_to.is_some(),
        );
    if !any_hits {
        return Box::new(std::iter::empty());
    }
    let keys = candidates.unwrap_or(&idx.listing);
    Box::new(keys.iter().filter_map(row))
}

impl Registry {
    /// Search over all applications. Any authenticated user may search.
    pub fn filter_applications(&self, query: &FilterQuery, _viewer: &UserContext) -> Result<Page<Application>> {
        query.validate()?;
        let page_size = self.config().resolve_page_size(query.page_size)?;
        Ok(self.store().read(|t| {
            Page::slice(matching(t, query).cloned(), query.page, page_size)
        }))
    }

    /// Unpublished applications currently at `dept_id`.
    pub fn list_directed(
        &self,
        dept_id: DeptId,
        viewer: &UserContext,
        page: u32,
        page_size: Option<u32>,
    ) -> Result<Page<Application>> {
        if !viewer.is_admin() && viewer.dept_id() != dept_id {
            return Err(Error::NotAuthorized);
        }
        let page_size = self.config().resolve_page_size(page_size)?;
        self.store().read(|t| {
            t.department(dept_id).ok_or(Error::UnknownDepartment)?;
            let apps = t
                .index
                .by_location
                .get(&dept_id)
                .into_iter()
                .flatten()
                .map(|k| &t.applications[&k.app_id])
                .filter(|a| a.status != AppStatus::Published)
                .cloned();
            Ok(Page::slice(apps, page, page_size))
        })
    }

    /// Published applications matching `query`, as publish-list rows.
    pub fn list_published(&self, query: &FilterQuery, _viewer: &UserContext) -> Result<Page<PublishRow>> {
        query.validate()?;
        let page_size = self.config().resolve_page_size(query.page_size)?;
        Ok(self.store().read(|t| {
            let rows = matching(t, query).filter_map(|app| {
                let p = t.publish_record(app.app_id)?;
                Some(PublishRow {
                    app_id: app.app_id,
                    year: app.year,
                    incoming_number: app.incoming_number,
                    type_code: app.type_code,
                    subject: app.subject.clone(),
                    person_name: app.person_name.clone(),
                    date_of_signature: p.date_of_signature,
                    publish_date: p.publish_date,
                    publish_no: p.publish_no,
                    office_goto: p.office_goto.clone(),
                })
            });
            Page::slice(rows, query.page, page_size)
        }))
    }
}
