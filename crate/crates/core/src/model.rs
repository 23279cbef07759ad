//! Domain records and the application lifecycle.
//!
//! An application moves `Registered -> Directed -> ... -> Published`. Each
//! step appends a [`RoutingEvent`]; the stored location and status of an
//! application are always reproducible by folding its events with
//! [`replay`].

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::ids::{AppId, AttachmentId, DeptId, EventId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepartmentKind {
    IncomingArchive,
    Outgoing,
    Functional,
    Admin,
}

impl DepartmentKind {
    /// Kinds that must exist exactly once in a configured system.
    pub fn is_singleton(self) -> bool {
        !matches!(self, DepartmentKind::Functional)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Department {
    pub dept_id: DeptId,
    pub code: u32,
    pub name: String,
    pub kind: DepartmentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewDepartment {
    pub code: u32,
    pub name: String,
    pub kind: DepartmentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppStatus {
    Registered,
    Directed,
    Published,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Application {
    pub app_id: AppId,
    pub year: i32,
    pub incoming_number: u32,
    pub type_code: u32,
    pub external_publish_no: Option<String>,
    pub external_publish_date: Option<NaiveDate>,
    pub office_of_origin: String,
    pub subject: String,
    pub person_name: String,
    pub notes: String,
    pub incoming_date: NaiveDate,
    pub current_location: DeptId,
    pub status: AppStatus,
    pub attachment: Option<AttachmentId>,
}

/// Insert-form contents for a new application.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewApplication {
    pub year: i32,
    pub incoming_number: u32,
    pub type_code: u32,
    pub external_publish_no: Option<String>,
    pub external_publish_date: Option<NaiveDate>,
    pub office_of_origin: String,
    pub subject: String,
    pub person_name: String,
    pub notes: String,
    /// Defaults to the service clock's current date.
    pub incoming_date: Option<NaiveDate>,
    pub directed_to: Option<DeptId>,
}

/// A partial update.
///
/// The identity fields are present only so that an attempt to change them is
/// reported as [`Error::ImmutableField`](crate::Error::ImmutableField) rather
/// than silently dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApplicationChanges {
    pub subject: Option<String>,
    pub person_name: Option<String>,
    pub notes: Option<String>,
    pub office_of_origin: Option<String>,
    #[serde(deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub external_publish_no: Option<Option<String>>,
    #[serde(deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub external_publish_date: Option<Option<NaiveDate>>,
    pub type_code: Option<u32>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub app_id: Option<AppId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incoming_number: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incoming_date: Option<NaiveDate>,
}

// `{"x": null}` clears the field, an absent key leaves it alone.
fn double_option<'de, T, D>(de: D) -> Result<Option<Option<T>>, D::Error>
where
    T: Deserialize<'de>,
    D: Deserializer<'de>,
{
    Option::<T>::deserialize(de).map(Some)
}

impl ApplicationChanges {
    pub(crate) fn immutable_field(&self) -> Option<&'static str> {
        if self.app_id.is_some() {
            Some("app_id")
        } else if self.year.is_some() {
            Some("year")
        } else if self.incoming_number.is_some() {
            Some("incoming_number")
        } else if self.incoming_date.is_some() {
            Some("incoming_date")
        } else {
            None
        }
    }

    /// Names of the mutable fields this change set touches, in declaration order.
    pub fn touched_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.subject.is_some() {
            out.push("subject");
        }
        if self.person_name.is_some() {
            out.push("person_name");
        }
        if self.notes.is_some() {
            out.push("notes");
        }
        if self.office_of_origin.is_some() {
            out.push("office_of_origin");
        }
        if self.external_publish_no.is_some() {
            out.push("external_publish_no");
        }
        if self.external_publish_date.is_some() {
            out.push("external_publish_date");
        }
        if self.type_code.is_some() {
            out.push("type_code");
        }
        out
    }

    pub(crate) fn apply_to(&self, app: &mut Application) {
        if let Some(v) = &self.subject {
            app.subject = v.clone();
        }
        if let Some(v) = &self.person_name {
            app.person_name = v.clone();
        }
        if let Some(v) = &self.notes {
            app.notes = v.clone();
        }
        if let Some(v) = &self.office_of_origin {
            app.office_of_origin = v.clone();
        }
        if let Some(v) = &self.external_publish_no {
            app.external_publish_no = v.clone();
        }
        if let Some(v) = &self.external_publish_date {
            app.external_publish_date = *v;
        }
        if let Some(v) = self.type_code {
            app.type_code = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Registered,
    Redirected,
    Updated,
    Published,
}

/// One entry of an application's audit trail. Never mutated once stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingEvent {
    pub event_id: EventId,
    pub app_id: AppId,
    pub kind: EventKind,
    pub from_dept: Option<DeptId>,
    pub to_dept: Option<DeptId>,
    pub actor: UserId,
    pub at: DateTime<Utc>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishRecord {
    pub app_id: AppId,
    pub publish_no: u32,
    pub publish_date: NaiveDate,
    pub date_of_signature: NaiveDate,
    pub office_goto: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishRequest {
    pub date_of_signature: NaiveDate,
    pub publish_date: NaiveDate,
    pub office_goto: String,
}

/// Where an application is and what state it is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub location: DeptId,
    pub status: AppStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("event trail is empty")]
    Empty,
    #[error("first event {0} is not a registration")]
    NotRegisteredFirst(EventId),
    #[error("event {0} registers an application twice")]
    DuplicateRegistration(EventId),
    #[error("event {0} has no destination department")]
    MissingDestination(EventId),
    #[error("event {0} moves from {1} but the application is at {2}")]
    WrongOrigin(EventId, DeptId, DeptId),
    #[error("event {0} follows publication")]
    AfterPublish(EventId),
}

impl Position {
    fn step(&mut self, event: &RoutingEvent) -> Result<(), ReplayError> {
        if self.status == AppStatus::Published {
            return Err(ReplayError::AfterPublish(event.event_id));
        }
        match event.kind {
            EventKind::Registered => {
                return Err(ReplayError::DuplicateRegistration(event.event_id));
            }
            EventKind::Redirected => {
                let to = event
                    .to_dept
                    .ok_or(ReplayError::MissingDestination(event.event_id))?;
                if let Some(from) = event.from_dept {
                    if from != self.location {
                        return Err(ReplayError::WrongOrigin(event.event_id, from, self.location));
                    }
                }
                self.location = to;
                self.status = AppStatus::Directed;
            }
            EventKind::Updated => {}
            EventKind::Published => self.status = AppStatus::Published,
        }
        Ok(())
    }
}

/// Folds an event trail, oldest first, into the position it implies.
pub fn replay<'a, I>(events: I) -> Result<Position, ReplayError>
where
    I: IntoIterator<Item = &'a RoutingEvent>,
{
    let mut iter = events.into_iter();
    let first = iter.next().ok_or(ReplayError::Empty)?;
    if first.kind != EventKind::Registered {
        return Err(ReplayError::NotRegisteredFirst(first.event_id));
    }
    let mut pos = Position {
        location: first
            .to_dept
            .ok_or(ReplayError::MissingDestination(first.event_id))?,
        status: AppStatus::Registered,
    };
    for event in iter {
        pos.step(event)?;
    }
    Ok(pos)
}
