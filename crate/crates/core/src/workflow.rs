//! Register, route, update, publish and track applications.

use crate::access::UserContext;
use crate::error::{Error, Result};
use crate::ids::{AppId, DeptId};
use crate::model::{
    AppStatus, Application, ApplicationChanges, DepartmentKind, EventKind, NewApplication,
    PublishRecord, PublishRequest, RoutingEvent,
};
use crate::registry::Registry;
use crate::store::{Mutation, Tables, Tx};

fn require_text(value: &str, field: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::validation(field))
    } else {
        Ok(())
    }
}

fn require_type_code(t: &Tables, code: u32) -> Result<()> {
    if code == 0 {
        return Err(Error::validation("type_code"));
    }
    t.dept_by_code(code).map(|_| ()).ok_or(Error::UnknownDepartment)
}

#[allow(clippy::too_many_arguments)]
fn event(
    tx: &mut Tx<'_>,
    app_id: AppId,
    kind: EventKind,
    from: Option<DeptId>,
    to: Option<DeptId>,
    actor: &UserContext,
    at: chrono::DateTime<chrono::Utc>,
    note: String,
) -> RoutingEvent {
    RoutingEvent {
        event_id: tx.next_event_id(),
        app_id,
        kind,
        from_dept: from,
        to_dept: to,
        actor: actor.user_id(),
        at,
        note,
    }
}

impl Registry {
    /// Registers a new application at the incoming archive and, when the
    /// draft names a destination, directs it there in the same transaction.
    pub fn register_application(&self, draft: NewApplication, actor: &UserContext) -> Result<Application> {
        if draft.year < 1 || draft.year > 9999 {
            return Err(Error::validation("year"));
        }
        if draft.incoming_number == 0 {
            return Err(Error::validation("incoming_number"));
        }
        require_text(&draft.subject, "subject")?;
        let now = self.clock().now();
        let incoming_date = draft.incoming_date.unwrap_or_else(|| self.clock().today());

        self.store().write(now, |tx| {
            let t = tx.tables();
            let incoming = t
                .department(self.actor_dept(t, actor)?)
                .filter(|d| d.kind == DepartmentKind::IncomingArchive)
                .ok_or(Error::NotAuthorized)?
                .dept_id;
            require_type_code(t, draft.type_code)?;
            if t.app_by_number(draft.year, draft.incoming_number).is_some() {
                return Err(Error::DuplicateIncomingNumber {
                    year: draft.year,
                    number: draft.incoming_number,
                });
            }
            if let Some(to) = draft.directed_to {
                if t.department(to).is_none() {
                    return Err(Error::UnknownDepartment);
                }
                if to == incoming {
                    return Err(Error::validation("directed_to"));
                }
            }

            let app_id = tx.next_app_id();
            let mut app = Application {
                app_id,
                year: draft.year,
                incoming_number: draft.incoming_number,
                type_code: draft.type_code,
                external_publish_no: draft.external_publish_no.clone(),
                external_publish_date: draft.external_publish_date,
                office_of_origin: draft.office_of_origin.clone(),
                subject: draft.subject.clone(),
                person_name: draft.person_name.clone(),
                notes: draft.notes.clone(),
                incoming_date,
                current_location: incoming,
                status: AppStatus::Registered,
                attachment: None,
            };
            let registered = event(tx, app_id, EventKind::Registered, None, Some(incoming), actor, now, String::new());
            tx.stage(Mutation::AppendEvent(registered))?;
            if let Some(to) = draft.directed_to {
                let hop = event(tx, app_id, EventKind::Redirected, Some(incoming), Some(to), actor, now, String::new());
                tx.stage(Mutation::AppendEvent(hop))?;
                app.current_location = to;
                app.status = AppStatus::Directed;
            }
            tx.stage(Mutation::PutApplication(app.clone()))?;
            Ok(app)
        })
    }

    /// Moves an application from the actor's department to `to_dept`.
    pub fn redirect_application(
        &self,
        app_id: AppId,
        to_dept: DeptId,
        actor: &UserContext,
        note: &str,
    ) -> Result<RoutingEvent> {
        let now = self.clock().now();
        self.store().write(now, |tx| {
            let t = tx.tables();
            let mut app = t.application(app_id).cloned().ok_or(Error::NotFound)?;
            if app.status == AppStatus::Published {
                return Err(Error::AlreadyPublished);
            }
            if self.actor_dept(t, actor)? != app.current_location {
                return Err(Error::NotAuthorized);
            }
            if t.department(to_dept).is_none() {
                return Err(Error::UnknownDepartment);
            }
            if to_dept == app.current_location {
                return Err(Error::SelfRedirect);
            }
            let hop = event(
                tx,
                app_id,
                EventKind::Redirected,
                Some(app.current_location),
                Some(to_dept),
                actor,
                now,
                note.to_owned(),
            );
            tx.stage(Mutation::AppendEvent(hop.clone()))?;
            app.current_location = to_dept;
            app.status = AppStatus::Directed;
            tx.stage(Mutation::PutApplication(app))?;
            Ok(hop)
        })
    }

    /// Replaces mutable fields. The `Updated` event's note lists the touched
    /// field names, comma separated.
    pub fn update_application(
        &self,
        app_id: AppId,
        changes: &ApplicationChanges,
        actor: &UserContext,
    ) -> Result<Application> {
        if let Some(field) = changes.immutable_field() {
            return Err(Error::ImmutableField(field.to_owned()));
        }
        let touched = changes.touched_fields();
        let now = self.clock().now();
        self.store().write(now, |tx| {
            let t = tx.tables();
            let mut app = t.application(app_id).cloned().ok_or(Error::NotFound)?;
            if app.status == AppStatus::Published {
                return Err(Error::AlreadyPublished);
            }
            if self.actor_dept(t, actor)? != app.current_location {
                return Err(Error::NotAuthorized);
            }
            if touched.is_empty() {
                return Err(Error::validation("changes"));
            }
            if let Some(subject) = &changes.subject {
                require_text(subject, "subject")?;
            }
            if let Some(code) = changes.type_code {
                require_type_code(t, code)?;
            }
            changes.apply_to(&mut app);
            let ev = event(tx, app_id, EventKind::Updated, None, None, actor, now, touched.join(","));
            tx.stage(Mutation::AppendEvent(ev))?;
            tx.stage(Mutation::PutApplication(app.clone()))?;
            Ok(app)
        })
    }

    /// Publishes an application sitting at the outgoing department. The
    /// publish number is one past the highest already issued for the
    /// application's year.
    pub fn publish_application(
        &self,
        app_id: AppId,
        publish: &PublishRequest,
        actor: &UserContext,
    ) -> Result<PublishRecord> {
        let now = self.clock().now();
        self.store().write(now, |tx| {
            let t = tx.tables();
            let mut app = t.application(app_id).cloned().ok_or(Error::NotFound)?;
            let actor_dept = t
                .department(self.actor_dept(t, actor)?)
                .ok_or(Error::NotAuthorized)?;
            if actor_dept.kind != DepartmentKind::Outgoing {
                return Err(Error::NotAuthorized);
            }
            if app.status == AppStatus::Published {
                return Err(Error::AlreadyPublished);
            }
            if app.current_location != actor_dept.dept_id {
                return Err(Error::NotAtOutgoing);
            }
            let record = PublishRecord {
                app_id,
                publish_no: t.max_publish_no(app.year) + 1,
                publish_date: publish.publish_date,
                date_of_signature: publish.date_of_signature,
                office_goto: publish.office_goto.clone(),
            };
            let ev = event(
                tx,
                app_id,
                EventKind::Published,
                None,
                None,
                actor,
                now,
                format!("publish_no={}", record.publish_no),
            );
            tx.stage(Mutation::AppendEvent(ev))?;
            app.status = AppStatus::Published;
            tx.stage(Mutation::PutApplication(app))?;
            tx.stage(Mutation::PutPublishRecord(record.clone()))?;
            Ok(record)
        })
    }

    /// The application's full audit trail, oldest first.
    pub fn track_application(&self, app_id: AppId) -> Result<Vec<RoutingEvent>> {
        self.store().read(|t| {
            t.application(app_id).ok_or(Error::NotFound)?;
            Ok(t.events_of(app_id).cloned().collect())
        })
    }

    pub fn get_application(&self, app_id: AppId) -> Result<Application> {
        self.store()
            .read(|t| t.application(app_id).cloned().ok_or(Error::NotFound))
    }

    pub fn get_publish_record(&self, app_id: AppId) -> Result<Option<PublishRecord>> {
        self.store().read(|t| {
            t.application(app_id).ok_or(Error::NotFound)?;
            Ok(t.publish_record(app_id).cloned())
        })
    }
}
