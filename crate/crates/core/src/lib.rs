//! Departmental records routing: register incoming applications, direct
//! them between departments, update and publish them, and keep a complete
//! audit trail of every step.
//!
//! Access is by username and password from the single address an account is
//! bound to. State lives in a transactional [`store::Store`] that can be
//! exported as a deterministic, optionally DEFLATE-compressed
//! [`backup::BackupArchive`] and restored byte for byte.
//!
//! ```
//! use dlms_core::{Config, Registry, NewDepartment, DepartmentKind, PasswordConfig};
//!
//! let reg = Registry::in_memory(Config {
//!     password: PasswordConfig::insecure_fast(),
//!     ..Config::default()
//! })
//! .unwrap();
//! let admin_dept = NewDepartment { code: 1, name: "Admin".into(), kind: DepartmentKind::Admin };
//! let ip = "127.0.0.1".parse().unwrap();
//! reg.bootstrap_admin(admin_dept, "root", "change-me", ip).unwrap();
//! let session = reg.login("root", "change-me", ip).unwrap();
//! assert!(reg.login("root", "change-me", "10.9.9.9".parse().unwrap()).is_err());
//! # let _ = session;
//! ```

pub mod access;
pub mod attachments;
pub mod backup;
pub mod clock;
mod error;
pub mod ids;
pub mod model;
pub mod news;
pub mod query;
mod registry;
pub mod store;
pub mod text;
mod workflow;

pub use access::{NewUser, PasswordConfig, Role, Scope, Session, UserAccount, UserContext};
pub use attachments::{Attachment, AttachmentAudit, AttachmentPolicy, BlobStore, FsBlobStore, MemoryBlobStore};
pub use backup::{BackupArchive, BackupMode, RestoreReport};
pub use clock::{Clock, ManualClock, SystemClock};
pub use error::{Error, Result};
pub use ids::{AppId, AttachmentId, DeptId, EventId, NewsId, UserId};
pub use model::{
    replay, AppStatus, Application, ApplicationChanges, Department, DepartmentKind, EventKind,
    NewApplication, NewDepartment, Position, PublishRecord, PublishRequest, RoutingEvent,
};
pub use news::NewsItem;
pub use query::{FilterQuery, Page, PublishRow};
pub use registry::{Config, Registry};
