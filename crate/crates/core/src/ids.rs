//! Opaque identifiers.
//!
//! Identifiers are allocated from per-table counters held in the store, so a
//! restored backup reproduces them exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn get(self) -> u64 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}-{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = std::num::ParseIntError;

            /// Accepts both the bare number and the prefixed display form.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let raw = s
                    .strip_prefix(concat!($prefix, "-"))
                    .unwrap_or(s);
                raw.parse().map($name)
            }
        }
    };
}

id_type!(
    /// Department identifier.
    DeptId, "dept"
);
id_type!(
    /// Application (routed record) identifier.
    AppId, "app"
);
id_type!(EventId, "evt");
id_type!(UserId, "user");
id_type!(NewsId, "news");
id_type!(AttachmentId, "att");
