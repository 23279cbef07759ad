//! Localized message catalogs, compiled into the binary.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locale {
    #[default]
    Ku,
    En,
}

impl Locale {
    pub const ALL: [Locale; 2] = [Locale::Ku, Locale::En];

    pub fn as_str(self) -> &'static str {
        match self {
            Locale::Ku => "ku",
            Locale::En => "en",
        }
    }

    /// Picks the first supported language from an `Accept-Language` value.
    /// Sorani is also tagged `ckb`.
    pub fn from_accept_language(header: &str) -> Option<Locale> {
        header.split(',').find_map(|part| {
            let tag = part.split(';').next()?.trim();
            let primary = tag.split('-').next()?.to_ascii_lowercase();
            match primary.as_str() {
                "ku" | "ckb" => Some(Locale::Ku),
                "en" => Some(Locale::En),
                _ => None,
            }
        })
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLocale(pub String);

impl fmt::Display for UnknownLocale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown locale {:?}", self.0)
    }
}

impl std::error::Error for UnknownLocale {}

impl FromStr for Locale {
    type Err = UnknownLocale;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ku" | "ckb" => Ok(Locale::Ku),
            "en" => Ok(Locale::En),
            _ => Err(UnknownLocale(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingKey {
    pub key: String,
    pub locale: Locale,
}

impl fmt::Display for MissingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no {} message for {:?}", self.locale, self.key)
    }
}

impl std::error::Error for MissingKey {}

pub type Catalog = BTreeMap<String, String>;

const KU: &str = include_str!("../catalog/ku.json");
const EN: &str = include_str!("../catalog/en.json");

/// The full catalog of one locale.
pub fn catalog(locale: Locale) -> &'static Catalog {
    static KU_CAT: OnceLock<Catalog> = OnceLock::new();
    static EN_CAT: OnceLock<Catalog> = OnceLock::new();
    let (cell, src) = match locale {
        Locale::Ku => (&KU_CAT, KU),
        Locale::En => (&EN_CAT, EN),
    };
    cell.get_or_init(|| serde_json::from_str(src).expect("embedded catalog is valid JSON"))
}

pub fn localize(key: &str, locale: Locale) -> Result<&'static str, MissingKey> {
    catalog(locale)
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| MissingKey {
            key: key.to_owned(),
            locale,
        })
}

/// Fills the `{detail}` placeholder of a template.
pub fn render(template: &str, detail: Option<&str>) -> String {
    template.replace("{detail}", detail.unwrap_or(""))
}
