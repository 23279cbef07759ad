use std::borrow::Cow;

use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

/// NFC form of `s`, borrowing when it is already normalized.
pub fn normalize(s: &str) -> Cow<'_, str> {
    match is_nfc_quick(s.chars()) {
        IsNormalized::Yes => Cow::Borrowed(s),
        _ => Cow::Owned(s.nfc().collect()),
    }
}

/// Byte-substring match after NFC normalization of the needle. The haystack
/// must already be normalized.
pub fn contains_normalized(normalized_haystack: &str, needle: &str) -> bool {
    normalized_haystack.contains(normalize(needle).as_ref())
}
