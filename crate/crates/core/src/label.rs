use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Semantic class of a road marking, e.g. `straight-arrow` or `crosswalk`.
///
/// Tokens are canonicalized on construction (trimmed, lowercased) and must not
/// contain whitespace. Equality is exact token equality.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MarkingLabel(Arc<str>);

impl MarkingLabel {
    pub fn new(token: &str) -> Result<Self> {
        let canonical = token.trim().to_lowercase();
        if canonical.is_empty() {
            return Err(Error::invalid("marking label is empty"));
        }
        if canonical.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "marking label {canonical:?} contains whitespace"
            )));
        }
        Ok(Self(canonical.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for MarkingLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

impl fmt::Display for MarkingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for MarkingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl Serialize for MarkingLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for MarkingLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        MarkingLabel::new(&raw).map_err(serde::de::Error::custom)
    }
}
