use serde::{Deserialize, Serialize};

/// A piece of candidate or reference source text plus where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceUnit {
    pub raw_text: String,
    pub origin: String,
}

impl SourceUnit {
    pub fn new(origin: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            origin: origin.into(),
        }
    }

    pub fn is_blank(&self) -> bool {
        self.raw_text.trim().is_empty()
    }

    /// Hex SHA-256 of the raw text.
    pub fn content_hash(&self) -> String {
        crate::util::sha256_hex(self.raw_text.as_bytes())
    }
}
