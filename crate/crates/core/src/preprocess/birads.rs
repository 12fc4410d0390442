use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BI-RADS assessment category, 0 through 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BiradsLabel(u8);

impl BiradsLabel {
    pub fn new(category: u8) -> Result<Self> {
        if category > 6 {
            return Err(Error::data(format!("BI-RADS category {category} is outside 0-6")));
        }
        Ok(BiradsLabel(category))
    }

    pub fn category(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for BiradsLabel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        BiradsLabel::new(v)
    }
}

impl From<BiradsLabel> for u8 {
    fn from(l: BiradsLabel) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Negative,
    Positive,
    Excluded,
}

impl BinaryLabel {
    /// Class index used by the classifier: negative 0, positive 1.
    pub fn class_index(self) -> Option<usize> {
        match self {
            BinaryLabel::Negative => Some(0),
            BinaryLabel::Positive => Some(1),
            BinaryLabel::Excluded => None,
        }
    }
}

/// Categories 1-2 are negative, 4-6 positive; 0 (incomplete) and 3 (probably
/// benign) are left out.
pub fn binarize_birads(label: BiradsLabel) -> BinaryLabel {
    match label.0 {
        1 | 2 => BinaryLabel::Negative,
        4..=6 => BinaryLabel::Positive,
        _ => BinaryLabel::Excluded,
    }
}

/// Validate a raw category and binarize it, naming `record` on failure.
pub fn binarize_raw(category: i64, record: &str) -> Result<BinaryLabel> {
    u8::try_from(category)
        .ok()
        .and_then(|c| BiradsLabel::new(c).ok())
        .map(binarize_birads)
        .ok_or_else(|| Error::data(format!("{record}: BI-RADS category {category} is outside 0-6")))
}
