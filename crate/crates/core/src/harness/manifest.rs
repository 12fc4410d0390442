use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{binarize_birads, BinaryLabel, BiradsLabel};

pub const MANIFEST_HEADER: [&str; 6] = ["image_path", "patient_id", "birads", "view", "side", "age"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "MLO")]
    Mlo,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Cc => "CC",
            View::Mlo => "MLO",
        })
    }
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CC" => Ok(View::Cc),
            "MLO" => Ok(View::Mlo),
            _ => Err(format!("view must be CC or MLO, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "Left",
            Side::Right => "Right",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            _ => Err(format!("side must be Left or Right, got '{s}'")),
        }
    }
}

/// One image of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub image_path: String,
    pub patient_id: String,
    pub birads: BiradsLabel,
    pub view: View,
    pub side: Side,
    pub age: Option<u32>,
}

impl ManifestRecord {
    pub fn binary_label(&self) -> BinaryLabel {
        binarize_birads(self.birads)
    }
}

/// A validated list of records plus the directory image paths resolve
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub root: PathBuf,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::data("manifest has no records"));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.image_path.as_str()) {
                return Err(Error::data(format!("duplicate image path '{}'", r.image_path)));
            }
        }
        Ok(Manifest {
            records,
            root: root.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, path, root)
    }

    /// Parse CSV text; `path` only labels errors.
    pub fn parse(text: &str, path: &Path, root: PathBuf) -> Result<Manifest> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| parse_error(path, 1, e.to_string()))?
            .clone();
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(parse_error(
                path,
                1,
                format!("header must be '{}'", MANIFEST_HEADER.join(",")),
            ));
        }
        let mut records = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_error(path, line, e.to_string())
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| row.get(i).unwrap_or("");
            let image_path = field(0).to_string();
            if image_path.is_empty() {
                return Err(parse_error(path, line, "image_path is empty"));
            }
            if !seen.insert(image_path.clone()) {
                return Err(parse_error(path, line, format!("duplicate image_path '{image_path}'")));
            }
            let patient_id = field(1).to_string();
            if patient_id.is_empty() {
                return Err(parse_error(path, line, "patient_id is empty"));
            }
            let birads = field(2)
                .parse::<u8>()
                .ok()
                .and_then(|b| BiradsLabel::new(b).ok())
                .ok_or_else(|| {
                    parse_error(path, line, format!("field birads: '{}' is not in 0..=6", field(2)))
                })?;
            let view = field(3)
                .parse()
                .map_err(|e: String| parse_error(path, line, format!("field view: {e}")))?;
            let side = field(4)
                .parse()
                .map_err(|e: String| parse_error(path, line, format!("field side: {e}")))?;
            let age = match field(5) {
                "" => None,
                s => Some(s.parse::<u32>().map_err(|_| {
                    parse_error(path, line, format!("field age: '{s}' is not a whole number"))
                })?),
            };
            records.push(ManifestRecord {
                image_path,
                patient_id,
                birads,
                view,
                side,
                age,
            });
        }
        if records.is_empty() {
            return Err(parse_error(path, 1, "manifest has no records"));
        }
        Ok(Manifest { records, root })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).expect("in-memory write");
        for r in &self.records {
            let age = r.age.map(|a| a.to_string()).unwrap_or_default();
            w.write_record([
                r.image_path.as_str(),
                r.patient_id.as_str(),
                &r.birads.category().to_string(),
                &r.view.to_string(),
                &r.side.to_string(),
                &age,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Counts of (negative, positive, excluded) records.
    pub fn label_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for r in &self.records {
            match r.binary_label() {
                BinaryLabel::Negative => counts.0 += 1,
                BinaryLabel::Positive => counts.1 += 1,
                BinaryLabel::Excluded => counts.2 += 1,
            }
        }
        counts
    }
}
