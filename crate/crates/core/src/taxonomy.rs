//! Canonical vocabulary of deterioration patterns, lithologies and exposure
//! factors.
//!
//! The vocabulary is entirely data driven. A taxonomy file is UTF-8 JSON
//! Lines: an optional header record followed by one record per entry, each
//! tagged with a `kind`:
//!
//! ```text
//! {"kind":"header","version":"sample-1"}
//! {"kind":"pattern","id":"BLACK_CRUST","display_name":"Black crust","aliases":["black crusts"],"partial_of":[]}
//! {"kind":"lithology","id":"LIMESTONE","family":"carbonate"}
//! {"kind":"exposure","id":"RAIN","description":"Direct rain wash"}
//! ```
//!
//! Free text is normalized by folding (lowercase, punctuation to spaces,
//! collapsed whitespace) and looked up exactly. There is no fuzzy matching:
//! anything that does not fold onto a known key comes back as
//! [`Term::Unknown`] with the raw text preserved.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("alias {alias:?} maps to both {first} and {second}")]
    DuplicateAlias {
        alias: String,
        first: String,
        second: String,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("invalid id {0:?}: ids must match [A-Z][A-Z0-9_]*")]
    InvalidId(String),
    #[error("label {id} lists an unknown or self partial_of reference {reference}")]
    BadPartialOf { id: String, reference: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A normalized term: either a canonical identifier or the unmatched raw text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Canonical(String),
    Unknown(String),
}

impl Term {
    pub fn canonical_id(&self) -> Option<&str> {
        match self {
            Term::Canonical(id) => Some(id),
            Term::Unknown(_) => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Term::Unknown(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Canonical(id) => f.write_str(id),
            Term::Unknown(raw) => write!(f, "Unknown({raw})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternLabel {
    pub id: String,
    pub display_name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub partial_of: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LithologyFamily {
    Carbonate,
    Silicate,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LithologyClass {
    pub id: String,
    pub family: LithologyFamily,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureFactor {
    pub id: String,
    pub description: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Header { version: String },
    Pattern(PatternLabel),
    Lithology(LithologyClass),
    Exposure(ExposureFactor),
}

/// Immutable vocabulary. Safe to share across threads once loaded.
#[derive(Debug, Clone)]
pub struct PatternTaxonomy {
    version: String,
    labels: Vec<PatternLabel>,
    lithologies: Vec<LithologyClass>,
    exposures: Vec<ExposureFactor>,
    pattern_keys: HashMap<String, usize>,
    lithology_keys: HashMap<String, usize>,
    exposure_keys: HashMap<String, usize>,
}

impl PartialEq for PatternTaxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.labels == other.labels
            && self.lithologies == other.lithologies
            && self.exposures == other.exposures
    }
}

/// Folds free text for exact comparison: lowercase, every non-alphanumeric
/// character becomes a space, whitespace runs collapse to one space.
pub fn fold(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn valid_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

impl PatternTaxonomy {
    /// Builds a taxonomy, checking every invariant.
    pub fn new(
        version: impl Into<String>,
        labels: Vec<PatternLabel>,
        lithologies: Vec<LithologyClass>,
        exposures: Vec<ExposureFactor>,
    ) -> Result<Self, TaxonomyError> {
        let mut ids = HashSet::new();
        for id in labels
            .iter()
            .map(|l| &l.id)
            .chain(lithologies.iter().map(|l| &l.id))
            .chain(exposures.iter().map(|e| &e.id))
        {
            if !valid_id(id) {
                return Err(TaxonomyError::InvalidId(id.clone()));
            }
        }
        for label in &labels {
            if !ids.insert(label.id.as_str()) {
                return Err(TaxonomyError::DuplicateId(label.id.clone()));
            }
        }
        for label in &labels {
            for reference in &label.partial_of {
                if reference == &label.id || !ids.contains(reference.as_str()) {
                    return Err(TaxonomyError::BadPartialOf {
                        id: label.id.clone(),
                        reference: reference.clone(),
                    });
                }
            }
        }

        let mut pattern_keys: HashMap<String, usize> = HashMap::new();
        for (index, label) in labels.iter().enumerate() {
            let keys = std::iter::once(&label.id)
                .chain(std::iter::once(&label.display_name))
                .chain(label.aliases.iter());
            for raw in keys {
                let key = fold(raw);
                if key.is_empty() {
                    continue;
                }
                match pattern_keys.get(&key) {
                    Some(&other) if other != index => {
                        return Err(TaxonomyError::DuplicateAlias {
                            alias: raw.clone(),
                            first: labels[other].id.clone(),
                            second: label.id.clone(),
                        });
                    }
                    _ => {
                        pattern_keys.insert(key, index);
                    }
                }
            }
        }

        let lithology_keys = id_keys(lithologies.iter().map(|l| l.id.as_str()))?;
        let exposure_keys = id_keys(exposures.iter().map(|e| e.id.as_str()))?;

        Ok(Self {
            version: version.into(),
            labels,
            lithologies,
            exposures,
            pattern_keys,
            lithology_keys,
            exposure_keys,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn labels(&self) -> &[PatternLabel] {
        &self.labels
    }

    pub fn lithologies(&self) -> &[LithologyClass] {
        &self.lithologies
    }

    pub fn exposures(&self) -> &[ExposureFactor] {
        &self.exposures
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: &str) -> Option<&PatternLabel> {
        self.labels.iter().find(|l| l.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.label(id).is_some()
    }

    /// True when either label lists the other in its `partial_of`.
    pub fn partially_overlaps(&self, a: &str, b: &str) -> bool {
        let lists = |x: &str, y: &str| {
            self.label(x)
                .map(|l| l.partial_of.iter().any(|p| p == y))
                .unwrap_or(false)
        };
        lists(a, b) || lists(b, a)
    }

    /// Maps free text onto a pattern id. Matches the folded id, display name
    /// and aliases exactly; never fails.
    pub fn normalize_label(&self, raw: &str) -> Term {
        match self.pattern_keys.get(&fold(raw)) {
            Some(&index) => Term::Canonical(self.labels[index].id.clone()),
            None => Term::Unknown(raw.to_string()),
        }
    }

    pub fn normalize_lithology(&self, raw: &str) -> Term {
        match self.lithology_keys.get(&fold(raw)) {
            Some(&index) => Term::Canonical(self.lithologies[index].id.clone()),
            None => Term::Unknown(raw.to_string()),
        }
    }

    pub fn normalize_exposure(&self, raw: &str) -> Term {
        match self.exposure_keys.get(&fold(raw)) {
            Some(&index) => Term::Canonical(self.exposures[index].id.clone()),
            None => Term::Unknown(raw.to_string()),
        }
    }

    pub fn lithology_family(&self, id: &str) -> Option<LithologyFamily> {
        self.lithologies
            .iter()
            .find(|l| l.id == id)
            .map(|l| l.family)
    }

    /// Parses the JSON Lines document.
    pub fn parse(source: &str) -> Result<Self, TaxonomyError> {
        let mut version = String::new();
        let mut labels = Vec::new();
        let mut lithologies = Vec::new();
        let mut exposures = Vec::new();

        for (index, line) in source.lines().enumerate() {
            let line_no = index + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(trimmed).map_err(|e| TaxonomyError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match record {
                Record::Header { version: v } => {
                    if index != 0 {
                        return Err(TaxonomyError::Parse {
                            line: line_no,
                            message: "header record must be the first line".into(),
                        });
                    }
                    version = v;
                }
                Record::Pattern(label) => labels.push(label),
                Record::Lithology(l) => lithologies.push(l),
                Record::Exposure(e) => exposures.push(e),
            }
        }
        Self::new(version, labels, lithologies, exposures)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Canonical serialization: header, patterns, lithologies, exposures,
    /// each in declaration order, one compact JSON record per line.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        let mut push = |record: &Record| {
            // Serializing these plain records cannot fail.
            out.push_str(&serde_json::to_string(record).expect("taxonomy record serializes"));
            out.push('\n');
        };
        push(&Record::Header {
            version: self.version.clone(),
        });
        for label in &self.labels {
            push(&Record::Pattern(label.clone()));
        }
        for lithology in &self.lithologies {
            push(&Record::Lithology(lithology.clone()));
        }
        for exposure in &self.exposures {
            push(&Record::Exposure(exposure.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TaxonomyError> {
        std::fs::write(path, self.to_document()).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn id_keys<'a>(
    ids: impl Iterator<Item = &'a str>,
) -> Result<HashMap<String, usize>, TaxonomyError> {
    let mut keys = HashMap::new();
    for (index, id) in ids.enumerate() {
        if keys.insert(fold(id), index).is_some() {
            return Err(TaxonomyError::DuplicateId(id.to_string()));
        }
    }
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_labels() -> &'static str {
        concat!(
            "{\"kind\":\"header\",\"version\":\"t\"}\n",
            "{\"kind\":\"pattern\",\"id\":\"BLACK_CRUST\",\"display_name\":\"Black crust\",\"aliases\":[\"black crusts\",\"crust\"],\"partial_of\":[]}\n",
            "{\"kind\":\"pattern\",\"id\":\"BIOCOLONIZATION\",\"display_name\":\"Biological colonization\",\"aliases\":[\"biocolonization\"],\"partial_of\":[]}\n",
        )
    }

    #[test]
    fn loads_two_labels() {
        let taxonomy = PatternTaxonomy::parse(two_labels()).unwrap();
        assert_eq!(taxonomy.len(), 2);
        assert_eq!(taxonomy.version(), "t");
    }

    #[test]
    fn rejects_duplicate_alias_across_labels() {
        let doc = format!(
            "{}{}",
            two_labels(),
            "{\"kind\":\"pattern\",\"id\":\"SALT_CRUST\",\"display_name\":\"Salt crust\",\"aliases\":[\"crust\"]}\n"
        );
        match PatternTaxonomy::parse(&doc) {
            Err(TaxonomyError::DuplicateAlias { first, second, .. }) => {
                assert_eq!(first, "BLACK_CRUST");
                assert_eq!(second, "SALT_CRUST");
            }
            other => panic!("expected duplicate alias error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let doc = format!("{}{{not json\n", two_labels());
        match PatternTaxonomy::parse(&doc) {
            Err(TaxonomyError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_self_partial_and_bad_ids() {
        let doc = "{\"kind\":\"pattern\",\"id\":\"SOILING\",\"display_name\":\"Soiling\",\"partial_of\":[\"SOILING\"]}\n";
        assert!(matches!(
            PatternTaxonomy::parse(doc),
            Err(TaxonomyError::BadPartialOf { .. })
        ));
        let doc = "{\"kind\":\"pattern\",\"id\":\"soiling\",\"display_name\":\"Soiling\"}\n";
        assert!(matches!(
            PatternTaxonomy::parse(doc),
            Err(TaxonomyError::InvalidId(_))
        ));
    }

    #[test]
    fn normalization_folds_case_space_and_punctuation() {
        let taxonomy = PatternTaxonomy::parse(two_labels()).unwrap();
        assert_eq!(
            taxonomy.normalize_label("Black  crust."),
            Term::Canonical("BLACK_CRUST".into())
        );
        assert_eq!(
            taxonomy.normalize_label("  BLACK-CRUSTS "),
            Term::Canonical("BLACK_CRUST".into())
        );
        assert_eq!(
            taxonomy.normalize_label("dark stain"),
            Term::Unknown("dark stain".into())
        );
    }

    #[test]
    fn round_trips_through_document() {
        let taxonomy = PatternTaxonomy::parse(two_labels()).unwrap();
        let doc = taxonomy.to_document();
        let again = PatternTaxonomy::parse(&doc).unwrap();
        assert_eq!(taxonomy, again);
        assert_eq!(doc, again.to_document());
    }
}
