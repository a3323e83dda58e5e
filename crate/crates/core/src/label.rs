//! Entity tagsets.
//!
//! A [`LabelSet`] is the closed list of entity classes a corpus is
//! annotated with and a model is asked to use. The outside marker
//! [`OUTSIDE_LABEL`] (`"O"`) is reserved: it means "no entity" at token
//! level and is never a member of the set itself.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Token label reserved for positions outside every entity.
pub const OUTSIDE_LABEL: &str = "O";

/// One entity class: a name used in annotations plus a human-readable
/// description that prompts show to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDef {
    pub name: String,
    pub description: String,
}

impl LabelDef {
    pub fn new(name: &str, description: &str) -> Self {
        LabelDef {
            name: name.to_string(),
            description: description.to_string(),
        }
    }
}

/// A validated, ordered set of entity classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LabelDef>", into = "Vec<LabelDef>")]
pub struct LabelSet {
    entries: Vec<LabelDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelSetError {
    #[error("label set must contain at least one label")]
    Empty,
    #[error("duplicate label name {0:?}")]
    Duplicate(String),
    #[error("label name {0:?} is empty or contains whitespace")]
    InvalidName(String),
    #[error("label name {OUTSIDE_LABEL:?} is reserved for the outside marker")]
    ReservedOutside,
}

impl LabelSet {
    pub fn new(entries: Vec<LabelDef>) -> Result<Self, LabelSetError> {
        if entries.is_empty() {
            return Err(LabelSetError::Empty);
        }
        for (i, def) in entries.iter().enumerate() {
            if def.name.is_empty() || def.name.chars().any(char::is_whitespace) {
                return Err(LabelSetError::InvalidName(def.name.clone()));
            }
            if def.name == OUTSIDE_LABEL {
                return Err(LabelSetError::ReservedOutside);
            }
            if entries[..i].iter().any(|d| d.name == def.name) {
                return Err(LabelSetError::Duplicate(def.name.clone()));
            }
        }
        Ok(LabelSet { entries })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|d| d.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabelDef> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|d| d.name.as_str())
    }
}

impl TryFrom<Vec<LabelDef>> for LabelSet {
    type Error = LabelSetError;

    fn try_from(entries: Vec<LabelDef>) -> Result<Self, Self::Error> {
        LabelSet::new(entries)
    }
}

impl From<LabelSet> for Vec<LabelDef> {
    fn from(set: LabelSet) -> Self {
        set.entries
    }
}

/// The tagset used when no label file is supplied: entity classes for
/// encyclopedic geographic text.
pub fn default_label_set() -> LabelSet {
    LabelSet::new(alloc::vec![
        LabelDef::new("Spatial", "a proper name denoting a place or geographic feature"),
        LabelDef::new("Person", "a proper name denoting a person"),
        LabelDef::new("Misc", "a proper name denoting anything that is neither a place nor a person"),
        LabelDef::new("Nominal", "a common-noun phrase denoting an entity without naming it"),
        LabelDef::new("Relation", "a word or phrase expressing a spatial relation"),
        LabelDef::new("Latlong", "geographic coordinates"),
    ])
    .expect("default tagset is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn accepts_distinct_names() {
        let set = LabelSet::new(vec![
            LabelDef::new("Spatial", "a place"),
            LabelDef::new("Person", "a person"),
        ])
        .unwrap();
        assert!(set.contains("Spatial"));
        assert!(!set.contains("O"));
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn rejects_bad_sets() {
        assert_eq!(LabelSet::new(vec![]), Err(LabelSetError::Empty));
        assert_eq!(
            LabelSet::new(vec![LabelDef::new("A", ""), LabelDef::new("A", "")]),
            Err(LabelSetError::Duplicate("A".to_string()))
        );
        assert_eq!(
            LabelSet::new(vec![LabelDef::new("bad name", "")]),
            Err(LabelSetError::InvalidName("bad name".to_string()))
        );
        assert_eq!(
            LabelSet::new(vec![LabelDef::new("O", "outside")]),
            Err(LabelSetError::ReservedOutside)
        );
    }

    #[test]
    fn default_set_has_six_classes() {
        let set = default_label_set();
        assert_eq!(set.len(), 6);
        for name in ["Spatial", "Person", "Misc", "Nominal", "Relation", "Latlong"] {
            assert!(set.contains(name), "missing {name}");
        }
    }

    #[test]
    fn serde_round_trip_validates() {
        let set = default_label_set();
        let json = serde_json::to_string(&set).unwrap();
        let back: LabelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(set, back);

        let dup = r#"[{"name":"A","description":""},{"name":"A","description":""}]"#;
        assert!(serde_json::from_str::<LabelSet>(dup).is_err());
    }
}
