//! Region and finding vocabularies.
//!
//! The defaults reproduce the Chest ImaGenome label space: 36 anatomical
//! regions, 71 detector findings, and the 14-finding set used by the report
//! labeler for clinical-efficiency metrics. Custom vocabularies can be loaded
//! from plain-text files, one identifier per line.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

/// Number of regions in the default vocabulary.
pub const DEFAULT_REGION_COUNT: usize = 36;

/// Default anatomical region identifiers.
pub const DEFAULT_REGIONS: [&str; 36] = [
    "abdomen",
    "aortic arch",
    "cardiac silhouette",
    "carina",
    "cavoatrial junction",
    "descending aorta",
    "left apical zone",
    "left cardiac silhouette",
    "left cardiophrenic angle",
    "left clavicle",
    "left costophrenic angle",
    "left hemidiaphragm",
    "left hilar structures",
    "left lower lung zone",
    "left lung",
    "left mid lung zone",
    "left upper abdomen",
    "left upper lung zone",
    "mediastinum",
    "right apical zone",
    "right atrium",
    "right cardiac silhouette",
    "right cardiophrenic angle",
    "right clavicle",
    "right costophrenic angle",
    "right hemidiaphragm",
    "right hilar structures",
    "right lower lung zone",
    "right lung",
    "right mid lung zone",
    "right upper abdomen",
    "right upper lung zone",
    "spine",
    "svc",
    "trachea",
    "upper mediastinum",
];

/// Default detector finding identifiers.
pub const DEFAULT_FINDINGS: [&str; 71] = [
    "airspace opacity",
    "alveolar hemorrhage",
    "aortic graft/repair",
    "artifact",
    "aspiration",
    "atelectasis",
    "bone lesion",
    "breast/nipple shadows",
    "bronchiectasis",
    "cabg grafts",
    "calcified nodule",
    "cardiac pacer and wires",
    "chest port",
    "chest tube",
    "clavicle fracture",
    "consolidation",
    "copd/emphysema",
    "costophrenic angle blunting",
    "cyst/bullae",
    "diaphragmatic eventration (benign)",
    "elevated hemidiaphragm",
    "endotracheal tube",
    "enlarged cardiac silhouette",
    "enlarged hilum",
    "enteric tube",
    "fluid overload/heart failure",
    "goiter",
    "granulomatous disease",
    "hernia",
    "hydropneumothorax",
    "hyperaeration",
    "ij line",
    "increased reticular markings/ild pattern",
    "infiltration",
    "interstitial lung disease",
    "intra-aortic balloon pump",
    "linear/patchy atelectasis",
    "lobar/segmental collapse",
    "low lung volumes",
    "lung cancer",
    "lung lesion",
    "lung opacity",
    "mass/nodule (not otherwise specified)",
    "mediastinal displacement",
    "mediastinal drain",
    "mediastinal widening",
    "multiple masses/nodules",
    "pericardial effusion",
    "picc",
    "pigtail catheter",
    "pleural effusion",
    "pleural/parenchymal scarring",
    "pneumomediastinum",
    "pneumonia",
    "pneumothorax",
    "prosthetic valve",
    "pulmonary edema/hazy opacity",
    "rotated",
    "scoliosis",
    "shoulder osteoarthritis",
    "spinal degenerative changes",
    "spinal fracture",
    "sub-diaphragmatic air",
    "subclavian line",
    "superior mediastinal mass/enlargement",
    "swan-ganz catheter",
    "tortuous aorta",
    "tracheostomy tube",
    "vascular calcification",
    "vascular congestion",
    "vascular redistribution",
];

/// Default 14-finding vocabulary used by the report labeler for CE metrics.
pub const DEFAULT_LABELER_FINDINGS: [&str; 14] = [
    "enlarged_cardiomediastinum",
    "cardiomegaly",
    "lung_opacity",
    "lung_lesion",
    "edema",
    "consolidation",
    "pneumonia",
    "atelectasis",
    "pneumothorax",
    "pleural_effusion",
    "pleural_other",
    "fracture",
    "support_devices",
    "no_finding",
];

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("duplicate identifier `{0}` in vocabulary")]
    Duplicate(String),
    #[error("failed to read vocabulary file {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered list of anatomical region identifiers.
///
/// The order is significant: token sets, joint representations and input
/// masks are all laid out in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RegionVocabulary {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl RegionVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(VocabError::Duplicate(name.clone()));
            }
        }
        Ok(Self { names, index })
    }

    /// The stock vocabulary of 36 chest regions.
    pub fn default_regions() -> Self {
        Self::new(DEFAULT_REGIONS).expect("default region list is valid")
    }

    /// Loads a vocabulary from a plain-text file, one identifier per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(parse_lines(&text))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for RegionVocabulary {
    type Error = VocabError;

    fn try_from(names: Vec<String>) -> Result<Self, VocabError> {
        Self::new(names)
    }
}

impl From<RegionVocabulary> for Vec<String> {
    fn from(vocab: RegionVocabulary) -> Self {
        vocab.names
    }
}

impl fmt::Display for RegionVocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} regions", self.names.len())
    }
}

/// Ordered list of finding identifiers (detector or labeler vocabulary).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FindingVocabulary {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl FindingVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(VocabError::Duplicate(name.clone()));
            }
        }
        Ok(Self { names, index })
    }

    /// The 71-finding detector vocabulary.
    pub fn default_detector() -> Self {
        Self::new(DEFAULT_FINDINGS).expect("default finding list is valid")
    }

    /// The 14-finding labeler vocabulary used by the CE metrics.
    pub fn default_labeler() -> Self {
        Self::new(DEFAULT_LABELER_FINDINGS).expect("default labeler list is valid")
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(parse_lines(&text))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for FindingVocabulary {
    type Error = VocabError;

    fn try_from(names: Vec<String>) -> Result<Self, VocabError> {
        Self::new(names)
    }
}

impl From<FindingVocabulary> for Vec<String> {
    fn from(vocab: FindingVocabulary) -> Self {
        vocab.names
    }
}

fn parse_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|line| !line.is_empty() && !line.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        assert_eq!(RegionVocabulary::default_regions().len(), 36);
        assert_eq!(FindingVocabulary::default_detector().len(), 71);
        assert_eq!(FindingVocabulary::default_labeler().len(), 14);
    }

    #[test]
    fn region_lookup_matches_order() {
        let vocab = RegionVocabulary::default_regions();
        assert_eq!(vocab.index_of("abdomen"), Some(0));
        assert_eq!(vocab.index_of("upper mediastinum"), Some(35));
        assert_eq!(vocab.name(18), "mediastinum");
        assert!(!vocab.contains("left elbow"));
    }

    #[test]
    fn duplicates_rejected() {
        assert!(matches!(
            RegionVocabulary::new(["a", "b", "a"]),
            Err(VocabError::Duplicate(_))
        ));
        assert!(matches!(
            FindingVocabulary::new(Vec::<String>::new()),
            Err(VocabError::Empty)
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("regions.txt");
        std::fs::write(&path, "# comment\nleft lung\nright lung\n\n").unwrap();
        let vocab = RegionVocabulary::load(&path).unwrap();
        assert_eq!(vocab.names(), ["left lung", "right lung"]);
    }
}
