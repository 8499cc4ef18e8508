//! Datasets, the native matrix file format, train/test splits, preprocessing
//! and the synthetic lineage generator.

mod format;
mod preprocess;
mod split;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::tensor::Matrix;

pub use format::{load_matrix, save_matrix, write_labels_csv, MAGIC, VERSION};
pub use preprocess::Preprocessor;
pub use split::{split, Split};
pub use synthetic::{generate_synthetic_lineage, SyntheticConfig, SyntheticLineage, SyntheticPopulation, LABEL_CODE_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Progenitor,
    Monocyte,
    Lymphocyte,
}

impl CellType {
    pub const ALL: [CellType; 3] = [CellType::Progenitor, CellType::Monocyte, CellType::Lymphocyte];

    pub fn code(self) -> u8 {
        match self {
            CellType::Progenitor => 0,
            CellType::Monocyte => 1,
            CellType::Lymphocyte => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CellType::Progenitor => "progenitor",
            CellType::Monocyte => "monocyte",
            CellType::Lymphocyte => "lymphocyte",
        }
    }
}

impl fmt::Display for CellType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown cell type {s:?}")))
    }
}

/// The seven disease states. The discriminant is the class index used by
/// every classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiseaseLabel {
    Normal = 0,
    Mds = 1,
    Cytopenia = 2,
    Cmml = 3,
    SmmMds = 4,
    MpnMds = 5,
    CmmlMds = 6,
}

impl DiseaseLabel {
    pub const COUNT: usize = 7;
    pub const ALL: [DiseaseLabel; 7] = [
        DiseaseLabel::Normal,
        DiseaseLabel::Mds,
        DiseaseLabel::Cytopenia,
        DiseaseLabel::Cmml,
        DiseaseLabel::SmmMds,
        DiseaseLabel::MpnMds,
        DiseaseLabel::CmmlMds,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DiseaseLabel::Mds => "MDS",
            DiseaseLabel::Cytopenia => "cytopenia",
            DiseaseLabel::Cmml => "CMML",
            DiseaseLabel::SmmMds => "SMM+MDS",
            DiseaseLabel::MpnMds => "MPN+MDS",
            DiseaseLabel::CmmlMds => "CMML+MDS",
            DiseaseLabel::Normal => "normal",
        }
    }

    pub fn is_disease(self) -> bool {
        self != DiseaseLabel::Normal
    }
}

/// Normal → 0, every disease state → 1. Normal is class 0, so the mapping
/// is idempotent.
pub fn binarize_labels(labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| usize::from(l != DiseaseLabel::Normal.index()))
        .collect()
}

/// Provenance key/value pairs embedded in every file.
pub type Manifest = BTreeMap<String, String>;

/// Expression (or embedding) matrix with per-row disease labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix<f32>,
    /// Class indices; see [`DiseaseLabel`].
    pub labels: Vec<usize>,
    pub cell_type: CellType,
    pub manifest: Manifest,
}

impl LabeledDataset {
    pub fn new(x: Matrix<f32>, labels: Vec<usize>, cell_type: CellType) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::Dimension {
                context: "dataset labels".into(),
                expected: format!("{} labels", x.rows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= DiseaseLabel::COUNT) {
            return Err(Error::Config(format!("label {l} at row {i} outside [0, {})", DiseaseLabel::COUNT)));
        }
        x.check_finite()?;
        Ok(Self {
            x,
            labels,
            cell_type,
            manifest: Manifest::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.x.cols()
    }

    /// Hash of the content (values, labels, population); excludes the manifest.
    pub fn content_fingerprint(&self) -> String {
        let mut f = Fingerprinter::new("labeled-dataset");
        f.u64(self.cell_type.code() as u64)
            .usizes(&self.labels)
            .matrix(&self.x);
        f.finish()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            cell_type: self.cell_type,
            manifest: self.manifest.clone(),
        }
    }

    pub fn label_counts(&self) -> [usize; DiseaseLabel::COUNT] {
        let mut counts = [0; DiseaseLabel::COUNT];
        for &l in &self.labels {
            if l < DiseaseLabel::COUNT {
                counts[l] += 1;
            }
        }
        counts
    }
}
