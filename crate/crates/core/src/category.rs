use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Task category vocabulary, in the fixed tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    General,
    DetectionSegmentation,
    DocumentChart,
    OcrText,
    Medical,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::General,
        Category::DetectionSegmentation,
        Category::DocumentChart,
        Category::OcrText,
        Category::Medical,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::General => "general",
            Category::DetectionSegmentation => "detection-segmentation",
            Category::DocumentChart => "document-chart",
            Category::OcrText => "ocr-text",
            Category::Medical => "medical",
        }
    }

    pub fn one_hot(self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SimError::UnknownCategory(s.to_string()))
    }
}
