//! Semantic label vocabulary.
//!
//! Simulated data carries ground/wood/leaf. The five-class vocabulary of
//! annotated field data and the binary tree/non-tree classes live in the same
//! enum so clouds from either source can be remapped and compared.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Semantic {
    Ground = 0,
    Wood = 1,
    Leaf = 2,
    Stem = 3,
    WoodyBranches = 4,
    LiveBranches = 5,
    LowVegetation = 6,
    NonTree = 7,
    Tree = 8,
}

impl Semantic {
    pub const ALL: [Semantic; 9] = [
        Semantic::Ground,
        Semantic::Wood,
        Semantic::Leaf,
        Semantic::Stem,
        Semantic::WoodyBranches,
        Semantic::LiveBranches,
        Semantic::LowVegetation,
        Semantic::NonTree,
        Semantic::Tree,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Semantic> {
        Semantic::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Semantic::Ground => "ground",
            Semantic::Wood => "wood",
            Semantic::Leaf => "leaf",
            Semantic::Stem => "stem",
            Semantic::WoodyBranches => "woody_branches",
            Semantic::LiveBranches => "live_branches",
            Semantic::LowVegetation => "low_vegetation",
            Semantic::NonTree => "non_tree",
            Semantic::Tree => "tree",
        }
    }
}

impl fmt::Display for Semantic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Semantic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Semantic::ALL
            .iter()
            .copied()
            .find(|l| l.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown semantic label '{s}'")))
    }
}

/// Total or partial mapping between label vocabularies.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticMapping {
    pub map: BTreeMap<Semantic, Semantic>,
}

impl SemanticMapping {
    pub fn identity() -> Self {
        SemanticMapping {
            map: Semantic::ALL.iter().map(|&s| (s, s)).collect(),
        }
    }

    /// Five annotated classes onto tree / non-tree. Low vegetation goes to
    /// non-tree because instance labels only ever attach to trees.
    pub fn five_class_to_binary() -> Self {
        use Semantic::*;
        SemanticMapping {
            map: [
                (Stem, Tree),
                (WoodyBranches, Tree),
                (LiveBranches, Tree),
                (LowVegetation, NonTree),
                (Ground, NonTree),
            ]
            .into_iter()
            .collect(),
        }
    }

    /// Simulated leaf/wood/ground onto tree / non-tree.
    pub fn leaf_wood_to_binary() -> Self {
        use Semantic::*;
        SemanticMapping {
            map: [(Wood, Tree), (Leaf, Tree), (Ground, NonTree)]
                .into_iter()
                .collect(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "identity" | "none" => Ok(Self::identity()),
            "five-class-binary" => Ok(Self::five_class_to_binary()),
            "leaf-wood-binary" | "binary" => Ok(Self::leaf_wood_to_binary()),
            other => Err(Error::Config(format!(
                "unknown semantic mapping '{other}' (expected identity, binary, five-class-binary)"
            ))),
        }
    }

    pub fn apply(&self, label: Semantic) -> Result<Semantic> {
        self.map
            .get(&label)
            .copied()
            .ok_or_else(|| Error::Data(format!("semantic label '{label}' has no mapping")))
    }
}
