//! Shared domain vocabulary: regulation direction, queries and contexts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary direction of gene regulation. Serialized as `1` (up) / `0` (down)
/// in benchmark files and as `upregulated` / `downregulated` in agent text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Down,
    Up,
}

impl Direction {
    pub fn from_z(z: f64) -> Self {
        if z > 0.0 {
            Direction::Up
        } else {
            Direction::Down
        }
    }

    /// The wording agents use in prompts and JSON answers.
    pub fn as_answer(self) -> &'static str {
        match self {
            Direction::Up => "upregulated",
            Direction::Down => "downregulated",
        }
    }

    pub fn as_short(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    pub fn as_label(self) -> u8 {
        match self {
            Direction::Up => 1,
            Direction::Down => 0,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            1 => Some(Direction::Up),
            0 => Some(Direction::Down),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_short())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognised direction {0:?}")]
pub struct ParseDirectionError(pub String);

impl FromStr for Direction {
    type Err = ParseDirectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" | "upregulated" | "1" => Ok(Direction::Up),
            "down" | "downregulated" | "0" => Ok(Direction::Down),
            _ => Err(ParseDirectionError(s.to_string())),
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_label())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u8),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(n) => Direction::from_label(n)
                .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {n}"))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One (cell line, perturbation, gene) question. Carries no ground truth:
/// everything that builds prompts takes a `Query`, never a benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub cell_line: String,
    pub compound: String,
    pub moa: String,
    pub gene: String,
}

impl Query {
    pub fn context(&self) -> ContextId {
        ContextId::new(&self.cell_line, &self.compound)
    }

    /// Text substituted for `{pert_or_moa}` in agent templates.
    pub fn perturbation_text(&self) -> String {
        if self.moa.is_empty() {
            self.compound.clone()
        } else {
            format!("{} ({})", self.moa, self.compound)
        }
    }
}

/// A (cell line, compound) pair: the unit of progressive reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextId {
    pub cell_line: String,
    pub compound: String,
}

impl ContextId {
    pub fn new(cell_line: &str, compound: &str) -> Self {
        Self {
            cell_line: cell_line.to_string(),
            compound: compound.to_string(),
        }
    }

    /// Filesystem-safe key, used for checkpoint file names.
    pub fn file_key(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
                .collect()
        };
        format!("{}__{}", clean(&self.cell_line), clean(&self.compound))
    }
}

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.cell_line, self.compound)
    }
}
