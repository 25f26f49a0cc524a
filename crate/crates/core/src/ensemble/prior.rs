use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tsv::{parse_f64, Table, TableError};
use crate::types::{Direction, Query};

/// Prediction from an external model, attached to the integration prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralPrior {
    pub predicted_label: Direction,
    pub confidence: f64,
}

impl NeuralPrior {
    pub fn new(predicted_label: Direction, confidence: f64) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(format!("confidence must lie in [0, 1], got {confidence}"));
        }
        Ok(Self { predicted_label, confidence })
    }
}

pub trait PriorSource: Send + Sync {
    fn prior(&self, q: &Query) -> Option<NeuralPrior>;
}

/// Priors read from `priors.tsv` (cell_line, compound, gene,
/// predicted_label, confidence).
#[derive(Debug, Clone, Default)]
pub struct TablePrior {
    entries: HashMap<(String, String, String), NeuralPrior>,
}

impl TablePrior {
    pub fn insert(&mut self, cell_line: &str, compound: &str, gene: &str, prior: NeuralPrior) {
        self.entries
            .insert((cell_line.to_string(), compound.to_string(), gene.to_string()), prior);
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        let table = Table::read(path)?;
        let cols = ["cell_line", "compound", "gene", "predicted_label", "confidence"]
            .map(|c| table.column(c))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = TablePrior::default();
        for row in &table.rows {
            let label: Direction = row
                .get(cols[3])
                .parse()
                .map_err(|e: crate::types::ParseDirectionError| row_error(&table, row, e.to_string()))?;
            let prior = parse_f64(row.get(cols[4]), "confidence")
                .and_then(|c| NeuralPrior::new(label, c))
                .map_err(|e| row_error(&table, row, e))?;
            out.insert(row.get(cols[0]), row.get(cols[1]), row.get(cols[2]), prior);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn row_error(table: &Table, row: &crate::tsv::Row, message: String) -> TableError {
    TableError::Row {
        path: table.path.clone(),
        line: row.line,
        message,
    }
}

impl PriorSource for TablePrior {
    fn prior(&self, q: &Query) -> Option<NeuralPrior> {
        self.entries
            .get(&(q.cell_line.clone(), q.compound.clone(), q.gene.clone()))
            .copied()
    }
}
