//! HTTP lookup against a STRING-compatible network endpoint.
//!
//! Sends `GET {base_url}/api/tsv/network?identifiers=A%0dB&species=N` and
//! reads a headed TSV. Gene columns are `preferredName_A`/`preferredName_B`
//! (or `geneA`/`geneB`); the score column is `score` on a 0-1 scale or
//! `combined_score` on 0-1000.

use std::time::Duration;

use super::{InteractionSource, KnowledgeError, Provenance, SCORE_SCALE};
use crate::tsv::Table;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub species: u32,
    pub timeout: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://string-db.org".into(),
            species: 9606,
            timeout: Duration::from_secs(20),
        }
    }
}

pub struct LiveStringSource {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveStringSource {
    pub fn new(config: LiveConfig) -> Result<Self, KnowledgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| KnowledgeError::Unavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self, a: &str, b: &str) -> String {
        format!(
            "{}/api/tsv/network?identifiers={}%0d{}&species={}",
            self.config.base_url.trim_end_matches('/'),
            a,
            b,
            self.config.species
        )
    }
}

/// Extracts the raw (0-1000) score for the unordered pair from a response body.
pub fn parse_network_tsv(body: &str, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError> {
    let table = Table::from_reader("response", body.as_bytes())?;
    let col_a = table
        .optional_column("preferredName_A")
        .or_else(|| table.optional_column("geneA"));
    let col_b = table
        .optional_column("preferredName_B")
        .or_else(|| table.optional_column("geneB"));
    let (Some(col_a), Some(col_b)) = (col_a, col_b) else {
        return Err(KnowledgeError::Unavailable("malformed response: missing gene columns".into()));
    };
    let (col_s, scale) = match (table.optional_column("combined_score"), table.optional_column("score")) {
        (Some(c), _) => (c, 1.0),
        (None, Some(c)) => (c, SCORE_SCALE),
        _ => return Err(KnowledgeError::Unavailable("malformed response: missing score column".into())),
    };
    let mut best: Option<f64> = None;
    for row in &table.rows {
        let (x, y) = (row.get(col_a), row.get(col_b));
        if !((x == a && y == b) || (x == b && y == a)) {
            continue;
        }
        let Ok(s) = row.get(col_s).parse::<f64>() else { continue };
        let raw = s * scale;
        best = Some(best.map_or(raw, |cur| cur.max(raw)));
    }
    Ok(best)
}

impl InteractionSource for LiveStringSource {
    fn combined_score(&self, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError> {
        let response = self
            .client
            .get(self.url(a, b))
            .send()
            .map_err(|e| KnowledgeError::Unavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(KnowledgeError::Unavailable(format!("HTTP {}", response.status())));
        }
        let body = response
            .text()
            .map_err(|e| KnowledgeError::Unavailable(e.to_string()))?;
        parse_network_tsv(&body, a, b)
    }

    fn provenance(&self) -> Provenance {
        Provenance::LiveApi
    }
}
