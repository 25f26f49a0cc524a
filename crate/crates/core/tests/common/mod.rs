#![allow(dead_code)]

use std::sync::Arc;

use regcast_core::gateway::{BackendKind, ChatBackend, ChatRequest, ChatResponse, Gateway, GatewayError};
use regcast_core::knowledge::{Edge, KnowledgeBase, MoaTargetMap, SnapshotSource};
use regcast_core::Query;

/// Backend answering through a closure.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        Ok(ChatResponse {
            content: (self.0)(req)?,
            backend: BackendKind::Scripted,
            latency_ms: 1,
        })
    }
}

pub fn gateway<F>(f: F) -> Gateway
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
{
    Gateway::new(Arc::new(FnBackend(f)), 8)
}

pub fn query(gene: &str) -> Query {
    Query {
        cell_line: "A375".into(),
        compound: "vemurafenib".into(),
        moa: "BRAF inhibitor".into(),
        gene: gene.into(),
    }
}

pub fn knowledge(edges: &[(&str, &str, f64)]) -> KnowledgeBase {
    let targets = MoaTargetMap {
        targets: [("BRAF inhibitor".to_string(), vec!["BRAF".to_string()])].into_iter().collect(),
    };
    KnowledgeBase::new(
        targets,
        SnapshotSource::from_edges(edges.iter().map(|(a, b, s)| Edge::new(a, b, *s))),
    )
}

pub const CONTEXT_OK: &str = r#"{"context_reasoning": "BRAF V600E drives MAPK output.", "pathway_activity": "active"}"#;
pub const MECHANISM_OK: &str = r#"{"mechanism_reasoning": "(vemurafenib)-(inhibits)->(BRAF)", "primary_action": "inhibition"}"#;
pub const NETWORK_OK: &str = r#"{"network_reasoning": "(BRAF)-(activates)->(ERK)-(induces)->(DUSP6)", "edge_type": "positive_regulation"}"#;
pub const NOT_PROBLEMATIC: &str = r#"{"verdict": "not-problematic", "feedback": "fine"}"#;
pub const PROBLEMATIC: &str = r#"{"verdict": "problematic", "feedback": "copies history"}"#;

pub fn integration_reply(answer: &str) -> String {
    format!(r#"{{"reasoning": "MAPK suppression lowers the target; answer {answer}.", "answer": "{answer}"}}"#)
}
