//! Knowledge-base retrieval as a routable tool. Registered only after the
//! warm-up stage barrier; the one place the agent can reach raw stored
//! content instead of router-distilled summaries.

use super::{BackendError, BackendResponse, ToolBackend};
use crate::kb::KbHandle;
use crate::types::{RawKnowledgeRecord, RecordSource};

pub const KB_RETRIEVE_TOOL: &str = "kb_retrieve";

pub struct KbRetrieveBackend {
    kb: KbHandle,
    top_k: usize,
}

impl KbRetrieveBackend {
    pub fn new(kb: KbHandle, top_k: usize) -> Self {
        KbRetrieveBackend { kb, top_k }
    }
}

impl ToolBackend for KbRetrieveBackend {
    fn invoke(
        &self,
        argument: &str,
        task_id: &str,
        help_index: u32,
    ) -> Result<BackendResponse, BackendError> {
        if argument.trim().is_empty() {
            return Err(BackendError::InvalidArgument("query is empty".into()));
        }
        let kb = self.kb.read().unwrap_or_else(|e| e.into_inner());
        let ranked = kb
            .retrieve(argument, self.top_k)
            .map_err(|e| BackendError::Other(e.to_string()))?;
        let mut response = BackendResponse::default();
        for (chunk, score) in ranked {
            response.notes.push(format!(
                "kb chunk {} from record {} scored {score:.4}",
                &chunk.chunk_id[..12.min(chunk.chunk_id.len())],
                &chunk.record_id[..12.min(chunk.record_id.len())]
            ));
            response.records.push(RawKnowledgeRecord::new(
                RecordSource::KbChunk {
                    chunk_id: chunk.chunk_id.clone(),
                },
                chunk.text.clone(),
                task_id,
                help_index,
            ));
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::kb::{kb_handle, KnowledgeBase};
    use crate::provider::hashed::{HashedTfEmbedding, HASHED_TF_ID};

    #[test]
    fn retrieval_yields_kb_chunk_records() {
        let mut kb = KnowledgeBase::new(Arc::new(HashedTfEmbedding::new()), HASHED_TF_ID);
        kb.ingest(&[RawKnowledgeRecord::new(
            RecordSource::Url {
                url: "fixture://p1".into(),
            },
            "the copper facade of the vessel",
            "warmup",
            1,
        )])
        .unwrap();
        let backend = KbRetrieveBackend::new(kb_handle(kb), 3);
        let response = backend.invoke("copper facade", "t9", 2).unwrap();
        assert_eq!(response.records.len(), 1);
        assert!(matches!(
            response.records[0].source,
            RecordSource::KbChunk { .. }
        ));
        assert_eq!(response.records[0].task_id, "t9");
    }

    #[test]
    fn empty_store_yields_no_records() {
        let kb = KnowledgeBase::new(Arc::new(HashedTfEmbedding::new()), HASHED_TF_ID);
        let backend = KbRetrieveBackend::new(kb_handle(kb), 3);
        let response = backend.invoke("anything", "t1", 1).unwrap();
        assert!(response.records.is_empty());
    }
}
