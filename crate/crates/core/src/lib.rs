//! Engine for multi-agent diagnosis of deterioration patterns on stone
//! surfaces: a controlled pattern vocabulary, agent roster and prompt
//! contracts, a local retrieval store, a model gateway, the three-phase
//! orchestrator and the evaluation harness.

pub mod agents;
pub mod eval;
pub mod gateway;
pub mod orchestrator;
pub mod rag;
pub mod taxonomy;
