//! Knowledge-graph retrieval and question answering over issue-tracker
//! tickets.
//!
//! Each ticket is parsed into a tree of template sections; trees are linked
//! by explicit tracker references and by title similarity. Queries are
//! parsed into section-keyed entities and requested sections, tickets are
//! scored per section by embedding similarity, and the requested sections
//! are read off the best tickets' trees. A chunk-based text retriever serves
//! as the fallback and as the control system in evaluation.

pub mod adapter;
pub mod baseline;
pub mod builder;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod parser;
pub mod query;
pub mod snapshot;
pub mod synthetic;
pub mod template;

pub use adapter::{AdapterError, AdapterHandle, StubAdapter, TextGenerationAdapter};
pub use baseline::{build_baseline, BaselineIndex, ChunkHit};
pub use builder::{build_explicit_edges, build_graph, build_implicit_edges, GraphBuild, GraphBuildConfig};
pub use embedding::{ChunkParams, Embedder, HashEmbedder, VectorIndex};
pub use error::{Error, Result};
pub use eval::run::{run_eval, EvalRecord, EvalReport, EvalSettings, MetricReport};
pub use model::{
    validate_graph, EdgeKind, InterTicketEdge, KnowledgeGraph, NodeId, SectionNode, TicketTree,
};
pub use parser::{parse_ticket, ParseOutcome, RawTicket};
pub use query::engine::{Answer, AnswerMode, Engine, EngineConfig};
pub use query::parse::{parse_query, QueryParse};
pub use query::plan::GraphQueryPlan;
pub use query::score::{score_tickets, ChunkAggregation, TicketScore};
pub use snapshot::{Snapshot, SnapshotConfig};
pub use template::{GraphTemplate, SectionSpec};
