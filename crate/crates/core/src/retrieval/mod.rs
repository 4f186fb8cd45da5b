//! Retrieve-then-rerank baselines: BM25 over context windows, embedding
//! cosine reranking and a trained cross-matching reranker.

mod bm25;
mod embedding;
mod matcher;

pub use bm25::{bm25_retrieve, context_window, index_similes, Hit, InvertedIndex, Posting, B, HALF_WINDOW, K1};
pub use embedding::{cbow_rerank, cosine, train_cbow, CbowConfig, EmbeddingSource, EmbeddingTable, Ranked};
pub use matcher::{match_rerank, match_rerank_train, sample_negatives, MatchTrainConfig, Matcher};
