//! Embedding (placeholder).
