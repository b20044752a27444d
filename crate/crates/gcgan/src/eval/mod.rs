//! Eval (placeholder).
