//! Experiment loop (stub).
