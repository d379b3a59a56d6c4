//! Invariant suite (stub).
