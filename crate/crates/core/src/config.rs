//! On-disk experiment configuration (stub, filled in with the harness).
