//! Acceptance checks for `mvfuse-core` live in `tests/acceptance.rs`; run
//! them with `cargo test -p mvfuse-validation --test acceptance`.
