//! Acceptance checks for `mixdens` live in `tests/acceptance.rs`; run them with `cargo test -p mixdens-validation`.
