//! Holds the `acceptance` test target; see `tests/acceptance.rs`.
//!
//! Run it alone with `cargo test -p survsdr-validation --test acceptance`.
//! Set `ACCEPTANCE_ONLY=2,8` to run a subset of the criteria.
