//! Acceptance criteria for the reachability pipeline; see `tests/acceptance.rs`.
