//! Holds the `acceptance` test target; run it with
//! `cargo test -p mobjam-validation --test acceptance`.
