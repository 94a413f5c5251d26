//! Holds the `acceptance` test target; run it with
//! `cargo test -p lqg-rl-validation --test acceptance`.
