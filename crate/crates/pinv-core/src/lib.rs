//! Data-driven synthesis of expectation invariants for probabilistic loops.
//!
//! A loop `while G { P }` is sampled from random initial states, a model tree
//! is fitted to the observed expected values, the tree is turned into a
//! candidate expectation and the candidate is checked symbolically against the
//! weakest pre-expectation calculus. Refuted candidates yield counterexample
//! states that are fed back into the data set.
//!
//! The crate is `no_std` and only needs an allocator. File handling, the
//! command-line front end and the benchmark corpus live in the `pinv` crate.
#![no_std]
#![cfg_attr(test, allow(unused_imports))]
extern crate alloc;

pub mod ast;
pub mod cegis;
pub mod eval;
pub mod exec;
pub mod features;
pub mod linalg;
pub mod linear;
pub mod model_tree;
pub mod normalize;
pub mod num;
pub mod parse;
pub mod poly;
pub mod print;
pub mod rng;
pub mod sampler;
pub mod sign;
pub mod soft_tree;
pub mod verify;
pub mod wpe;

pub use ast::{BoolExpr, CmpOp, Cmd, Dist, Expr, Program, State, VarId, VarType, Vars};
pub use parse::{parse_bool_expr, parse_expr, parse_program, ParseError};
pub use rng::RandomStream;
