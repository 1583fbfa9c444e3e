//! Programming-by-example synthesis for a small typed functional list DSL.
//!
//! The pipeline has three stages, mirrored by the CLI in `listsynth-cli`:
//! corpus generation ([`generator`]), statement-prediction training
//! ([`model`]) and neurally-guided program search ([`search`]). The DSL
//! itself ([`dsl`], [`interpreter`]) is a constant-free language over
//! integers and integer lists, extensible with host functions such as the
//! digit classifier in [`extern_digits`].

pub mod constraints;
pub mod dsl;
pub mod extern_digits;
pub mod generator;
pub mod interpreter;
pub mod model;
pub mod search;

pub use dsl::{
    FunctionRegistry, LambdaOp, Operand, Program, Statement, TypeTag, Value, INT_MAX, INT_MIN,
    MAX_LIST_LEN,
};
pub use interpreter::{check_solution, run_program, IOPair};
