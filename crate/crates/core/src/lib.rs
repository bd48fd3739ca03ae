//! Causal (non)separability of quantum process matrices: construction,
//! witness search by semidefinite programming, and certificate checking.

pub mod conic_solver;
pub mod process_space;
pub mod switch_tasks;
pub mod tensor_ops;
pub mod witness_engine;
