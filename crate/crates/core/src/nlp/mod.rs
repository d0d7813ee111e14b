//! Polynomial nonlinear programs and an interior-point solver for them.

mod ipm;
mod poly;
mod problem;

pub use ipm::{solve_nlp, NlpOptions, NlpSolution, NlpStatus, Start};
pub use poly::{Monomial, Poly, MAX_DEGREE};
pub use problem::{Equality, Inequality, ProblemSpec, SparseRows, Variable};
