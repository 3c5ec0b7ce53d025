//! Dense linear algebra, seeded randomness, a symmetric eigensolver and a
//! reverse-mode gradient tape.

mod eig;
mod gradcheck;
mod matrix;
mod rng;
mod tape;

pub use eig::{sym_eig, SymEig};
pub use gradcheck::{check_gradients, GradCheck};
pub use matrix::{sigmoid, softmax, Matrix};
pub use rng::{derive_seed, Rng};
pub use tape::{Gradients, Tape, Var};
