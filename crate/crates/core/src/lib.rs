//! Numerical toolkit for the linear Poincaré flow and singular hyperbolicity.

pub mod chain;
pub mod error;
pub mod field;
pub mod linalg;
pub mod ode;
pub mod orbit;
pub mod poincare;
pub mod singularity;
pub mod splitting;
pub mod verdict;

pub use error::{Error, Result};
pub use field::{Matrix, Vector, VectorFieldSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/poincare.md")]
    mod poincare {}
    #[doc = include_str!("../../../book/src/singularities.md")]
    mod singularities {}
    #[doc = include_str!("../../../book/src/splitting.md")]
    mod splitting {}
    #[doc = include_str!("../../../book/src/verdicts.md")]
    mod verdicts {}
    #[doc = include_str!("../../../book/src/chain.md")]
    mod chain {}
}
