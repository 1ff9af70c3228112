//! Number-theoretic building blocks.

pub mod bigconv;
pub mod modarith;
pub mod ntt;
pub mod sampling;
