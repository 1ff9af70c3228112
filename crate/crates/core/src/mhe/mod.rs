//! Leveled approximate homomorphic arithmetic with multiparty keys.

pub mod encoding;
pub mod error;
pub mod params;
pub mod ring;
pub mod ciphertext;
pub mod eval;
pub mod keys;
pub mod protocols;
pub mod transform;
pub mod ledger;
pub mod serialize;
pub mod backend;
pub mod real;
pub mod reference;
