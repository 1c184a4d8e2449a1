//! Mismatched-decoding laboratory: converse bounds on the mismatch capacity,
//! sphere-packing exponents, maximal-set membership checks, method-of-types
//! utilities and a decoding simulator for discrete memoryless channels.

pub mod bounds;
pub mod error;
pub mod exponent;
pub mod lemmas;
pub mod lp;
pub mod maximality;
pub mod prob;
pub mod registry;
pub mod search;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
