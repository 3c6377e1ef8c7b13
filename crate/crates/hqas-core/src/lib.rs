//! Exact-arithmetic construction of higher quantum Airy structures from
//! W(gl_r)-algebra mode formulas and from local spectral curve data, the
//! associated topological recursion producing exact rational coefficients
//! F_{g,n}, and cross-checking oracles (root-of-unity identities, chi <= 2
//! closed forms, a residue-based recursion on small curves, and a
//! Givental-style table transform).

pub mod arith;
pub mod psi;
pub mod diffop;
pub mod engine;
pub mod wgl;
pub mod curve;
