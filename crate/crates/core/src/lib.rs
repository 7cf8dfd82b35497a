pub mod diagnostics;
pub mod field;
pub mod mixture;
pub mod particles;
pub mod pde;
pub mod potential;
pub(crate) mod quadrature;
