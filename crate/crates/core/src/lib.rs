pub mod cli;
pub mod error;
pub mod linalg;
pub mod operators;
pub mod pearcey;
pub mod quadrature;
pub mod rhp;
pub mod verify;
