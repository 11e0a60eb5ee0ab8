pub mod case_study;
pub mod ensemble;
pub mod error;
pub mod figure;
pub mod io;
pub mod linalg;
pub mod ocp;
pub mod polytope;
pub mod qp;
pub mod sim;
pub mod template;
pub mod tutorial;

pub use error::{Error, Result};
