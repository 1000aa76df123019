//! Lower bounds on asymptotic key rates of QKD protocols with characterized
//! devices, from a block moment-matrix SDP for the conditional entropy.

pub mod bases;
pub mod bayes;
pub mod config;
pub mod entropysdp;
pub mod error;
pub mod qcore;
pub mod quadrature;

pub use config::Tolerances;
pub use error::{QkdError, Result};
