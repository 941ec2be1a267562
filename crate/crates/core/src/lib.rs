pub mod basis;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod kl;
pub mod linalg;
pub mod pressure;
pub mod quadrature;
pub mod reduced;
pub mod tensors;
pub mod transport;

pub use basis::{MwBasis, MwBasisSpec};
pub use error::{Result, SgError};
pub use tensors::ProductTensors;
pub use transport::{FluxMode, FluxParams};
