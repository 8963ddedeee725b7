//! Explainable active-learning preference elicitation over binary item
//! feature vectors.

pub mod bench;
pub mod bundled;
pub mod corpus;
pub mod error;
pub mod explain;
pub mod feedback;
pub mod kmedoids;
pub mod labelspread;
pub mod prefmodel;
pub mod sampler;
pub mod session;
pub mod similarity;
pub mod synthuser;

pub use error::{Error, Result};
