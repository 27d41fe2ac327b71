pub mod error;
pub mod experiments;
pub mod feature_lab;
pub mod hermite;
pub mod linalg;
pub mod linear_lab;
pub mod mp_stieltjes;
pub mod seeding;
pub mod theory;

pub use error::{Error, Result};
