pub mod agent;
pub mod asem;
pub mod category;
pub mod channel;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod reward;
pub mod router;
pub mod tasks;

pub use category::Category;
pub use error::{Result, SimError};
