pub mod array;
pub mod net;
pub mod optim;
pub mod reg;
pub mod sampling;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod tape;
pub mod tasks;
pub mod varlab;

pub use array::DenseArray;
pub use error::{Error, Result};
pub use tape::{Gradients, NodeId, Tape};
