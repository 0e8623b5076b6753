//! Caption files, feature grids, splits and batching.

mod batches;
pub mod capf;
mod captions;
mod dataset;
mod split;

pub use batches::*;
pub use captions::*;
pub use dataset::*;
pub use split::*;
