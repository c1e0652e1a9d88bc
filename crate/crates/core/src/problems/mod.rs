//! Built-in problem instances.

pub mod dataset;
pub mod hyperweight;
pub mod quadratic;

pub use dataset::{load_libsvm, parse_libsvm, synthetic, Corruption, Dataset, SparseRow, Split};
pub use hyperweight::{make_hyperweight, HyperWeightMbbo, HyperWeightOptions};
pub use quadratic::{make_quadratic, QuadraticMbbo, QuadraticOptions};
