//! Array file I/O and the manifest that ties a layer's weights to sample
//! activations and labels.

mod manifest;
mod matrix;
pub mod npy;

pub use manifest::{load_dump, load_dump_with, ActivationDump, Manifest, Strictness};
pub use matrix::DenseMatrix;
pub use npy::{read_array, write_array, write_vector, Dtype};
