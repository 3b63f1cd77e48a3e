//! Shared plumbing: deterministic random streams, the NTC1 tensor container,
//! float image buffers and the OBJ / PPM readers and writers.

mod image;
mod obj;
mod rng;
mod tensor;

pub use image::{write_ppm, ImageBuffer};
pub use obj::{read_obj, read_obj_str, write_obj};
pub use rng::{gaussian, RngStream};
pub use tensor::{read_tensor, write_tensor, Checkpoint, DType, TensorBlob};
