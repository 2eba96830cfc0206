pub mod correspondence;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod image_io;
pub mod kernels;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use graph::{Graph, ReduceKind, Var};
pub use image_io::Image;
pub use nn::{Decoder, Encoder, WeightStore};
pub use pipeline::{run_dtp, run_to_dir, Ablations, DtpConfig, IterationReport, RunOutput, WeightsSource};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
