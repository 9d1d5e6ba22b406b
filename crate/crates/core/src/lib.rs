//! Wavelength-conditioned dynamic patch embedding for multispectral imagery,
//! with masked-autoencoder pretraining, feature distillation and linear
//! probing, built on a small reverse-mode autodiff engine.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hypernet;
pub mod losses;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use hypernet::{WavelengthList, RGB_WAVELENGTHS, SAR_WAVELENGTH};
pub use model::{DofaModel, MaskPlan, ModelConfig};
pub use tensor::Tensor;
